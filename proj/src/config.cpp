#include "mmcda/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace mmcda {

using nlohmann::json;

namespace {

// Reads keys from one JSON object and complains about any it did not consume.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }
    ~Section() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError("unknown config key '" + path_ + "." + k + "'");
    }

    template <class T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(path_ + "." + key + ": " + e.what());
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string path(const char* key) const { return path_ + "." + key; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

const char* to_string(EncoderOrder o) { return o == EncoderOrder::attention_first ? "attention_first" : "gru_first"; }
EncoderOrder order_from(const std::string& s) {
    if (s == "attention_first") return EncoderOrder::attention_first;
    if (s == "gru_first") return EncoderOrder::gru_first;
    throw ConfigError("encoder order must be attention_first or gru_first, got '" + s + "'");
}
const char* to_string(CosineMode m) { return m == CosineMode::signed_cosine ? "signed" : "absolute"; }
CosineMode cosine_from(const std::string& s) {
    if (s == "signed") return CosineMode::signed_cosine;
    if (s == "absolute") return CosineMode::absolute;
    throw ConfigError("cosine must be signed or absolute, got '" + s + "'");
}
const char* to_string(MmdVariant v) { return v == MmdVariant::standard ? "standard" : "additive"; }
MmdVariant variant_from(const std::string& s) {
    if (s == "standard") return MmdVariant::standard;
    if (s == "additive") return MmdVariant::additive;
    throw ConfigError("mmd_variant must be standard or additive, got '" + s + "'");
}

json model_json(const ModelConfig& m) {
    return {{"raw_dim", m.raw_dim},     {"vocab_size", m.vocab_size},
            {"embed_dim", m.embed_dim}, {"model_dim", m.model_dim},
            {"hidden", m.hidden},       {"heads", m.heads},
            {"video_order", to_string(m.video_order)}, {"query_order", to_string(m.query_order)},
            {"cosine", to_string(m.cosine)}};
}

void read_model(const json& j, ModelConfig& m) {
    Section s(j, "model");
    s.read("raw_dim", m.raw_dim);
    s.read("vocab_size", m.vocab_size);
    s.read("embed_dim", m.embed_dim);
    s.read("model_dim", m.model_dim);
    s.read("hidden", m.hidden);
    s.read("heads", m.heads);
    std::string text = to_string(m.video_order);
    s.read("video_order", text);
    m.video_order = order_from(text);
    text = to_string(m.query_order);
    s.read("query_order", text);
    m.query_order = order_from(text);
    text = to_string(m.cosine);
    s.read("cosine", text);
    m.cosine = cosine_from(text);
}

const char* to_string(SourcePooling p) { return p == SourcePooling::sequence ? "sequence" : "moment"; }
SourcePooling pooling_from(const std::string& s) {
    if (s == "sequence") return SourcePooling::sequence;
    if (s == "moment") return SourcePooling::moment;
    throw ConfigError("source_pooling must be sequence or moment, got '" + s + "'");
}

json train_json(const TrainConfig& t) {
    return {{"learning_rate", t.learning_rate}, {"epochs", t.epochs},
            {"batch_size", t.batch_size},       {"clip_norm", t.clip_norm},
            {"patience", t.patience},           {"validation_fraction", t.validation_fraction},
            {"carry_optimizer_state", t.carry_optimizer_state}, {"source_pooling", to_string(t.source_pooling)},
            {"divergence_limit", t.divergence_limit}};
}

void read_train(const json& j, const std::string& name, TrainConfig& t) {
    Section s(j, name);
    s.read("learning_rate", t.learning_rate);
    s.read("epochs", t.epochs);
    s.read("batch_size", t.batch_size);
    s.read("clip_norm", t.clip_norm);
    s.read("patience", t.patience);
    s.read("validation_fraction", t.validation_fraction);
    s.read("carry_optimizer_state", t.carry_optimizer_state);
    s.read("divergence_limit", t.divergence_limit);
    std::string pooling = to_string(t.source_pooling);
    s.read("source_pooling", pooling);
    t.source_pooling = pooling_from(pooling);
}

json loss_json(const LossWeights& w) {
    json bw = w.bandwidth.policy == Bandwidth::Policy::median ? json("median") : json(w.bandwidth.value);
    return {{"gamma1", w.gamma1},          {"gamma2", w.gamma2},
            {"gamma3", w.gamma3},          {"margin_source", w.margin_source},
            {"margin_target", w.margin_target}, {"mmd_variant", to_string(w.mmd_variant)},
            {"bandwidth", bw}};
}

void read_loss(const json& j, LossWeights& w) {
    Section s(j, "loss");
    s.read("gamma1", w.gamma1);
    s.read("gamma2", w.gamma2);
    s.read("gamma3", w.gamma3);
    s.read("margin_source", w.margin_source);
    s.read("margin_target", w.margin_target);
    std::string text = to_string(w.mmd_variant);
    s.read("mmd_variant", text);
    w.mmd_variant = variant_from(text);
    if (const json* bw = s.child("bandwidth")) {
        if (bw->is_string() && bw->get<std::string>() == "median")
            w.bandwidth = Bandwidth{};
        else if (bw->is_number())
            w.bandwidth = Bandwidth::fixed(bw->get<double>());
        else
            throw ConfigError("loss.bandwidth must be \"median\" or a positive number");
    }
}

json profile_json(const DomainProfile& p) {
    return {{"count", p.count},           {"t_min", p.t_min},   {"t_max", p.t_max},
            {"moment_min", p.moment_min}, {"moment_max", p.moment_max},
            {"n_min", p.n_min},           {"n_max", p.n_max}};
}

void read_profile(const json& j, const std::string& name, DomainProfile& p) {
    Section s(j, name);
    s.read("count", p.count);
    s.read("t_min", p.t_min);
    s.read("t_max", p.t_max);
    s.read("moment_min", p.moment_min);
    s.read("moment_max", p.moment_max);
    s.read("n_min", p.n_min);
    s.read("n_max", p.n_max);
}

}  // namespace

GenConfig RunConfig::default_generate() {
    GenConfig g;
    g.source = profile_preset("activity");
    g.target = profile_preset("charades");
    g.shift.translation = 3.0;
    g.signal_scale = 0.5;
    return g;
}

TrainConfig RunConfig::default_training() {
    TrainConfig t;
    t.source_pooling = SourcePooling::moment;
    return t;
}

void RunConfig::set_seed(std::uint64_t seed) {
    model.seed = seed;
    pretrain.seed = seed;
    train.seed = seed;
    generate.seed = seed;
}

void RunConfig::validate() const {
    if (model.raw_dim < 1 || model.embed_dim < 1 || model.model_dim < 1 || model.hidden < 1 || model.heads < 1 ||
        model.vocab_size < 1)
        throw ConfigError("model dimensions must be positive");
    if (model.model_dim % 2 != 0) throw ConfigError("model.model_dim must be even");
    if (model.model_dim % model.heads != 0) throw ConfigError("model.heads must divide model.model_dim");
    pretrain.validate();
    train.validate();
    generate.validate();
    if (inference.threshold && (!(*inference.threshold > 0.0) || *inference.threshold > 1.0))
        throw ConfigError("inference.threshold must lie in (0, 1]");
    if (inference.top_n.empty() || inference.iou_thresholds.empty())
        throw ConfigError("inference.top_n and inference.iou must be nonempty");
    for (Index n : inference.top_n)
        if (n < 1) throw ConfigError("inference.top_n entries must be >= 1");
    profile_preset(source_profile);
    profile_preset(target_profile);
}

json RunConfig::to_json() const {
    json inf = {{"top_n", inference.top_n}, {"iou", inference.iou_thresholds}};
    inf["threshold"] = inference.threshold ? json(*inference.threshold) : json(nullptr);
    const auto& g = generate;
    return {{"seed", model.seed},
            {"model", model_json(model)},
            {"pretrain", train_json(pretrain)},
            {"train", train_json(train)},
            {"loss", loss_json(train.weights)},
            {"generate",
             {{"source_profile", source_profile},
              {"target_profile", target_profile},
              {"source", profile_json(g.source)},
              {"target", profile_json(g.target)},
              {"raw_dim", g.raw_dim},
              {"event_dim", g.event_dim},
              {"events", g.events},
              {"tokens_per_event", g.tokens_per_event},
              {"filler_tokens", g.filler_tokens},
              {"event_token_prob", g.event_token_prob},
              {"noise", g.noise},
              {"signal_scale", g.signal_scale},
              {"shift",
               {{"translation", g.shift.translation},
                {"rotation_deg", g.shift.rotation_deg},
                {"scale_spread", g.shift.scale_spread}}}}},
            {"inference", inf}};
}

RunConfig RunConfig::from_json(const json& j) {
    RunConfig rc;
    Section top(j, "config");
    std::uint64_t seed = 0;
    top.read("seed", seed);
    if (const json* m = top.child("model")) read_model(*m, rc.model);
    if (const json* t = top.child("pretrain")) read_train(*t, "pretrain", rc.pretrain);
    if (const json* t = top.child("train")) read_train(*t, "train", rc.train);
    if (const json* l = top.child("loss")) read_loss(*l, rc.train.weights);
    rc.pretrain.weights = rc.train.weights;

    if (const json* gj = top.child("generate")) {
        Section g(*gj, "generate");
        g.read("source_profile", rc.source_profile);
        g.read("target_profile", rc.target_profile);
        auto& gen = rc.generate;
        try {
            gen.source = profile_preset(rc.source_profile);
            gen.target = profile_preset(rc.target_profile);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("generate: ") + e.what());
        }
        if (const json* p = g.child("source")) read_profile(*p, "generate.source", gen.source);
        if (const json* p = g.child("target")) read_profile(*p, "generate.target", gen.target);
        g.read("raw_dim", gen.raw_dim);
        g.read("event_dim", gen.event_dim);
        g.read("events", gen.events);
        g.read("tokens_per_event", gen.tokens_per_event);
        g.read("filler_tokens", gen.filler_tokens);
        g.read("event_token_prob", gen.event_token_prob);
        g.read("noise", gen.noise);
        g.read("signal_scale", gen.signal_scale);
        if (const json* sj = g.child("shift")) {
            Section sh(*sj, "generate.shift");
            sh.read("translation", gen.shift.translation);
            sh.read("rotation_deg", gen.shift.rotation_deg);
            sh.read("scale_spread", gen.shift.scale_spread);
        }
    }

    if (const json* ij = top.child("inference")) {
        Section s(*ij, "inference");
        if (const json* th = s.child("threshold"); th && !th->is_null()) {
            if (!th->is_number()) throw ConfigError("inference.threshold must be a number");
            rc.inference.threshold = th->get<double>();
        }
        s.read("top_n", rc.inference.top_n);
        s.read("iou", rc.inference.iou_thresholds);
    }
    rc.set_seed(seed);
    rc.validate();
    return rc;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

namespace {
template <class T>
std::vector<T> parse_list(const std::string& text) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        T v{};
        try {
            if constexpr (std::is_floating_point_v<T>)
                v = std::stod(item, &used);
            else
                v = static_cast<T>(std::stol(item, &used));
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size()) throw ConfigError("cannot parse list entry '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError("empty list");
    return out;
}
}  // namespace

std::vector<double> parse_real_list(const std::string& text) { return parse_list<double>(text); }
std::vector<Index> parse_count_list(const std::string& text) { return parse_list<Index>(text); }

}  // namespace mmcda
