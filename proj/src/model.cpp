#include "mmcda/model.hpp"

#include <json.hpp>

#include <fstream>

namespace mmcda {

namespace fs = std::filesystem;
using nlohmann::json;

ModelParams ModelParams::init(const ModelConfig& c) {
    if (c.model_dim < 2 || c.hidden < 1 || c.heads < 1) throw ConfigError("model: invalid dimensions");
    ParamInit init(c.seed);
    ModelParams p;
    p.config = c;
    p.video_encoder = EncoderParams::init({c.raw_dim, c.model_dim, c.hidden, c.heads, 0, c.video_order}, init);
    p.query_encoder =
        EncoderParams::init({c.embed_dim, c.model_dim, c.hidden, c.heads, c.vocab_size, c.query_order}, init);
    p.fusion = FusionParams::init(c.model_dim, init);
    const auto d = static_cast<double>(c.model_dim);
    p.target_projection = {init.uniform(c.model_dim, c.model_dim, d), init.uniform(c.model_dim, c.model_dim, d)};
    p.source_projection = {init.uniform(c.model_dim, c.model_dim, d), init.uniform(c.model_dim, c.model_dim, d)};
    return p;
}

NamedParams ModelParams::parameters() const {
    NamedParams out;
    video_encoder.collect("video_encoder", out);
    query_encoder.collect("query_encoder", out);
    fusion.collect("fusion", out);
    out.emplace_back("projection.target_video", target_projection.video);
    out.emplace_back("projection.target_query", target_projection.query);
    out.emplace_back("projection.source_video", source_projection.video);
    out.emplace_back("projection.source_query", source_projection.query);
    return out;
}

Index ModelParams::parameter_count() const {
    Index n = 0;
    for (const auto& [name, v] : parameters()) n += v.value().size();
    return n;
}

Eigen::VectorXd ModelParams::flatten() const {
    Eigen::VectorXd flat(parameter_count());
    Index at = 0;
    for (const auto& [name, v] : parameters()) {
        const Matrix& m = v.value();
        std::copy(m.data(), m.data() + m.size(), flat.data() + at);
        at += m.size();
    }
    return flat;
}

void ModelParams::assign(const Eigen::VectorXd& flat) {
    if (flat.size() != parameter_count())
        throw ShapeError("assign: " + std::to_string(flat.size()) + " values for " +
                         std::to_string(parameter_count()) + " parameters");
    Index at = 0;
    for (auto& [name, v] : parameters()) {
        Matrix m(v.rows(), v.cols());
        std::copy(flat.data() + at, flat.data() + at + m.size(), m.data());
        v.set_value(m);
        at += m.size();
    }
}

Eigen::VectorXd ModelParams::gradient() const {
    Eigen::VectorXd flat(parameter_count());
    Index at = 0;
    for (const auto& [name, v] : parameters()) {
        const Matrix g = v.grad();
        std::copy(g.data(), g.data() + g.size(), flat.data() + at);
        at += g.size();
    }
    return flat;
}

void ModelParams::zero_grad() const {
    for (auto [name, v] : parameters()) v.zero_grad();
}

ModelParams ModelParams::clone() const {
    ModelParams copy = init(config);
    copy.assign(flatten());
    return copy;
}

EncodedPair encode_pair(const ModelParams& params, const FeatureSequence& video, std::span<const int> query) {
    EncodedPair e;
    e.video = encode_video(Var::constant(video.values()), params.video_encoder);
    e.query = encode_query(query, params.query_encoder);
    e.fused = cross_modal_fuse(e.video, e.query, params.fusion, params.config.cosine);
    return e;
}

// ---- checkpoints -------------------------------------------------------------

namespace {

const char* order_name(EncoderOrder o) { return o == EncoderOrder::attention_first ? "attention_first" : "gru_first"; }

EncoderOrder order_from(const std::string& s) {
    if (s == "attention_first") return EncoderOrder::attention_first;
    if (s == "gru_first") return EncoderOrder::gru_first;
    throw ConfigError("unknown encoder order '" + s + "'");
}

json config_json(const ModelConfig& c) {
    return {{"raw_dim", c.raw_dim},
            {"vocab_size", c.vocab_size},
            {"embed_dim", c.embed_dim},
            {"model_dim", c.model_dim},
            {"hidden", c.hidden},
            {"heads", c.heads},
            {"video_order", order_name(c.video_order)},
            {"query_order", order_name(c.query_order)},
            {"cosine", c.cosine == CosineMode::absolute ? "absolute" : "signed"},
            {"seed", c.seed}};
}

ModelConfig config_from(const json& j) {
    ModelConfig c;
    c.raw_dim = j.at("raw_dim").get<Index>();
    c.vocab_size = j.at("vocab_size").get<Index>();
    c.embed_dim = j.at("embed_dim").get<Index>();
    c.model_dim = j.at("model_dim").get<Index>();
    c.hidden = j.at("hidden").get<Index>();
    c.heads = j.at("heads").get<Index>();
    c.video_order = order_from(j.at("video_order").get<std::string>());
    c.query_order = order_from(j.at("query_order").get<std::string>());
    const auto cos = j.at("cosine").get<std::string>();
    if (cos != "signed" && cos != "absolute") throw ConfigError("unknown cosine mode '" + cos + "'");
    c.cosine = cos == "absolute" ? CosineMode::absolute : CosineMode::signed_cosine;
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const fs::path& path) {
    fs::path bin = path;
    bin.replace_extension(".bin");
    json tensors = json::array();
    std::vector<float> values;
    for (const auto& [name, v] : params.parameters()) {
        tensors.push_back({{"name", name}, {"rows", v.rows()}, {"cols", v.cols()}});
        for (Index i = 0; i < v.value().size(); ++i) values.push_back(static_cast<float>(v.value().data()[i]));
    }
    const json manifest = {{"format", "mmcda-checkpoint"},
                           {"version", 1},
                           {"config", config_json(params.config)},
                           {"binary", bin.filename().string()},
                           {"dtype", "float32-le"},
                           {"tensors", std::move(tensors)}};
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create '" + path.parent_path().string() + "': " + ec.message());
    }
    {
        std::ofstream out(bin, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + bin.string() + "' for writing");
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(float)));
        if (!out) throw IoError("failed writing '" + bin.string() + "'");
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ModelParams load_checkpoint(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("malformed checkpoint '" + path.string() + "': " + e.what());
    }
    try {
        if (m.at("format").get<std::string>() != "mmcda-checkpoint")
            throw ConfigError("'" + path.string() + "' is not a checkpoint");
        ModelParams params = ModelParams::init(config_from(m.at("config")));
        const auto named = params.parameters();
        const auto& tensors = m.at("tensors");
        if (tensors.size() != named.size()) throw ConfigError("checkpoint tensor count does not match the model");
        for (std::size_t i = 0; i < named.size(); ++i) {
            const auto& t = tensors[i];
            if (t.at("name").get<std::string>() != named[i].first || t.at("rows").get<Index>() != named[i].second.rows() ||
                t.at("cols").get<Index>() != named[i].second.cols())
                throw ConfigError("checkpoint tensor " + std::to_string(i) + " does not match '" + named[i].first + "'");
        }
        const fs::path bin = path.parent_path() / m.at("binary").get<std::string>();
        std::ifstream bi(bin, std::ios::binary | std::ios::ate);
        if (!bi) throw IoError("cannot open '" + bin.string() + "'");
        const auto bytes = static_cast<std::size_t>(bi.tellg());
        const auto count = static_cast<std::size_t>(params.parameter_count());
        if (bytes != count * sizeof(float))
            throw ShapeError("'" + bin.string() + "' holds " + std::to_string(bytes) + " bytes, expected " +
                             std::to_string(count * sizeof(float)));
        bi.seekg(0);
        std::vector<float> buf(count);
        bi.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
        Eigen::VectorXd flat(static_cast<Index>(count));
        for (std::size_t i = 0; i < count; ++i) flat(static_cast<Index>(i)) = buf[i];
        params.assign(flat);
        return params;
    } catch (const json::exception& e) {
        throw ConfigError("malformed checkpoint '" + path.string() + "': " + e.what());
    }
}

}  // namespace mmcda
