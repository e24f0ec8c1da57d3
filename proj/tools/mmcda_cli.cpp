// mmcda command-line entry point.
//
// Exit codes: 0 ok, 1 grad-check failure, 2 usage/config error, 3 I/O or
// malformed input, 4 numeric failure during training, 5 dataset without
// boundaries given to eval.

#include "mmcda/config.hpp"
#include "mmcda/evaluation.hpp"
#include "mmcda/gradsuite.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstring>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmcda;

namespace {

enum Exit : int { ok = 0, check_failed = 1, usage = 2, io = 3, numeric = 4, unlabeled = 5 };

struct ExitError : std::runtime_error {
    int code;
    ExitError(int c, const std::string& m) : std::runtime_error(m), code(c) {}
};

enum class Verbosity { quiet, info, debug };

Verbosity verbosity() {
    const char* v = std::getenv("MMCDA_LOG");
    if (!v) return Verbosity::info;
    const std::string s = v;
    if (s == "quiet" || s == "0") return Verbosity::quiet;
    if (s == "debug" || s == "2") return Verbosity::debug;
    return Verbosity::info;
}

void info(const std::string& msg) {
    if (verbosity() != Verbosity::quiet) std::cerr << msg << '\n';
}

json read_json_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config '" + path + "'");
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

// Config file with command-line overrides merged in before validation.
RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed,
                      const std::function<void(json&)>& override_fn = {}) {
    json j = read_json_file(path);
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    if (seed) j["seed"] = *seed;
    if (override_fn) override_fn(j);
    return RunConfig::from_json(j);
}

DomainDataset load_data(const std::string& dir) {
    try {
        return load_dataset(dir);
    } catch (const IoError&) {
        throw;
    } catch (const std::exception& e) {
        throw ExitError(io, "invalid dataset '" + dir + "': " + e.what());
    }
}

ModelParams load_model(const std::string& path) {
    try {
        return load_checkpoint(path);
    } catch (const IoError&) {
        throw;
    } catch (const std::exception& e) {
        throw ExitError(io, "invalid checkpoint '" + path + "': " + e.what());
    }
}

fs::path log_path(const std::string& model_path, const std::string& suffix) {
    fs::path p = model_path;
    p.replace_extension(suffix);
    return p;
}

EpochCallback progress(const std::string& stage) {
    return [stage](const EpochLog& e, const ModelParams&) {
        if (verbosity() == Verbosity::quiet) return;
        char buf[256];
        std::snprintf(buf, sizeof buf, "[%s] epoch %3ld  L_final %.5f  L_SL %.5f  L_DA %.5f  val %.5f  lr %.2e",
                      stage.c_str(), static_cast<long>(e.epoch), e.final_loss, e.components.supervised,
                      e.components.domain, e.validation, e.lr);
        std::cerr << buf << '\n';
    };
}

ModelParams fresh_model(const RunConfig& rc, const DomainDataset& source) {
    ModelConfig mc = rc.model;
    mc.raw_dim = source.dim;
    if (source.vocab_size > 0) mc.vocab_size = source.vocab_size;
    return ModelParams::init(mc);
}

void check_compatible(const ModelParams& m, const DomainDataset& d, const std::string& what) {
    if (m.config.raw_dim != d.dim)
        throw ExitError(usage, what + ": feature dim " + std::to_string(d.dim) + " does not match the model's " +
                                   std::to_string(m.config.raw_dim));
}

// ---- commands -----------------------------------------------------------

struct GenArgs {
    std::string out, profile, target_profile, config;
    std::uint64_t seed = 0;
};

int gen_data(const GenArgs& a) {
    const RunConfig rc = load_config(a.config, a.seed, [&](json& j) {
        json& g = j["generate"];
        if (!g.is_object()) g = json::object();
        g["source_profile"] = a.profile;
        if (!a.target_profile.empty()) g["target_profile"] = a.target_profile;
    });
    const GeneratedPair data = generate(rc.generate);
    const fs::path out = a.out;
    save_dataset(data.source, out / "source");
    save_dataset(data.target, out / "target");
    std::cout << "wrote " << data.source.samples.size() << " source (" << rc.source_profile << ") and "
              << data.target.samples.size() << " target (" << rc.target_profile << ") samples to " << out.string()
              << " [dim " << data.source.dim << ", vocab " << data.source.vocab_size << ", seed " << a.seed
              << "]\n";
    return ok;
}

struct TrainArgs {
    std::string source, target, out, config, init;
    std::uint64_t seed = 0;
    std::vector<std::string> ablate;
};

int pretrain_cmd(const TrainArgs& a) {
    const RunConfig rc = load_config(a.config, a.seed);
    const DomainDataset source = load_data(a.source);
    if (!source.fully_annotated()) throw ExitError(usage, "pretrain: source dataset has unannotated samples");
    const ModelParams init = fresh_model(rc, source);
    const TrainResult r = pretrain(source, init, rc.pretrain, progress("pretrain"));
    save_checkpoint(r.params, a.out);
    write_log_csv(r.log, log_path(a.out, ".csv"));
    std::cout << "pretrained " << r.log.size() << " epochs (best " << r.best_epoch << "), checkpoint " << a.out
              << "\n";
    return ok;
}

int train_cmd(const TrainArgs& a) {
    RunConfig rc = load_config(a.config, a.seed);
    for (const auto& what : a.ablate) {
        if (what == "DA") rc.train.weights.gamma1 = 0.0;
        else if (what == "MA") rc.train.weights.gamma2 = 0.0;
        else if (what == "SA") rc.train.weights.gamma3 = 0.0;
        else throw ExitError(usage, "--ablate expects DA, MA or SA, got '" + what + "'");
    }
    const DomainDataset source = load_data(a.source);
    const DomainDataset target = load_data(a.target);
    if (source.dim != target.dim) throw ExitError(usage, "train: source and target feature dims differ");
    if (!source.fully_annotated()) throw ExitError(usage, "train: source dataset has unannotated samples");

    std::optional<ModelParams> init;
    std::optional<AdamState> carried;
    if (!a.init.empty()) {
        init = load_model(a.init);
        check_compatible(*init, source, "train");
    } else {
        info("no --init given; running stage 1 first");
        TrainResult stage1 = pretrain(source, fresh_model(rc, source), rc.pretrain, progress("pretrain"));
        write_log_csv(stage1.log, log_path(a.out, ".pretrain.csv"));
        init = stage1.params;
        carried = std::move(stage1.optimizer);
    }
    const AdamState* carry = rc.train.carry_optimizer_state && carried ? &*carried : nullptr;
    if (rc.train.carry_optimizer_state && !carried)
        info("carry_optimizer_state ignored: optimizer moments are only available when stage 1 runs in-process");
    const TrainResult r = main_train(source, strip_labels(target), *init, rc.train, carry, progress("train"));
    save_checkpoint(r.params, a.out);
    write_log_csv(r.log, log_path(a.out, ".csv"));
    std::cout << "trained " << r.log.size() << " epochs (best " << r.best_epoch << "), checkpoint " << a.out << "\n";
    return ok;
}

struct EvalArgs {
    std::string model, data, iou, topn, report, csv, config, profile;
    std::optional<double> threshold;
};

double pick_threshold(const std::optional<double>& flag, const RunConfig& rc, const std::string& profile) {
    if (flag) return *flag;
    if (rc.inference.threshold) return *rc.inference.threshold;
    if (!profile.empty()) return default_threshold(profile);
    return 0.8;
}

int eval_cmd(const EvalArgs& a) {
    const RunConfig rc = load_config(a.config, std::nullopt);
    const auto ious = a.iou.empty() ? rc.inference.iou_thresholds : parse_real_list(a.iou);
    const auto topn = a.topn.empty() ? rc.inference.top_n : parse_count_list(a.topn);
    for (Index n : topn)
        if (n < 1) throw ConfigError("--topn entries must be >= 1");
    const double threshold = pick_threshold(a.threshold, rc, a.profile);
    if (!(threshold > 0.0) || threshold > 1.0) throw ConfigError("--threshold must lie in (0, 1]");

    const ModelParams model = load_model(a.model);
    const DomainDataset data = load_data(a.data);
    check_compatible(model, data, "eval");
    if (!data.fully_annotated())
        throw ExitError(unlabeled, "eval: dataset '" + a.data + "' has samples without boundaries");

    const Evaluation ev = evaluate_model(model, data, threshold, topn, ious);
    std::cout << ev.report.table();
    if (!a.report.empty()) {
        std::ofstream out(a.report);
        if (!out) throw IoError("cannot write report '" + a.report + "'");
        out << ev.report.to_json().dump(2) << '\n';
        if (!out) throw IoError("failed writing '" + a.report + "'");
    }
    if (!a.csv.empty()) write_predictions_csv(ev, data, a.csv);
    return ok;
}

struct InferArgs {
    std::string model, data, sample, config, profile;
    std::optional<double> threshold;
};

int infer_cmd(const InferArgs& a) {
    const RunConfig rc = load_config(a.config, std::nullopt);
    const double threshold = pick_threshold(a.threshold, rc, a.profile);
    if (!(threshold > 0.0) || threshold > 1.0) throw ConfigError("--threshold must lie in (0, 1]");
    const ModelParams model = load_model(a.model);
    const DomainDataset data = load_data(a.data);
    check_compatible(model, data, "infer");
    bool found = false;
    for (const auto& s : data.samples) {
        if (!a.sample.empty() && s.id != a.sample) continue;
        found = true;
        const ScoreSequence scores = frame_scores(model, s.video, s.query);
        const MomentCandidate best = top_n_moments(scores, threshold, 1).front();
        json rec = {{"start", best.moment.start},
                    {"end", best.moment.end},
                    {"peak_score", best.peak_score},
                    {"threshold", threshold}};
        if (a.sample.empty()) rec["id"] = s.id;
        std::cout << rec.dump() << '\n';
    }
    if (!found) throw ExitError(usage, "infer: no sample '" + a.sample + "' in " + a.data);
    return ok;
}

struct GradArgs {
    std::uint64_t seed = 0;
    Index instances = 100;
    std::vector<std::string> cases;
    std::string corrupt;
};

int grad_check_cmd(const GradArgs& a) {
    if (!a.corrupt.empty()) testing_hooks::corrupt_gradient_of(a.corrupt);
    const GradSuiteReport r = run_grad_suite(a.seed, a.instances, 1e-5, a.cases);
    constexpr double tolerance = 1e-4;
    bool pass = true;
    char buf[256];
    for (const auto& e : r.entries) {
        const bool good = e.worst.max_rel_error <= tolerance;
        pass = pass && good;
        if (!good || verbosity() == Verbosity::debug) {
            std::snprintf(buf, sizeof buf, "%-24s max rel error %.3e  (seed %llu, input %zu, entry %ld: %.6e vs %.6e)%s",
                          e.name.c_str(), e.worst.max_rel_error, static_cast<unsigned long long>(e.worst_seed),
                          e.worst.worst_input, static_cast<long>(e.worst.worst_entry), e.worst.analytic,
                          e.worst.numeric, good ? "" : "  FAIL");
            if (e.redrawn > 0) std::snprintf(buf + std::strlen(buf), sizeof buf - std::strlen(buf), "  [%ld redrawn]", static_cast<long>(e.redrawn));
            std::cout << buf << '\n';
        }
    }
    const auto& w = r.worst();
    Index redrawn = 0;
    for (const auto& e : r.entries) redrawn += e.redrawn;
    std::snprintf(buf, sizeof buf, "%zu cases x %ld instances (%ld redrawn at kinks), worst: %s (%.3e)",
                  r.entries.size(), static_cast<long>(r.instances), static_cast<long>(redrawn), w.name.c_str(),
                  w.worst.max_rel_error);
    std::cout << buf << (pass ? "  PASS" : "  FAIL") << '\n';
    return pass ? ok : check_failed;
}

template <class F>
int guarded(F&& f) {
    try {
        return f();
    } catch (const ExitError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.code;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return usage;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return io;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return numeric;
    } catch (const DomainError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return numeric;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return io;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return usage;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-domain video moment retrieval: data generation, training, evaluation"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    GenArgs gen;
    auto* g = app.add_subcommand("gen-data", "Generate a seeded source/target benchmark");
    g->add_option("--out", gen.out, "Output directory (source/ and target/ are created)")->required();
    g->add_option("--profile", gen.profile, "Source profile")
        ->required()
        ->check(CLI::IsMember({"activity", "charades", "tacos"}));
    g->add_option("--target-profile", gen.target_profile, "Target profile (default from config: charades)")
        ->check(CLI::IsMember({"activity", "charades", "tacos"}));
    g->add_option("--seed", gen.seed, "Master seed")->required();
    g->add_option("--config", gen.config, "JSON run config");

    TrainArgs pre;
    auto* p = app.add_subcommand("pretrain", "Stage 1: supervised training on the source domain");
    p->add_option("--source", pre.source, "Annotated source dataset directory")->required();
    p->add_option("--out", pre.out, "Checkpoint path (JSON; weights go to the .bin sidecar)")->required();
    p->add_option("--config", pre.config, "JSON run config");
    p->add_option("--seed", pre.seed, "Seed")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Stage 2: adaptation with source and unlabeled target");
    t->add_option("--source", tr.source, "Annotated source dataset directory")->required();
    t->add_option("--target", tr.target, "Target dataset directory (boundaries are never read)")->required();
    t->add_option("--init", tr.init, "Stage-1 checkpoint; stage 1 runs first when omitted");
    t->add_option("--out", tr.out, "Checkpoint path")->required();
    t->add_option("--config", tr.config, "JSON run config");
    t->add_option("--seed", tr.seed, "Seed")->required();
    t->add_option("--ablate", tr.ablate, "Disable loss groups: DA, MA, SA")->delimiter(',');

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Score a checkpoint on an annotated dataset");
    e->add_option("--model", ev.model, "Checkpoint path")->required();
    e->add_option("--data", ev.data, "Dataset directory")->required();
    e->add_option("--iou", ev.iou, "IoU thresholds, comma separated (default 0.3,0.5,0.7)");
    e->add_option("--topn", ev.topn, "Top-n cut-offs, comma separated (default 1,5)");
    e->add_option("--threshold", ev.threshold, "Expansion threshold (default: config, then profile, then 0.8)");
    e->add_option("--profile", ev.profile, "Profile whose default threshold applies")
        ->check(CLI::IsMember({"activity", "charades", "tacos"}));
    e->add_option("--report", ev.report, "Write the metrics report JSON here");
    e->add_option("--csv", ev.csv, "Write per-sample predictions and IoU here");
    e->add_option("--config", ev.config, "JSON run config");

    InferArgs inf;
    auto* i = app.add_subcommand("infer", "Predict the top moment for dataset samples");
    i->add_option("--model", inf.model, "Checkpoint path")->required();
    i->add_option("--data", inf.data, "Dataset directory")->required();
    i->add_option("--sample", inf.sample, "Sample id (default: every sample, one JSON line each)");
    i->add_option("--threshold", inf.threshold, "Expansion threshold");
    i->add_option("--profile", inf.profile, "Profile whose default threshold applies")
        ->check(CLI::IsMember({"activity", "charades", "tacos"}));
    i->add_option("--config", inf.config, "JSON run config");

    GradArgs gc;
    auto* c = app.add_subcommand("grad-check", "Finite-difference check of every differentiable op and loss");
    c->add_option("--seed", gc.seed, "Seed")->required();
    c->add_option("--instances", gc.instances, "Random instances per case")->check(CLI::PositiveNumber);
    c->add_option("--case", gc.cases, "Restrict to named cases");
    c->add_option("--corrupt-op", gc.corrupt, "Test hook: scale the named op's input gradients")->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& h) {
        return app.exit(h);
    } catch (const CLI::CallForAllHelp& h) {
        return app.exit(h);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return usage;
    }

    if (*g) return guarded([&] { return gen_data(gen); });
    if (*p) return guarded([&] { return pretrain_cmd(pre); });
    if (*t) return guarded([&] { return train_cmd(tr); });
    if (*e) return guarded([&] { return eval_cmd(ev); });
    if (*i) return guarded([&] { return infer_cmd(inf); });
    if (*c) return guarded([&] { return grad_check_cmd(gc); });
    return usage;
}
