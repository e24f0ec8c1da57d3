#include "mmcda/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>

namespace mmcda {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (ranking losses need negatives)");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0)
        throw ConfigError("validation_fraction must lie in [0, 1)");
    if (weights.gamma1 < 0.0 || weights.gamma2 < 0.0 || weights.gamma3 < 0.0)
        throw ConfigError("loss weights must be non-negative");
    if (weights.margin_source < 0.0 || weights.margin_target < 0.0) throw ConfigError("margins must be non-negative");
    if (!(divergence_limit > 0.0)) throw ConfigError("divergence_limit must be > 0");
    if (weights.bandwidth.policy == Bandwidth::Policy::fixed && !(weights.bandwidth.value > 0.0))
        throw ConfigError("fixed bandwidth must be > 0");
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& gradients, AdamState& state, double lr,
               const AdamHyper& hyper) {
    if (gradients.size() != params.size() || state.first.size() != params.size() ||
        state.second.size() != params.size())
        throw ShapeError("adam_step: " + std::to_string(gradients.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
    ++state.step;
    const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    for (Index i = 0; i < params.size(); ++i) {
        const double g = gradients(i);
        state.first(i) = hyper.beta1 * state.first(i) + (1.0 - hyper.beta1) * g;
        state.second(i) = hyper.beta2 * state.second(i) + (1.0 - hyper.beta2) * g * g;
        const double mhat = state.first(i) / c1;
        const double vhat = state.second(i) / c2;
        params(i) -= lr * mhat / (std::sqrt(vhat) + hyper.epsilon);
    }
}

Eigen::VectorXd clip_gradients(const Eigen::VectorXd& gradients, double max_norm) {
    if (!(max_norm > 0.0)) throw std::invalid_argument("clip_gradients: max_norm must be > 0");
    double ss = 0.0;
    for (Index i = 0; i < gradients.size(); ++i) ss += gradients(i) * gradients(i);
    const double norm = std::sqrt(ss);
    if (norm <= max_norm) return gradients;
    return gradients * (max_norm / norm);
}

namespace {

using Indices = std::vector<std::size_t>;

// Dedicated generator streams so data order never depends on initialization draws.
constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;
constexpr std::uint64_t kSourceStream = 0x736f75726365ULL;
constexpr std::uint64_t kTargetStream = 0x746172676574ULL;

struct Split {
    Indices train;
    Indices validation;
};

Split split_source(std::size_t n, double fraction, std::uint64_t seed) {
    Indices perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed ^ kSplitStream);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto nval = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (nval < 2 || n - nval < 2) nval = 0;
    Split s;
    s.validation.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(nval));
    s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(nval), perm.end());
    return s;
}

// Consecutive chunks of `batch`; a trailing chunk of one element is dropped.
std::vector<Indices> chunk(const Indices& order, std::size_t batch) {
    std::vector<Indices> out;
    for (std::size_t at = 0; at < order.size(); at += batch) {
        const std::size_t end = std::min(order.size(), at + batch);
        if (end - at >= 2) out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                                            order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

/// Cycles through the target samples in reshuffled passes.
class TargetStream {
public:
    TargetStream(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed ^ kTargetStream) {
        std::iota(order_.begin(), order_.end(), 0);
        reshuffle();
    }

    Indices take(std::size_t k) {
        Indices out;
        out.reserve(k);
        while (out.size() < k) {
            if (pos_ == order_.size()) reshuffle();
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    void reshuffle() {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
    }
    Indices order_;
    std::mt19937_64 rng_;
    std::size_t pos_ = 0;
};

EncodedBatch encode_source(const ModelParams& p, const DomainDataset& ds, const Indices& idx, SourcePooling pooling) {
    EncodedBatch b;
    for (std::size_t i : idx) {
        const auto& s = ds.samples[i];
        EncodedPair e = encode_pair(p, s.video, s.query);
        b.videos.push_back(e.video);
        b.queries.push_back(e.query);
        if (pooling == SourcePooling::moment) {
            std::vector<int> rows;
            for (Index t = s.boundary->start; t <= s.boundary->end; ++t) rows.push_back(static_cast<int>(t));
            b.fused.push_back(gather_rows(e.fused, rows));
        } else {
            b.fused.push_back(e.fused);
        }
    }
    return b;
}

EncodedBatch encode_target(const ModelParams& p, const UnlabeledView& view, const Indices& idx) {
    EncodedBatch b;
    for (std::size_t i : idx) {
        EncodedPair e = encode_pair(p, *view[i].video, *view[i].query);
        b.videos.push_back(e.video);
        b.queries.push_back(e.query);
        b.fused.push_back(e.fused);
    }
    return b;
}

FinalLoss batch_loss(const ModelParams& p, const EncodedBatch& src, const EncodedBatch* tgt, const TrainConfig& c) {
    if (tgt == nullptr) {
        FinalLoss out;
        out.total = supervised_loss(src.fused, src.queries, p.source_projection.video, p.source_projection.query,
                                    c.weights.margin_source, p.config.cosine);
        out.components.supervised = out.total.item();
        return out;
    }
    return final_loss(src, *tgt, p.source_projection, p.target_projection, c.weights, p.config.cosine);
}

TrainResult run(const DomainDataset& source, const UnlabeledView* target, const ModelParams& init,
                const TrainConfig& config, const AdamState* carried, const EpochCallback& on_epoch) {
    config.validate();
    TrainResult result{init.clone(), {}, AdamState(init.parameter_count()), 0};
    if (carried != nullptr) {
        if (carried->first.size() != result.optimizer.first.size())
            throw ShapeError("carried optimizer state does not match the parameter count");
        result.optimizer = *carried;
    }
    if (config.epochs == 0) return result;

    ModelParams& params = result.params;
    const Split split = split_source(source.samples.size(), config.validation_fraction, config.seed);
    if (split.train.size() < 2) throw ConfigError("training needs at least two source samples");
    if (target != nullptr && target->size() < 2) throw ConfigError("main training needs at least two target samples");
    const auto bsz = static_cast<std::size_t>(config.batch_size);

    std::mt19937_64 source_rng(config.seed ^ kSourceStream);
    std::optional<TargetStream> target_stream;
    if (target != nullptr) target_stream.emplace(target->size(), config.seed);

    // Held-out batches: source validation split paired with a fixed target slice.
    const auto val_batches = chunk(split.validation, bsz);
    std::vector<Indices> val_targets;
    if (target != nullptr) {
        std::size_t at = 0;
        for (const auto& vb : val_batches) {
            Indices t;
            for (std::size_t k = 0; k < vb.size(); ++k) t.push_back((at + k) % target->size());
            at += vb.size();
            val_targets.push_back(std::move(t));
        }
    }

    const std::size_t steps_per_epoch = chunk(split.train, bsz).size();
    const double total_steps = static_cast<double>(steps_per_epoch) * static_cast<double>(config.epochs);
    long step = 0;

    Eigen::VectorXd flat = params.flatten();
    Eigen::VectorXd best = flat;
    double best_val = std::numeric_limits<double>::infinity();
    Index since_best = 0;

    for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
        Indices order = split.train;
        std::shuffle(order.begin(), order.end(), source_rng);
        const auto batches = chunk(order, bsz);

        EpochLog log;
        log.epoch = epoch;
        log.lr = config.learning_rate * (1.0 - static_cast<double>(step) / total_steps);
        for (const auto& idx : batches) {
            params.zero_grad();
            const EncodedBatch src = encode_source(params, source, idx, config.source_pooling);
            std::optional<EncodedBatch> tgt;
            if (target_stream) tgt = encode_target(params, *target, target_stream->take(idx.size()));
            const FinalLoss loss = batch_loss(params, src, tgt ? &*tgt : nullptr, config);
            const double value = loss.total.item();
            if (!std::isfinite(value))
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
            backward(loss.total);
            const Eigen::VectorXd grad = params.gradient();
            const double norm = grad.norm();
            if (!std::isfinite(norm))
                throw NumericError("non-finite gradient at epoch " + std::to_string(epoch) + " step " +
                                   std::to_string(step));
            const double lr = config.learning_rate * (1.0 - static_cast<double>(step) / total_steps);
            adam_step(flat, clip_gradients(grad, config.clip_norm), result.optimizer, lr);
            if (!all_finite(flat)) throw NumericError("non-finite parameters at epoch " + std::to_string(epoch));
            if (flat.cwiseAbs().maxCoeff() > config.divergence_limit)
                throw NumericError("parameters diverged past " + std::to_string(config.divergence_limit) +
                                   " at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
            params.assign(flat);
            ++step;

            log.final_loss += value;
            log.components.supervised += loss.components.supervised;
            log.components.domain += loss.components.domain;
            log.components.cross_modal += loss.components.cross_modal;
            log.components.cross_distribution += loss.components.cross_distribution;
            log.components.specific += loss.components.specific;
            log.grad_norm += norm;
        }
        const auto nb = static_cast<double>(std::max<std::size_t>(batches.size(), 1));
        log.final_loss /= nb;
        log.components.supervised /= nb;
        log.components.domain /= nb;
        log.components.cross_modal /= nb;
        log.components.cross_distribution /= nb;
        log.components.specific /= nb;
        log.grad_norm /= nb;

        if (val_batches.empty()) {
            log.validation = log.final_loss;
        } else {
            double v = 0.0;
            for (std::size_t k = 0; k < val_batches.size(); ++k) {
                const EncodedBatch src = encode_source(params, source, val_batches[k], config.source_pooling);
                std::optional<EncodedBatch> tgt;
                if (target != nullptr) tgt = encode_target(params, *target, val_targets[k]);
                v += batch_loss(params, src, tgt ? &*tgt : nullptr, config).total.item();
            }
            log.validation = v / static_cast<double>(val_batches.size());
        }
        if (!std::isfinite(log.validation)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
        result.log.push_back(log);
        if (on_epoch) on_epoch(log, params);

        if (log.validation < best_val) {
            best_val = log.validation;
            best = flat;
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    params.assign(best);
    return result;
}

}  // namespace

TrainResult pretrain(const DomainDataset& source, const ModelParams& init, const TrainConfig& config,
                     const EpochCallback& on_epoch) {
    if (!source.fully_annotated()) throw ConfigError("pretrain: every source sample needs a moment boundary");
    return run(source, nullptr, init, config, nullptr, on_epoch);
}

TrainResult main_train(const DomainDataset& source, const UnlabeledView& target, const ModelParams& init,
                       const TrainConfig& config, const AdamState* carried, const EpochCallback& on_epoch) {
    if (!source.fully_annotated()) throw ConfigError("main_train: every source sample needs a moment boundary");
    return run(source, &target, init, config, carried, on_epoch);
}

void write_log_csv(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "epoch,L_final,L_SL,L_DA,L_M1,L_M2,L_SA,grad_norm,lr\n";
    out << std::setprecision(17);
    for (const auto& e : log) {
        out << e.epoch << ',' << e.final_loss << ',' << e.components.supervised << ',' << e.components.domain << ','
            << e.components.cross_modal << ',' << e.components.cross_distribution << ',' << e.components.specific
            << ',' << e.grad_norm << ',' << e.lr << '\n';
    }
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace mmcda
