#pragma once

#include "mmcda/model.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace mmcda {

/// Which fused source frames enter the pooled L_SL embedding.
enum class SourcePooling {
    sequence,  // every frame
    moment,    // only the annotated moment
};

struct TrainConfig {
    double learning_rate = 4e-4;
    Index epochs = 100;
    Index batch_size = 16;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    Index patience = 10;
    double validation_fraction = 0.1;
    bool carry_optimizer_state = false;  // stage 2 starts from stage-1 Adam moments
    SourcePooling source_pooling = SourcePooling::sequence;
    double divergence_limit = 1e4;  // abort once any weight's magnitude exceeds this
    LossWeights weights;

    void validate() const;
};

struct AdamState {
    Eigen::VectorXd first;
    Eigen::VectorXd second;
    long step = 0;

    explicit AdamState(Index n = 0) : first(Eigen::VectorXd::Zero(n)), second(Eigen::VectorXd::Zero(n)) {}
};

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Bias-corrected Adam update of `params` in place.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& gradients, AdamState& state, double lr,
               const AdamHyper& hyper = {});

/// Rescale so the global l2 norm is at most max_norm.
Eigen::VectorXd clip_gradients(const Eigen::VectorXd& gradients, double max_norm);

struct EpochLog {
    Index epoch = 0;
    double final_loss = 0.0;
    LossComponents components;
    double grad_norm = 0.0;  // mean pre-clip norm over the epoch's steps
    double lr = 0.0;         // learning rate at the first step of the epoch
    double validation = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochLog> log;
    AdamState optimizer;
    Index best_epoch = 0;
};

/// Called after every epoch with the log row and the current weights.
using EpochCallback = std::function<void(const EpochLog&, const ModelParams&)>;

/// Stage 1: L_SL on the annotated source domain. Returns the parameters with
/// the best held-out source loss.
TrainResult pretrain(const DomainDataset& source, const ModelParams& init, const TrainConfig& config,
                     const EpochCallback& on_epoch = {});

/// Stage 2: L_final on source plus the unlabeled target view.
TrainResult main_train(const DomainDataset& source, const UnlabeledView& target, const ModelParams& init,
                       const TrainConfig& config, const AdamState* carried = nullptr,
                       const EpochCallback& on_epoch = {});

/// epoch,L_final,L_SL,L_DA,L_M1,L_M2,L_SA,grad_norm,lr
void write_log_csv(const std::vector<EpochLog>& log, const std::filesystem::path& path);

}  // namespace mmcda
