#pragma once

#include "mmcda/losses.hpp"
#include "mmcda/synthdata.hpp"

#include <filesystem>

namespace mmcda {

struct ModelConfig {
    Index raw_dim = 16;
    Index vocab_size = 40;
    Index embed_dim = 16;
    Index model_dim = 16;  // d
    Index hidden = 8;
    Index heads = 2;
    EncoderOrder video_order = EncoderOrder::attention_first;
    EncoderOrder query_order = EncoderOrder::gru_first;
    CosineMode cosine = CosineMode::signed_cosine;
    std::uint64_t seed = 0;
};

/// Every learnable weight: shared encoders, the fusion recurrence and the
/// four d x d projections. Copies share weights; use clone() for an
/// independent model.
struct ModelParams {
    ModelConfig config;
    EncoderParams video_encoder;
    EncoderParams query_encoder;
    FusionParams fusion;
    Projections target_projection;  // P_V, P_Q
    Projections source_projection;  // P_v, P_q

    static ModelParams init(const ModelConfig& config);

    /// Fixed order used by the flat view and checkpoints.
    NamedParams parameters() const;
    Index parameter_count() const;

    Eigen::VectorXd flatten() const;
    void assign(const Eigen::VectorXd& flat);
    Eigen::VectorXd gradient() const;
    void zero_grad() const;
    ModelParams clone() const;
};

/// Encoded video, encoded query and fused frames of one pair.
struct EncodedPair {
    Var video;
    Var query;
    Var fused;
};

EncodedPair encode_pair(const ModelParams& params, const FeatureSequence& video, std::span<const int> query);

/// Checkpoint: JSON manifest at `path` plus little-endian float32 values in
/// the sidecar `path` with extension ".bin", in manifest order.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace mmcda
