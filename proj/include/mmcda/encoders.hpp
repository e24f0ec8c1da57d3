#pragma once

#include "mmcda/diff.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mmcda {

/// L x d block of finite feature vectors (video frames or query words).
class FeatureSequence {
public:
    FeatureSequence() = default;
    explicit FeatureSequence(Matrix values);

    Index length() const { return values_.rows(); }
    Index dim() const { return values_.cols(); }
    const Matrix& values() const { return values_; }

    friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;

private:
    Matrix values_;
};

using NamedParams = std::vector<std::pair<std::string, Var>>;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initializer shared by every module.
class ParamInit {
public:
    explicit ParamInit(std::uint64_t seed) : rng_(seed) {}
    Var uniform(Index rows, Index cols, double fan_in);

private:
    std::mt19937_64 rng_;
};

struct Linear {
    Var weight;  // in x out
    Var bias;    // 1 x out

    static Linear init(Index in, Index out, ParamInit& init);
    Var operator()(const Var& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

struct GruCell {
    Var w;  // in x 3h
    Var u;  // h x 3h
    Var b;  // 1 x 3h

    static GruCell init(Index in, Index hidden, ParamInit& init);
    Index hidden() const { return u.rows(); }
    Index input_dim() const { return w.rows(); }
    void collect(const std::string& prefix, NamedParams& out) const;
};

struct BiGru {
    GruCell forward;
    GruCell backward;

    static BiGru init(Index in, Index hidden, ParamInit& init);
    Index hidden() const { return forward.hidden(); }
    Index input_dim() const { return forward.input_dim(); }
    void collect(const std::string& prefix, NamedParams& out) const;
};

struct AttentionHead {
    Var query;  // model_dim x head_dim
    Var key;
    Var value;
};

struct MultiHeadAttention {
    std::vector<AttentionHead> heads;
    Var output;  // model_dim x model_dim, applied to the concatenated heads

    static MultiHeadAttention init(Index model_dim, Index head_count, ParamInit& init);
    Index model_dim() const { return output.cols(); }
    void collect(const std::string& prefix, NamedParams& out) const;
};

enum class EncoderOrder {
    attention_first,  // self-attention on the raw rows, then Bi-GRU and projection
    gru_first,        // Bi-GRU and projection, then self-attention
};

struct EncoderConfig {
    Index input_dim = 16;  // raw feature dim (video) or embedding dim (query)
    Index model_dim = 16;  // d
    Index hidden = 8;
    Index heads = 2;
    Index vocab_size = 0;  // > 0 adds an embedding table (query side)
    EncoderOrder order = EncoderOrder::attention_first;
};

/// Weights of one sequence encoder. The same instance encodes source and
/// target samples; nothing here is domain specific.
struct EncoderParams {
    EncoderConfig config;
    Var embedding;  // vocab x input_dim; undefined for the video encoder
    MultiHeadAttention attention;
    BiGru gru;
    Linear projection;  // 2*hidden -> model_dim

    static EncoderParams init(const EncoderConfig& config, ParamInit& init);
    void collect(const std::string& prefix, NamedParams& out) const;
};

struct AttentionResult {
    Var output;                // L x model_dim
    std::vector<Var> weights;  // one L x L row-stochastic matrix per head
};

/// Scaled dot-product self-attention per head, heads concatenated and passed
/// through the output projection.
AttentionResult multi_head_self_attention(const Var& x, const MultiHeadAttention& params);

/// Forward and backward GRU states concatenated per position: L x 2*hidden.
Var bi_gru(const Var& x, const BiGru& params);

Var encode_video(const Var& raw, const EncoderParams& params);
Var encode_query(std::span<const int> tokens, const EncoderParams& params);

FeatureSequence encode_video(const FeatureSequence& raw, const EncoderParams& params);
FeatureSequence encode_query_values(std::span<const int> tokens, const EncoderParams& params);

}  // namespace mmcda
