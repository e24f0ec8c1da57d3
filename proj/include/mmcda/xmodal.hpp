#pragma once

#include "mmcda/encoders.hpp"

namespace mmcda {

enum class CosineMode {
    signed_cosine,  // cos(v, q) in [-1, 1]
    absolute,       // |cos(v, q)| in [0, 1]
};

/// Frame-word cosine similarities C (T x N) with its row-wise and
/// column-wise softmax normalizations.
struct SimilarityMatrix {
    Var values;
    Var row_normalized;  // each row sums to 1
    Var col_normalized;  // each column sums to 1
};

/// Cosine similarity between the rows of a and b. Zero rows give similarity 0.
Var cosine_matrix(const Var& a, const Var& b, CosineMode mode);

SimilarityMatrix similarity_matrix(const Var& video, const Var& query, CosineMode mode);

struct BidirectionalAttention {
    Var video_to_query;  // X = C_r Q, T x d
    Var query_to_video;  // Y = C_r C_c^T V, T x d
};

BidirectionalAttention bidirectional_attention(const Var& video, const Var& query, const SimilarityMatrix& sim);

/// Fusion recurrence; hidden = d / 2 so that the concatenated Bi-GRU output is T x d.
struct FusionParams {
    BiGru gru;

    static FusionParams init(Index model_dim, ParamInit& init);
    void collect(const std::string& prefix, NamedParams& out) const;
};

/// Bi-GRU over [V, X, V*X, V*Y] (T x 4d) giving the fused frame sequence (T x d).
Var fuse_features(const Var& video, const Var& x, const Var& y, const FusionParams& params);

/// Similarity, bidirectional attention and fusion in one call.
Var cross_modal_fuse(const Var& video, const Var& query, const FusionParams& params, CosineMode mode);

}  // namespace mmcda
