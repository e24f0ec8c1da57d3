#pragma once

#include "mmcda/model.hpp"

#include <vector>

namespace mmcda {

/// One similarity score per frame.
using ScoreSequence = Eigen::VectorXd;

struct MomentCandidate {
    MomentBoundary moment;
    double peak_score = 0.0;
};

/// Cosine similarity of each fused frame (row of `frames`) with `query` (1 x d).
ScoreSequence frame_scores(const Matrix& frames, const RowVector& query);

/// Encode, fuse and score a video-query pair. Frames and the mean-pooled query
/// are compared in the supervised joint space (P_v, P_q).
ScoreSequence frame_scores(const ModelParams& params, const FeatureSequence& video, std::span<const int> query);

/// Grow a moment from the highest-scoring frame (lowest index on ties). The
/// frame just outside either end joins while score(frame) / score(end) >= threshold
/// and score(end) > 0.
MomentBoundary expand_moment(const ScoreSequence& scores, double threshold);

/// Up to n disjoint moments: expand, mask the span, repeat. Ordered by peak score.
std::vector<MomentCandidate> top_n_moments(const ScoreSequence& scores, double threshold, Index n);

}  // namespace mmcda
