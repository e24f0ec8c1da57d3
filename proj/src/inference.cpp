#include "mmcda/inference.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mmcda {

ScoreSequence frame_scores(const Matrix& frames, const RowVector& query) {
    if (frames.cols() != query.cols())
        throw ShapeError("frame_scores: frames " + shape_of(frames) + " vs query " + shape_of(query));
    ScoreSequence s(frames.rows());
    const double qn = query.norm();
    for (Index t = 0; t < frames.rows(); ++t) {
        const double fn = frames.row(t).norm();
        s(t) = (qn > 0.0 && fn > 0.0) ? frames.row(t).dot(query) / (fn * qn) : 0.0;
    }
    return s;
}

ScoreSequence frame_scores(const ModelParams& params, const FeatureSequence& video, std::span<const int> query) {
    const EncodedPair e = encode_pair(params, video, query);
    const Matrix pooled = mean_rows(e.query).value();
    const Matrix frames = ordered_product(e.fused.value(), params.source_projection.video.value());
    const Matrix q = ordered_product(pooled, params.source_projection.query.value());
    return frame_scores(frames, q.row(0));
}

namespace {

void check_threshold(double threshold) {
    if (!(threshold > 0.0) || threshold > 1.0)
        throw std::invalid_argument("threshold must lie in (0, 1], got " + std::to_string(threshold));
}

MomentBoundary expand_from(const ScoreSequence& s, Index seed, double threshold) {
    auto admits = [&](Index candidate, Index edge) { return s(edge) > 0.0 && s(candidate) / s(edge) >= threshold; };
    MomentBoundary m{seed, seed};
    for (bool grew = true; grew;) {
        grew = false;
        if (m.start > 0 && admits(m.start - 1, m.start)) {
            --m.start;
            grew = true;
        }
        if (m.end + 1 < s.size() && admits(m.end + 1, m.end)) {
            ++m.end;
            grew = true;
        }
    }
    return m;
}

Index argmax(const ScoreSequence& s) {
    Index best = 0;
    for (Index t = 1; t < s.size(); ++t)
        if (s(t) > s(best)) best = t;
    return best;
}

}  // namespace

MomentBoundary expand_moment(const ScoreSequence& scores, double threshold) {
    if (scores.size() == 0) throw std::invalid_argument("expand_moment: empty scores");
    check_threshold(threshold);
    return expand_from(scores, argmax(scores), threshold);
}

std::vector<MomentCandidate> top_n_moments(const ScoreSequence& scores, double threshold, Index n) {
    if (n < 1) throw std::invalid_argument("top_n_moments: n must be >= 1");
    if (scores.size() == 0) throw std::invalid_argument("top_n_moments: empty scores");
    check_threshold(threshold);
    constexpr double masked = -std::numeric_limits<double>::infinity();
    ScoreSequence s = scores;
    std::vector<MomentCandidate> out;
    while (static_cast<Index>(out.size()) < n) {
        const Index seed = argmax(s);
        if (s(seed) == masked) break;
        const MomentBoundary m = expand_from(s, seed, threshold);
        out.push_back({m, s(seed)});
        s.segment(m.start, m.length()).setConstant(masked);
    }
    return out;
}

}  // namespace mmcda
