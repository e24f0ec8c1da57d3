#include "mmcda/xmodal.hpp"

namespace mmcda {

Var cosine_matrix(const Var& a, const Var& b, CosineMode mode) {
    if (a.cols() != b.cols())
        throw ShapeError("cosine_matrix: dimension mismatch " + shape_of(a.value()) + " vs " + shape_of(b.value()));
    Var c = matmul(normalize_rows(a), transpose(normalize_rows(b)));
    return mode == CosineMode::absolute ? abs(c) : c;
}

SimilarityMatrix similarity_matrix(const Var& video, const Var& query, CosineMode mode) {
    SimilarityMatrix s;
    s.values = cosine_matrix(video, query, mode);
    s.row_normalized = row_softmax(s.values);
    s.col_normalized = transpose(row_softmax(transpose(s.values)));
    return s;
}

BidirectionalAttention bidirectional_attention(const Var& video, const Var& query, const SimilarityMatrix& sim) {
    const Index t = sim.values.rows();
    const Index n = sim.values.cols();
    if (video.rows() != t || query.rows() != n || video.cols() != query.cols())
        throw ShapeError("bidirectional_attention: C is " + shape_of(sim.values.value()) + ", V is " +
                         shape_of(video.value()) + ", Q is " + shape_of(query.value()));
    return {matmul(sim.row_normalized, query),
            matmul(sim.row_normalized, matmul(transpose(sim.col_normalized), video))};
}

FusionParams FusionParams::init(Index model_dim, ParamInit& init) {
    if (model_dim % 2 != 0) throw ConfigError("fusion: model dim must be even, got " + std::to_string(model_dim));
    return {BiGru::init(4 * model_dim, model_dim / 2, init)};
}

void FusionParams::collect(const std::string& prefix, NamedParams& out) const { gru.collect(prefix + ".gru", out); }

Var fuse_features(const Var& video, const Var& x, const Var& y, const FusionParams& params) {
    if (video.rows() != x.rows() || video.rows() != y.rows() || video.cols() != x.cols() || video.cols() != y.cols())
        throw ShapeError("fuse_features: V " + shape_of(video.value()) + ", X " + shape_of(x.value()) + ", Y " +
                         shape_of(y.value()));
    const Var parts[] = {video, x, mul(video, x), mul(video, y)};
    return bi_gru(concat_cols(parts), params.gru);
}

Var cross_modal_fuse(const Var& video, const Var& query, const FusionParams& params, CosineMode mode) {
    const SimilarityMatrix sim = similarity_matrix(video, query, mode);
    const BidirectionalAttention att = bidirectional_attention(video, query, sim);
    return fuse_features(video, att.video_to_query, att.query_to_video, params);
}

}  // namespace mmcda
