#include "mmcda/losses.hpp"

#include <algorithm>
#include <stdexcept>

namespace mmcda {

double median_bandwidth(const Matrix& u, const Matrix& w) {
    Matrix all(u.rows() + w.rows(), u.cols());
    all << u, w;
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(all.rows() * (all.rows() - 1) / 2));
    for (Index i = 0; i < all.rows(); ++i)
        for (Index j = i + 1; j < all.rows(); ++j) dists.push_back((all.row(i) - all.row(j)).norm());
    if (dists.empty()) return 1e-6;
    std::sort(dists.begin(), dists.end());
    const std::size_t m = dists.size() / 2;
    const double med = dists.size() % 2 == 1 ? dists[m] : 0.5 * (dists[m - 1] + dists[m]);
    return std::max(med, 1e-6);
}

Var intra_sample_mean(const Var& seq) {
    if (seq.rows() < 1) throw ShapeError("intra_sample_mean: empty sequence");
    return mean_rows(seq);
}

Var inter_sample_std(std::span<const Var> means) {
    if (means.empty()) throw ShapeError("inter_sample_std: empty list of means");
    return std_rows(concat_rows(means));
}

Var mmd(const Var& u, const Var& w, MmdVariant variant, const Bandwidth& bandwidth) {
    if (u.rows() < 1 || w.rows() < 1) throw ShapeError("mmd: both sets must be nonempty");
    if (u.cols() != w.cols()) throw ShapeError("mmd: " + shape_of(u.value()) + " vs " + shape_of(w.value()));
    const double h = bandwidth.policy == Bandwidth::Policy::fixed ? bandwidth.value
                                                                  : median_bandwidth(u.value(), w.value());
    if (!(h > 0.0)) throw DomainError("mmd: bandwidth must be positive");
    const double c = -1.0 / (2.0 * h * h);
    auto mean_kernel = [c](const Var& a, const Var& b) {
        const double n = static_cast<double>(a.rows() * b.rows());
        return scale(sum(exp(scale(pairwise_sq_dist(a, b), c))), 1.0 / n);
    };
    const Var kuu = mean_kernel(u, u);
    const Var kww = mean_kernel(w, w);
    const Var kuw = mean_kernel(u, w);
    const double cross = variant == MmdVariant::standard ? -2.0 : 1.0;
    return add(add(kuu, kww), scale(kuw, cross));
}

namespace {

std::vector<Var> means_of(std::span<const Var> seqs) {
    std::vector<Var> out;
    out.reserve(seqs.size());
    for (const auto& s : seqs) out.push_back(intra_sample_mean(s));
    return out;
}

Var modality_alignment(std::span<const Var> source, std::span<const Var> target, const LossWeights& w) {
    const auto ms = means_of(source);
    const auto mt = means_of(target);
    const Var mean_term = mmd(concat_rows(ms), concat_rows(mt), w.mmd_variant, w.bandwidth);
    const Var std_term = mmd(inter_sample_std(ms), inter_sample_std(mt), w.mmd_variant, w.bandwidth);
    return add(mean_term, std_term);
}

}  // namespace

DomainAlignment domain_alignment_loss(const EncodedBatch& source, const EncodedBatch& target,
                                      const LossWeights& weights) {
    if (source.videos.empty() || target.videos.empty() || source.queries.empty() || target.queries.empty())
        throw ShapeError("domain_alignment_loss: empty batch");
    DomainAlignment da;
    da.video = modality_alignment(source.videos, target.videos, weights);
    da.query = modality_alignment(source.queries, target.queries, weights);
    da.total = add(da.video, da.query);
    return da;
}

double triplet_loss(double positive, std::span<const double> negatives, double margin) {
    if (margin < 0.0) throw std::invalid_argument("triplet_loss: margin must be non-negative");
    if (negatives.empty()) throw std::invalid_argument("triplet_loss: no negatives");
    double total = 0.0;
    for (double n : negatives) total += std::max(0.0, margin - positive + n);
    return total;
}

std::vector<Index> hardest_negative_mining(const Matrix& sims) {
    if (sims.rows() != sims.cols()) throw ShapeError("hardest_negative_mining: not square, " + shape_of(sims));
    if (sims.rows() < 2) throw std::invalid_argument("hardest_negative_mining: batch of size 1 has no negatives");
    std::vector<Index> idx(static_cast<std::size_t>(sims.rows()));
    for (Index i = 0; i < sims.rows(); ++i) {
        Index best = -1;
        for (Index j = 0; j < sims.cols(); ++j) {
            if (j == i) continue;
            if (best < 0 || sims(i, j) > sims(i, best)) best = j;
        }
        idx[static_cast<std::size_t>(i)] = best;
    }
    return idx;
}

namespace {

// Mean over anchors (rows of s) of hinge(margin - s_ii + s_i,neg(i)).
Var ranking_direction(const Var& s, double margin) {
    const auto neg = hardest_negative_mining(s.value());
    std::vector<Var> terms;
    terms.reserve(neg.size());
    for (std::size_t i = 0; i < neg.size(); ++i) {
        const auto ii = static_cast<Index>(i);
        terms.push_back(hinge(add_scalar(sub(pick(s, ii, neg[i]), pick(s, ii, ii)), margin)));
    }
    return scale(sum(concat_rows(terms)), 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

Var ranking_loss(const Var& query_embedding, const Var& video_embedding, double margin, CosineMode mode) {
    if (margin < 0.0) throw std::invalid_argument("ranking_loss: margin must be non-negative");
    if (query_embedding.rows() != video_embedding.rows())
        throw ShapeError("ranking_loss: " + shape_of(query_embedding.value()) + " vs " +
                         shape_of(video_embedding.value()));
    if (query_embedding.rows() < 2) throw std::invalid_argument("ranking_loss: batch size must be at least 2");
    // s(l, k): query l against video k.
    const Var s = cosine_matrix(query_embedding, video_embedding, mode);
    return add(ranking_direction(s, margin), ranking_direction(transpose(s), margin));
}

Var pool_and_project(std::span<const Var> sequences, const Var& projection) {
    std::vector<Var> pooled;
    pooled.reserve(sequences.size());
    for (const auto& s : sequences) pooled.push_back(intra_sample_mean(s));
    return matmul(concat_rows(pooled), projection);
}

Var cross_modal_consistent_loss(std::span<const Var> fused_videos, std::span<const Var> queries,
                                const Var& video_projection, const Var& query_projection, double margin,
                                CosineMode mode) {
    if (fused_videos.size() != queries.size())
        throw ShapeError("cross_modal_consistent_loss: unpaired batch");
    if (fused_videos.size() < 2) throw std::invalid_argument("cross_modal_consistent_loss: batch size must be >= 2");
    return ranking_loss(pool_and_project(queries, query_projection), pool_and_project(fused_videos, video_projection),
                        margin, mode);
}

Var supervised_loss(std::span<const Var> fused_videos, std::span<const Var> queries, const Var& video_projection,
                    const Var& query_projection, double margin, CosineMode mode) {
    if (fused_videos.size() != queries.size()) throw ShapeError("supervised_loss: unpaired batch");
    if (fused_videos.size() < 2) throw std::invalid_argument("supervised_loss: batch size must be >= 2");
    return ranking_loss(pool_and_project(queries, query_projection), pool_and_project(fused_videos, video_projection),
                        margin, mode);
}

Var cross_modal_distribution_loss(std::span<const Var> videos, std::span<const Var> queries) {
    if (videos.empty() || videos.size() != queries.size())
        throw ShapeError("cross_modal_distribution_loss: empty or unpaired batch");
    const auto mv = means_of(videos);
    const auto mq = means_of(queries);
    std::vector<Var> terms;
    terms.reserve(mv.size() + 1);
    for (std::size_t i = 0; i < mv.size(); ++i) {
        const Var diff = sub(mv[i], mq[i]);
        terms.push_back(sum(mul(diff, diff)));
    }
    const Var sd = sub(inter_sample_std(mv), inter_sample_std(mq));
    terms.push_back(sum(mul(sd, sd)));
    return sum(concat_rows(terms));
}

Var specific_alignment_loss(const Var& frames, std::span<const Var> queries) {
    if (queries.empty()) throw std::invalid_argument("specific_alignment_loss: no queries");
    const Var unit_frames = normalize_rows(frames);
    std::vector<Var> columns;
    columns.reserve(queries.size());
    for (const auto& q : queries) {
        if (q.cols() != frames.cols())
            throw ShapeError("specific_alignment_loss: frames " + shape_of(frames.value()) + " vs query " +
                             shape_of(q.value()));
        // |v^T Q| per frame: row norms of (v/|v|) Q^T, then divided by |Q|_F.
        const Var proj = matmul(unit_frames, transpose(q));                        // T x N
        const Var row_norm = sqrt(matmul(mul(proj, proj), Var::constant(Matrix::Ones(q.rows(), 1))));  // T x 1
        if (q.value().norm() == 0.0) {
            columns.push_back(scale(row_norm, 0.0));
            continue;
        }
        const Var inv_fro = exp(scale(log(l2_norm(q)), -1.0));  // 1 x 1
        columns.push_back(matmul(row_norm, inv_fro));
    }
    const Var sims = concat_cols(columns);  // T x L
    const Var best = max_over(row_softmax(sims), Axis::cols);
    return scale(sum(log(best)), -1.0);
}

FinalLoss final_loss(const EncodedBatch& source, const EncodedBatch& target, const Projections& source_projection,
                     const Projections& target_projection, const LossWeights& weights, CosineMode mode) {
    if (source.fused.empty() || target.fused.empty()) throw ShapeError("final_loss: empty batch");
    const Var sl = supervised_loss(source.fused, source.queries, source_projection.video, source_projection.query,
                                   weights.margin_source, mode);
    const Var da = domain_alignment_loss(source, target, weights).total;
    const Var m1 = cross_modal_consistent_loss(target.fused, target.queries, target_projection.video,
                                               target_projection.query, weights.margin_target, mode);
    const Var m2 = cross_modal_distribution_loss(target.videos, target.queries);
    std::vector<Var> sa_terms;
    sa_terms.reserve(target.videos.size());
    for (const auto& v : target.videos) sa_terms.push_back(specific_alignment_loss(v, target.queries));
    const Var sa = scale(sum(concat_rows(sa_terms)), 1.0 / static_cast<double>(sa_terms.size()));

    FinalLoss out;
    out.components = {sl.item(), da.item(), m1.item(), m2.item(), sa.item()};
    Var total = sl;
    if (weights.gamma1 != 0.0) total = add(total, scale(da, weights.gamma1));
    if (weights.gamma2 != 0.0) total = add(total, scale(add(m1, m2), weights.gamma2));
    if (weights.gamma3 != 0.0) total = add(total, scale(sa, weights.gamma3));
    out.total = total;
    return out;
}

}  // namespace mmcda
