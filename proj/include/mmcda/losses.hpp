#pragma once

#include "mmcda/xmodal.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace mmcda {

enum class MmdVariant {
    standard,  // biased MMD^2 estimator, cross term weighted -2/(Nu Nw)
    additive,  // all-positive cross term weighted +1/(Nu Nw)
};

struct Bandwidth {
    enum class Policy { median, fixed };
    Policy policy = Policy::median;
    double value = 1.0;  // used when policy == fixed

    static Bandwidth fixed(double h) { return {Policy::fixed, h}; }
};

struct LossWeights {
    double gamma1 = 1.0;  // domain alignment
    double gamma2 = 0.5;  // cross-modal alignment
    double gamma3 = 0.2;  // specific alignment
    double margin_source = 0.2;
    double margin_target = 0.2;
    MmdVariant mmd_variant = MmdVariant::standard;
    Bandwidth bandwidth;
};

/// exp(-|u - w|^2 / (2 h^2)).
template <typename DerivedU, typename DerivedW>
typename DerivedU::Scalar gaussian_kernel(const Eigen::MatrixBase<DerivedU>& u, const Eigen::MatrixBase<DerivedW>& w,
                                          typename DerivedU::Scalar bandwidth) {
    if (!(bandwidth > 0)) throw DomainError("gaussian_kernel: bandwidth must be positive");
    if (u.size() != w.size()) throw ShapeError("gaussian_kernel: " + shape_of(u) + " vs " + shape_of(w));
    typename DerivedU::Scalar ss = 0;
    for (Index k = 0; k < u.size(); ++k) {
        const auto d = u.derived().data()[k] - w.derived().data()[k];
        ss += d * d;
    }
    return std::exp(-ss / (2 * bandwidth * bandwidth));
}

/// Median of the pairwise euclidean distances among the rows of u and w
/// together (distinct pairs only), floored at 1e-6.
double median_bandwidth(const Matrix& u, const Matrix& w);

/// Row mean of a sequence (1 x d).
Var intra_sample_mean(const Var& seq);
/// Elementwise population standard deviation of a set of 1 x d means.
Var inter_sample_std(std::span<const Var> means);

/// Kernel two-sample discrepancy between the rows of u and w. The median
/// bandwidth is evaluated on the current values and held constant for gradients.
Var mmd(const Var& u, const Var& w, MmdVariant variant, const Bandwidth& bandwidth);

/// Encoded sequences of one batch. `fused` is filled when the cross-modal path ran.
struct EncodedBatch {
    std::vector<Var> videos;
    std::vector<Var> queries;
    std::vector<Var> fused;
};

struct DomainAlignment {
    Var video;  // L_DV
    Var query;  // L_DQ
    Var total;  // L_DA
};

DomainAlignment domain_alignment_loss(const EncodedBatch& source, const EncodedBatch& target,
                                      const LossWeights& weights);

/// Sum over negatives of max(0, margin - sim(A,P) + sim(A,N)).
double triplet_loss(double positive, std::span<const double> negatives, double margin);

/// For every row i, argmax over j != i (lowest index on ties).
std::vector<Index> hardest_negative_mining(const Matrix& similarities);

/// Symmetric hardest-negative ranking loss between paired rows of query and
/// video embeddings (B x d each, row i of one matches row i of the other).
/// Each direction is averaged over its anchors.
Var ranking_loss(const Var& query_embedding, const Var& video_embedding, double margin, CosineMode mode);

/// Mean-pool each sequence and project: B x d.
Var pool_and_project(std::span<const Var> sequences, const Var& projection);

/// L_M1: ranking loss on target fused videos and queries after P_V / P_Q.
Var cross_modal_consistent_loss(std::span<const Var> fused_videos, std::span<const Var> queries,
                                const Var& video_projection, const Var& query_projection, double margin,
                                CosineMode mode);

/// L_M2: sum over pairs of |mu(V) - mu(Q)|^2 plus |sigma(V) - sigma(Q)|^2.
Var cross_modal_distribution_loss(std::span<const Var> videos, std::span<const Var> queries);

/// L_SA for one video: per frame, |v^T Q_l| / (|v| |Q_l|_F) against every
/// query, softmax over queries, minus the summed log of the best probability.
Var specific_alignment_loss(const Var& frames, std::span<const Var> queries);

/// L_SL: ranking loss on source fused videos and queries after P_v / P_q.
Var supervised_loss(std::span<const Var> fused_videos, std::span<const Var> queries, const Var& video_projection,
                    const Var& query_projection, double margin, CosineMode mode);

struct Projections {
    Var video;
    Var query;
};

struct LossComponents {
    double supervised = 0.0;          // L_SL
    double domain = 0.0;              // L_DA
    double cross_modal = 0.0;         // L_M1
    double cross_distribution = 0.0;  // L_M2
    double specific = 0.0;            // L_SA

    double weighted_sum(const LossWeights& w) const {
        return supervised + w.gamma1 * domain + w.gamma2 * (cross_modal + cross_distribution) + w.gamma3 * specific;
    }
};

struct FinalLoss {
    Var total;
    LossComponents components;
};

/// L_SL + gamma1 L_DA + gamma2 (L_M1 + L_M2) + gamma3 L_SA. Terms with a zero
/// weight are still evaluated for logging but do not enter the graph.
FinalLoss final_loss(const EncodedBatch& source, const EncodedBatch& target, const Projections& source_projection,
                     const Projections& target_projection, const LossWeights& weights, CosineMode mode);

}  // namespace mmcda
