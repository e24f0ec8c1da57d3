#pragma once

// Brute-force reference implementations written without the library's graph
// ops. Shared by the unit tests and the acceptance runner.

#include "mmcda/matrix.hpp"
#include "mmcda/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace oracle {

using mmcda::Index;
using mmcda::Matrix;

inline std::vector<double> row_mean(const Matrix& m) {
    std::vector<double> out(static_cast<std::size_t>(m.cols()), 0.0);
    for (Index j = 0; j < m.cols(); ++j) {
        double s = 0.0;
        for (Index i = 0; i < m.rows(); ++i) s += m(i, j);
        out[static_cast<std::size_t>(j)] = s / static_cast<double>(m.rows());
    }
    return out;
}

/// Population deviation of each column over the rows of m.
inline std::vector<double> row_std(const Matrix& m) {
    const auto mu = row_mean(m);
    std::vector<double> out(mu.size(), 0.0);
    for (Index j = 0; j < m.cols(); ++j) {
        double s = 0.0;
        for (Index i = 0; i < m.rows(); ++i) {
            const double d = m(i, j) - mu[static_cast<std::size_t>(j)];
            s += d * d;
        }
        out[static_cast<std::size_t>(j)] = std::sqrt(s / static_cast<double>(m.rows()));
    }
    return out;
}

inline double kernel(const Matrix& a, Index i, const Matrix& b, Index j, double h) {
    double ss = 0.0;
    for (Index k = 0; k < a.cols(); ++k) {
        const double d = a(i, k) - b(j, k);
        ss += d * d;
    }
    return std::exp(-ss / (2.0 * h * h));
}

/// cross = -2 for the standard estimator, +1 for the all-positive variant.
inline double mmd(const Matrix& u, const Matrix& w, double h, double cross) {
    double kuu = 0.0, kww = 0.0, kuw = 0.0;
    for (Index i = 0; i < u.rows(); ++i)
        for (Index j = 0; j < u.rows(); ++j) kuu += kernel(u, i, u, j, h);
    for (Index i = 0; i < w.rows(); ++i)
        for (Index j = 0; j < w.rows(); ++j) kww += kernel(w, i, w, j, h);
    for (Index i = 0; i < u.rows(); ++i)
        for (Index j = 0; j < w.rows(); ++j) kuw += kernel(u, i, w, j, h);
    const double nu = static_cast<double>(u.rows()), nw = static_cast<double>(w.rows());
    return kuu / (nu * nu) + kww / (nw * nw) + cross * kuw / (nu * nw);
}

inline double triplet(double positive, const std::vector<double>& negatives, double margin) {
    double total = 0.0;
    for (double n : negatives) {
        const double v = margin - positive + n;
        if (v > 0.0) total += v;
    }
    return total;
}

inline double iou(const mmcda::MomentBoundary& a, const mmcda::MomentBoundary& b) {
    // Count frames directly.
    const Index lo = std::min(a.start, b.start), hi = std::max(a.end, b.end);
    Index inter = 0, uni = 0;
    for (Index t = lo; t <= hi; ++t) {
        const bool in_a = t >= a.start && t <= a.end;
        const bool in_b = t >= b.start && t <= b.end;
        inter += in_a && in_b;
        uni += in_a || in_b;
    }
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline double recall(const std::vector<std::vector<mmcda::MomentBoundary>>& preds,
                     const std::vector<mmcda::MomentBoundary>& truths, Index n, double m) {
    Index hits = 0;
    for (std::size_t i = 0; i < truths.size(); ++i) {
        bool hit = false;
        for (std::size_t k = 0; k < preds[i].size() && static_cast<Index>(k) < n; ++k)
            if (iou(preds[i][k], truths[i]) > m) hit = true;
        hits += hit;
    }
    return static_cast<double>(hits) / static_cast<double>(truths.size());
}

inline double miou(const std::vector<mmcda::MomentBoundary>& top1, const std::vector<mmcda::MomentBoundary>& truths) {
    double s = 0.0;
    for (std::size_t i = 0; i < truths.size(); ++i) s += iou(top1[i], truths[i]);
    return s / static_cast<double>(truths.size());
}

}  // namespace oracle
