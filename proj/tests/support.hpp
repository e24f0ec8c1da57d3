#pragma once

// Hand-rolled generators and small oracles shared by the unit tests.

#include "mmcda/diff.hpp"
#include "mmcda/encoders.hpp"

#include <cmath>
#include <functional>
#include <algorithm>
#include <random>
#include <string>
#include <vector>

namespace testsupport {

using mmcda::Index;
using mmcda::Matrix;

class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    double uniform(double lo = -1.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    Index index(Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng_); }
    bool coin() { return index(0, 1) == 1; }

    Matrix matrix(Index r, Index c, double lo = -1.0, double hi = 1.0) {
        Matrix m(r, c);
        for (Index i = 0; i < r; ++i)
            for (Index j = 0; j < c; ++j) m(i, j) = uniform(lo, hi);
        return m;
    }

    std::vector<Matrix> matrices(std::size_t n, Index r, Index c) {
        std::vector<Matrix> out;
        for (std::size_t k = 0; k < n; ++k) out.push_back(matrix(r, c));
        return out;
    }

    std::mt19937_64& engine() { return rng_; }

private:
    std::mt19937_64 rng_;
};

/// Central differences of a scalar function of one matrix, independent of the library's grad_check.
template <class F>
Matrix numeric_gradient(F&& f, Matrix x, double h = 1e-6) {
    Matrix g(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i)
        for (Index j = 0; j < x.cols(); ++j) {
            const double saved = x(i, j);
            x(i, j) = saved + h;
            const double up = f(x);
            x(i, j) = saved - h;
            const double down = f(x);
            x(i, j) = saved;
            g(i, j) = (up - down) / (2.0 * h);
        }
    return g;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c = Matrix::Zero(a.rows(), b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index k = 0; k < a.cols(); ++k)
            for (Index j = 0; j < b.cols(); ++j) c(i, j) += a(i, k) * b(k, j);
    return c;
}

struct ParamCheck {
    double max_rel_error = 0.0;
    std::string worst;
};

/// Backward through `loss` against central differences on every entry of every
/// named parameter, perturbed in place. Relative error floor 1e-8.
inline ParamCheck param_gradient_check(const mmcda::NamedParams& params, const std::function<mmcda::Var()>& loss,
                                       double h = 1e-5) {
    for (const auto& [name, v] : params) {
        auto leaf = v;
        leaf.zero_grad();
    }
    mmcda::backward(loss());
    ParamCheck out;
    for (const auto& [name, v] : params) {
        const Matrix analytic = v.grad();
        mmcda::Var leaf = v;
        Matrix value = v.value();
        for (Index k = 0; k < value.size(); ++k) {
            const double saved = value.data()[k];
            value.data()[k] = saved + h;
            leaf.set_value(value);
            const double up = loss().item();
            value.data()[k] = saved - h;
            leaf.set_value(value);
            const double down = loss().item();
            value.data()[k] = saved;
            leaf.set_value(value);
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic.data()[k];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            if (rel > out.max_rel_error) {
                out.max_rel_error = rel;
                out.worst = name + "[" + std::to_string(k) + "]";
            }
        }
    }
    return out;
}

}  // namespace testsupport
