#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>

namespace mmcda {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic, Eigen::RowMajor>;

// All training and evaluation runs in double precision.
using Matrix = MatrixX<double>;
using RowVector = RowVectorX<double>;
using Index = Eigen::Index;

template <typename Derived>
std::string shape_of(const Eigen::DenseBase<Derived>& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.derived().array().isFinite().all();
}

/// Matrix product with a fixed accumulation order: every output entry is summed
/// over k in increasing order starting from zero. Eigen's blocked GEMM is avoided
/// so results are reproducible bit-for-bit against a naive triple loop.
template <typename Scalar>
MatrixX<Scalar> ordered_product(const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
    MatrixX<Scalar> c = MatrixX<Scalar>::Zero(a.rows(), b.cols());
    const Index inner = a.cols();
    const Index cols = b.cols();
    for (Index i = 0; i < a.rows(); ++i) {
        Scalar* out = c.data() + i * cols;
        const Scalar* arow = a.data() + i * inner;
        for (Index k = 0; k < inner; ++k) {
            const Scalar aik = arow[k];
            const Scalar* brow = b.data() + k * cols;
            for (Index j = 0; j < cols; ++j) out[j] += aik * brow[j];
        }
    }
    return c;
}

}  // namespace mmcda
