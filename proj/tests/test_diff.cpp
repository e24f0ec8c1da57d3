#include "mmcda/diff.hpp"
#include "mmcda/gradsuite.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <string>

using namespace mmcda;
using testsupport::Gen;

namespace {
Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
    Index i = 0;
    for (const auto& r : rows) {
        Index j = 0;
        for (double v : r) m(i, j++) = v;
        ++i;
    }
    return m;
}
}  // namespace

TEST_CASE("forward values of the basic ops") {
    CHECK(row_softmax(Var::constant(mat({{0, 0}}))).value().isApprox(mat({{0.5, 0.5}})));
    Gen g(3);
    const Matrix a = g.matrix(3, 3);
    CHECK(matmul(Var::constant(Matrix::Identity(3, 3)), Var::constant(a)).value() == a);
    CHECK(l2_norm(Var::constant(mat({{3, 4}}))).item() == 5.0);
    CHECK(mean_rows(Var::constant(mat({{1, 2}, {3, 4}}))).value() == mat({{2, 3}}));
    CHECK(std_rows(Var::constant(mat({{0, 0}, {2, 2}}))).value() == mat({{1, 1}}));
    CHECK(hinge(Var::constant(mat({{-1, 0, 2}}))).value() == mat({{0, 0, 2}}));
    CHECK(max_over(Var::constant(mat({{1, 5}, {7, 2}})), Axis::cols).value() == mat({{5}, {7}}));
    CHECK(max_over(Var::constant(mat({{1, 5}, {7, 2}})), Axis::rows).value() == mat({{7, 5}}));
    CHECK(transpose(Var::constant(mat({{1, 2, 3}}))).value() == mat({{1}, {2}, {3}}));
    const Var parts[] = {Var::constant(mat({{1}, {2}})), Var::constant(mat({{3, 4}, {5, 6}}))};
    CHECK(concat_cols(parts).value() == mat({{1, 3, 4}, {2, 5, 6}}));
    CHECK(scale(Var::constant(mat({{1, -2}})), 3.0).value() == mat({{3, -6}}));
}

TEST_CASE("shape mismatch names both shapes") {
    const Var a = Var::constant(Matrix::Zero(2, 3));
    const Var b = Var::constant(Matrix::Zero(3, 2));
    try {
        (void)add(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("3x2") != std::string::npos);
    }
    CHECK_THROWS_AS((void)matmul(a, a), ShapeError);
    CHECK_THROWS_AS((void)mul(a, b), ShapeError);
}

TEST_CASE("log of non-positive values is a domain error") {
    CHECK_THROWS_AS((void)log(Var::constant(mat({{1.0, 0.0}}))), DomainError);
    CHECK_THROWS_AS((void)log(Var::constant(mat({{-2.0}}))), DomainError);
    CHECK_THROWS_AS((void)sqrt(Var::constant(mat({{-1.0}}))), DomainError);
}

TEST_CASE("backward requires a scalar output and runs once") {
    const Var x = Var::parameter(mat({{1, 2}}));
    CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);
    const Var y = sum(mul(x, x));
    backward(y);
    CHECK_THROWS(backward(y));
}

TEST_CASE("hand derivatives") {
    const Var x = Var::parameter(mat({{3.0}}));
    backward(mul(x, x));
    CHECK(x.grad()(0, 0) == 6.0);

    const Var z = Var::parameter(mat({{0.0}}));
    backward(tanh(z));
    CHECK(z.grad()(0, 0) == 1.0);

    // mean(log(softmax(x))) at uniform input: the gradient vanishes.
    const Var u = Var::parameter(Matrix::Constant(1, 4, 0.7));
    backward(scale(sum(log(row_softmax(u))), 0.25));
    CHECK(u.grad().cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("l2 norm and normalize_rows at zero have zero gradient") {
    const Var x = Var::parameter(Matrix::Zero(2, 3));
    backward(l2_norm(x));
    CHECK(x.grad() == Matrix::Zero(2, 3));
    const Var y = Var::parameter(Matrix::Zero(1, 3));
    backward(sum(normalize_rows(y)));
    CHECK(y.grad() == Matrix::Zero(1, 3));
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Gen g(seed);
        const Matrix x = g.matrix(g.index(1, 6), g.index(1, 6), -20.0, 20.0);
        const Matrix s = row_softmax(Var::constant(x)).value();
        for (Index i = 0; i < s.rows(); ++i) CHECK(std::abs(s.row(i).sum() - 1.0) <= 1e-12);
        const double c = g.uniform(-50.0, 50.0);
        const Matrix shifted = row_softmax(Var::constant((x.array() + c).matrix())).value();
        CHECK(testsupport::max_abs_diff(s, shifted) <= 1e-12);
    }
}

TEST_CASE("matmul equals a naive triple loop exactly up to 8x8") {
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        Gen g(seed);
        const Index r = g.index(1, 8), k = g.index(1, 8), c = g.index(1, 8);
        const Matrix a = g.matrix(r, k), b = g.matrix(k, c);
        CHECK(matmul(Var::constant(a), Var::constant(b)).value() == testsupport::naive_matmul(a, b));
    }
}

TEST_CASE("an input the output does not depend on gets exactly zero gradient") {
    Gen g(5);
    const Var used = Var::parameter(g.matrix(2, 2));
    const Var unused = Var::parameter(g.matrix(2, 2));
    const Var mixed = add(used, scale(unused, 0.0));  // connected, but with zero influence
    backward(sum(exp(used)));
    CHECK(unused.grad() == Matrix::Zero(2, 2));
    CHECK(mixed.value().rows() == 2);
}

TEST_CASE("gradients agree with an independent finite-difference oracle") {
    Gen g(11);
    const Matrix w = g.matrix(3, 4);
    auto f = [&](const Matrix& m) {
        const Var x = Var::constant(m);
        return sum(mul(tanh(row_softmax(matmul(x, transpose(x)))), Var::constant(Matrix::Ones(3, 3)))).item() +
               sum(mul(sigmoid(x), Var::constant(w))).item() + std_rows(x).value().sum();
    };
    const Matrix x0 = g.matrix(3, 4);
    const Var x = Var::parameter(x0);
    const Var out = add(add(sum(mul(tanh(row_softmax(matmul(x, transpose(x)))), Var::constant(Matrix::Ones(3, 3)))),
                            sum(mul(sigmoid(x), Var::constant(w)))),
                        sum(std_rows(x)));
    CHECK(out.item() == doctest::Approx(f(x0)).epsilon(1e-14));
    backward(out);
    CHECK(testsupport::max_abs_diff(x.grad(), testsupport::numeric_gradient(f, x0)) < 1e-8);
}

TEST_CASE("grad_check contract") {
    const GraphFn quadratic = [](std::span<const Var> in) { return sum(mul(in[0], in[0])); };
    const std::pair<Index, Index> shape[] = {{3, 3}};
    CHECK(grad_check(quadratic, shape, 1e-5, 7).max_rel_error <= 1e-6);
    CHECK_THROWS(grad_check(quadratic, shape, 0.0, 7));
    CHECK_THROWS(grad_check(quadratic, shape, 2e-3, 7));

    const GraphFn constant = [](std::span<const Var>) { return Var::scalar(4.0); };
    const GradCheckResult r = grad_check(constant, shape, 1e-5, 1);
    CHECK(r.max_rel_error == 0.0);
    CHECK(r.analytic == 0.0);
    CHECK(r.numeric == 0.0);
}

TEST_CASE("every op passes the finite-difference suite") {
    const auto report = run_grad_suite(20240601, 100);
    for (const auto& e : report.entries) {
        INFO(e.name, " seed ", e.worst_seed);
        CHECK(e.worst.max_rel_error <= 1e-4);
    }
}

TEST_CASE("the suite detects a corrupted gradient") {
    testing_hooks::corrupt_gradient_of("sigmoid");
    const auto report = run_grad_suite(1, 3, 1e-5, {"sigmoid", "tanh"});
    testing_hooks::corrupt_gradient_of("");
    REQUIRE(report.entries.size() == 2);
    for (const auto& e : report.entries) {
        if (e.name == "sigmoid") CHECK(e.worst.max_rel_error > 0.1);
        else CHECK(e.worst.max_rel_error <= 1e-4);
    }
}

TEST_CASE("gru_sequence reverse runs from the last row and stays position-aligned") {
    Gen g(2);
    const Matrix x = g.matrix(4, 3);
    const Var w = Var::constant(g.matrix(3, 6)), u = Var::constant(g.matrix(2, 6)), b = Var::constant(g.matrix(1, 6));
    const Matrix flipped = x.colwise().reverse();
    const Matrix fwd_of_flipped = gru_sequence(Var::constant(flipped), w, u, b, false).value();
    const Matrix rev = gru_sequence(Var::constant(x), w, u, b, true).value();
    CHECK(rev == Matrix(fwd_of_flipped.colwise().reverse()));
}
