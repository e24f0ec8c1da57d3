#include "mmcda/xmodal.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace mmcda;
using testsupport::Gen;

namespace {
Matrix row2(double a, double b) {
    Matrix m(1, 2);
    m << a, b;
    return m;
}
double cos_of(const Matrix& v, const Matrix& q) {
    return similarity_matrix(Var::constant(v), Var::constant(q), CosineMode::signed_cosine).values.value()(0, 0);
}
}  // namespace

TEST_CASE("cosine similarity hand cases") {
    CHECK(cos_of(row2(1, 0), row2(0, 1)) == 0.0);
    CHECK(cos_of(row2(1, 1), row2(1, 1)) == doctest::Approx(1.0).epsilon(1e-15));
    // 3*4 + 4*3 = 24 over 5 * 5.
    CHECK(std::abs(cos_of(row2(3, 4), row2(4, 3)) - 24.0 / 25.0) < 1e-15);
    CHECK(cos_of(row2(0, 0), row2(4, 3)) == 0.0);
    CHECK(cos_of(row2(1, 0), row2(-1, 0)) == -1.0);
    const auto abs_mode = similarity_matrix(Var::constant(row2(1, 0)), Var::constant(row2(-1, 0)), CosineMode::absolute);
    CHECK(abs_mode.values.value()(0, 0) == 1.0);
    CHECK_THROWS_AS(similarity_matrix(Var::constant(row2(1, 0)), Var::constant(Matrix::Ones(1, 3)),
                                      CosineMode::signed_cosine),
                    ShapeError);
}

TEST_CASE("similarity normalizations, value ranges and scale invariance") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Gen g(seed);
        const Index t = g.index(1, 7), n = g.index(1, 7), d = g.index(1, 5);
        const Matrix v = g.matrix(t, d), q = g.matrix(n, d);
        const auto mode = g.coin() ? CosineMode::signed_cosine : CosineMode::absolute;
        const auto s = similarity_matrix(Var::constant(v), Var::constant(q), mode);
        const Matrix& c = s.values.value();
        const double lo = mode == CosineMode::absolute ? 0.0 : -1.0;
        CHECK(c.minCoeff() >= lo - 1e-15);
        CHECK(c.maxCoeff() <= 1.0 + 1e-15);
        for (Index i = 0; i < t; ++i) CHECK(std::abs(s.row_normalized.value().row(i).sum() - 1.0) <= 1e-12);
        for (Index j = 0; j < n; ++j) CHECK(std::abs(s.col_normalized.value().col(j).sum() - 1.0) <= 1e-12);

        const double alpha = g.uniform(0.01, 100.0), beta = g.uniform(0.01, 100.0);
        const auto scaled = similarity_matrix(Var::constant(alpha * v), Var::constant(beta * q), mode);
        CHECK(testsupport::max_abs_diff(scaled.values.value(), c) <= 1e-12);
        CHECK(testsupport::max_abs_diff(scaled.row_normalized.value(), s.row_normalized.value()) <= 1e-12);
        CHECK(testsupport::max_abs_diff(scaled.col_normalized.value(), s.col_normalized.value()) <= 1e-12);

        // X rows are convex combinations of query rows.
        const auto att = bidirectional_attention(Var::constant(v), Var::constant(q), s);
        const Matrix& x = att.video_to_query.value();
        for (Index k = 0; k < d; ++k) {
            CHECK(x.col(k).minCoeff() >= q.col(k).minCoeff() - 1e-12);
            CHECK(x.col(k).maxCoeff() <= q.col(k).maxCoeff() + 1e-12);
        }
    }
}

TEST_CASE("bidirectional attention singleton cases") {
    Gen g(1);
    const Matrix v = g.matrix(4, 3), q = g.matrix(1, 3);
    const auto s = similarity_matrix(Var::constant(v), Var::constant(q), CosineMode::signed_cosine);
    const auto att = bidirectional_attention(Var::constant(v), Var::constant(q), s);
    for (Index i = 0; i < 4; ++i) CHECK(att.video_to_query.value().row(i) == q);

    const Matrix v1 = g.matrix(1, 3);
    const auto s1 = similarity_matrix(Var::constant(v1), Var::constant(q), CosineMode::signed_cosine);
    const auto att1 = bidirectional_attention(Var::constant(v1), Var::constant(q), s1);
    CHECK(att1.query_to_video.value() == v1);

    CHECK_THROWS_AS(bidirectional_attention(Var::constant(v1), Var::constant(q), s), ShapeError);
}

TEST_CASE("bidirectional attention 2x2 by hand") {
    Matrix v(2, 2), q(2, 2);
    v << 1, 0,
         0, 2;
    q << 3, 0,
         1, 1;
    const auto s = similarity_matrix(Var::constant(v), Var::constant(q), CosineMode::signed_cosine);
    const double r = 1.0 / std::sqrt(2.0);
    // C = [[1, r], [0, r]].
    const double e1 = std::exp(1.0), er = std::exp(r);
    Matrix cr(2, 2), cc(2, 2);
    cr << e1 / (e1 + er), er / (e1 + er),
          1.0 / (1.0 + er), er / (1.0 + er);
    cc << e1 / (e1 + 1.0), 0.5,
          1.0 / (e1 + 1.0), 0.5;
    CHECK(testsupport::max_abs_diff(s.row_normalized.value(), cr) < 1e-15);
    CHECK(testsupport::max_abs_diff(s.col_normalized.value(), cc) < 1e-15);

    Matrix x(2, 2), ccT_v(2, 2), y(2, 2);
    for (Index i = 0; i < 2; ++i)
        for (Index k = 0; k < 2; ++k) x(i, k) = cr(i, 0) * q(0, k) + cr(i, 1) * q(1, k);
    for (Index j = 0; j < 2; ++j)
        for (Index k = 0; k < 2; ++k) ccT_v(j, k) = cc(0, j) * v(0, k) + cc(1, j) * v(1, k);
    for (Index i = 0; i < 2; ++i)
        for (Index k = 0; k < 2; ++k) y(i, k) = cr(i, 0) * ccT_v(0, k) + cr(i, 1) * ccT_v(1, k);
    const auto att = bidirectional_attention(Var::constant(v), Var::constant(q), s);
    CHECK(testsupport::max_abs_diff(att.video_to_query.value(), x) < 1e-14);
    CHECK(testsupport::max_abs_diff(att.query_to_video.value(), y) < 1e-14);
}

TEST_CASE("fusion output shape and shape errors") {
    ParamInit init(3);
    const auto fusion = FusionParams::init(4, init);
    Gen g(3);
    const Var v = Var::constant(g.matrix(5, 4)), q = Var::constant(g.matrix(3, 4));
    const Matrix out = cross_modal_fuse(v, q, fusion, CosineMode::signed_cosine).value();
    CHECK(out.rows() == 5);
    CHECK(out.cols() == 4);
    CHECK_THROWS_AS(fuse_features(v, q, v, fusion), ShapeError);
    CHECK_THROWS_AS(FusionParams::init(5, init), ConfigError);
}

TEST_CASE("fusion recurrence matches a hand-stepped GRU") {
    // d = 2, hidden 1 per direction. Inputs of ones give [V, X, V*X, V*Y] = ones(8).
    ParamInit init(0);
    auto fusion = FusionParams::init(2, init);
    auto set_cell = [](GruCell& cell, double wz, double wr, double wn, double uz, double ur, double un, double bz,
                       double br, double bn) {
        Matrix w(8, 3), u(1, 3), b(1, 3);
        for (Index i = 0; i < 8; ++i) w.row(i) << wz, wr, wn;
        u << uz, ur, un;
        b << bz, br, bn;
        cell.w.set_value(w);
        cell.u.set_value(u);
        cell.b.set_value(b);
    };
    set_cell(fusion.gru.forward, 0.1, -0.05, 0.2, 0.5, 0.3, -0.4, 0.0, 0.1, -0.2);
    set_cell(fusion.gru.backward, -0.1, 0.05, 0.1, 0.2, -0.3, 0.6, 0.3, 0.0, 0.1);
    const Var ones = Var::constant(Matrix::Ones(2, 2));
    const Matrix out = fuse_features(ones, ones, ones, fusion).value();

    auto sig = [](double a) { return 1.0 / (1.0 + std::exp(-a)); };
    auto step = [&](double h, double wz, double wr, double wn, double uz, double ur, double un, double bz, double br,
                    double bn) {
        const double z = sig(8 * wz + h * uz + bz);
        const double r = sig(8 * wr + h * ur + br);
        const double n = std::tanh(8 * wn + (r * h) * un + bn);
        return z * h + (1 - z) * n;
    };
    const double f1 = step(0.0, 0.1, -0.05, 0.2, 0.5, 0.3, -0.4, 0.0, 0.1, -0.2);
    const double f2 = step(f1, 0.1, -0.05, 0.2, 0.5, 0.3, -0.4, 0.0, 0.1, -0.2);
    const double b2 = step(0.0, -0.1, 0.05, 0.1, 0.2, -0.3, 0.6, 0.3, 0.0, 0.1);
    const double b1 = step(b2, -0.1, 0.05, 0.1, 0.2, -0.3, 0.6, 0.3, 0.0, 0.1);
    Matrix expected(2, 2);
    expected << f1, b1,
                f2, b2;
    CHECK(testsupport::max_abs_diff(out, expected) < 1e-14);
}

TEST_CASE("gradient through the full fuse path") {
    for (auto mode : {CosineMode::signed_cosine, CosineMode::absolute}) {
        ParamInit init(9);
        const auto fusion = FusionParams::init(4, init);
        Gen g(9);
        const Var v = Var::parameter(g.matrix(3, 4)), q = Var::parameter(g.matrix(2, 4));
        NamedParams named{{"video", v}, {"query", q}};
        fusion.collect("fusion", named);
        const Var weights = Var::constant(g.matrix(3, 4));
        const auto check = testsupport::param_gradient_check(
            named, [&] { return sum(mul(cross_modal_fuse(v, q, fusion, mode), weights)); });
        INFO(check.worst);
        CHECK(check.max_rel_error <= 1e-4);
    }
}
