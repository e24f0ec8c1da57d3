#include "mmcda/encoders.hpp"
#include "mmcda/model.hpp"
#include "support.hpp"

#include <doctest.h>

#include <set>

using namespace mmcda;
using testsupport::Gen;

namespace {

EncoderParams video_params(Index in, Index d, std::uint64_t seed, EncoderOrder order = EncoderOrder::attention_first) {
    ParamInit init(seed);
    EncoderConfig c;
    c.input_dim = in;
    c.model_dim = d;
    c.hidden = 3;
    c.heads = 2;
    c.order = order;
    return EncoderParams::init(c, init);
}

EncoderParams query_params(Index vocab, Index d, std::uint64_t seed) {
    ParamInit init(seed);
    EncoderConfig c;
    c.input_dim = 4;
    c.model_dim = d;
    c.hidden = 3;
    c.heads = 2;
    c.vocab_size = vocab;
    c.order = EncoderOrder::gru_first;
    return EncoderParams::init(c, init);
}

Var mean_all(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

}  // namespace

TEST_CASE("video encoding preserves length and maps to the model dim") {
    const auto p = video_params(4, 4, 1);
    Gen g(1);
    const FeatureSequence raw(g.matrix(3, 4));
    const FeatureSequence out = encode_video(raw, p);
    CHECK(out.length() == 3);
    CHECK(out.dim() == 4);
    CHECK(out == encode_video(raw, p));
    CHECK_THROWS_AS(encode_video(FeatureSequence(g.matrix(3, 5)), p), ShapeError);
}

TEST_CASE("encoding is length-equivariant for both orders") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        Gen g(seed);
        const Index len = g.index(1, 12);
        const auto order = g.coin() ? EncoderOrder::attention_first : EncoderOrder::gru_first;
        const auto p = video_params(6, 4, seed, order);
        CHECK(encode_video(FeatureSequence(g.matrix(len, 6)), p).length() == len);
    }
}

TEST_CASE("query encoding") {
    const auto p = query_params(10, 4, 2);
    const int one[] = {3};
    CHECK(encode_query_values(one, p).length() == 1);
    CHECK(encode_query_values(one, p).dim() == 4);

    const int bad[] = {1, 10};
    CHECK_THROWS_AS(encode_query_values(bad, p), std::out_of_range);
    const int negative[] = {-1};
    CHECK_THROWS_AS(encode_query_values(negative, p), std::out_of_range);

    const int forward[] = {1, 5, 7};
    const int reversed[] = {7, 5, 1};
    const Matrix a = encode_query_values(forward, p).values();
    const Matrix b = encode_query_values(reversed, p).values();
    CHECK(testsupport::max_abs_diff(a, b.colwise().reverse()) > 1e-6);

    const auto video_only = video_params(4, 4, 2);
    CHECK_THROWS(encode_query(forward, video_only));
}

TEST_CASE("zero embedding and zero GRU biases give bounded outputs") {
    auto p = query_params(6, 4, 3);
    p.embedding.set_value(Matrix::Zero(6, 4));
    p.gru.forward.b.set_value(Matrix::Zero(1, 9));
    p.gru.backward.b.set_value(Matrix::Zero(1, 9));
    const int tokens[] = {0, 1, 2, 3};
    // Zero input and zero state: z = r = 1/2, candidate tanh(0) = 0, so every GRU state stays 0.
    const Matrix gru_out = bi_gru(gather_rows(p.embedding, tokens), p.gru).value();
    CHECK(gru_out == Matrix::Zero(4, 6));
    const Matrix out = encode_query_values(tokens, p).values();
    const Matrix bias = p.projection.bias.value();
    for (Index i = 0; i < out.rows(); ++i) CHECK(out.row(i).cwiseAbs().maxCoeff() < 1e3);
    // With the GRU at its fixed point the attention sees identical rows.
    for (Index i = 1; i < out.rows(); ++i) CHECK(testsupport::max_abs_diff(out.row(i), out.row(0)) < 1e-12);
    CHECK(bias.cols() == 4);
}

TEST_CASE("single position attention is the output projection of the value projection") {
    ParamInit init(4);
    const auto mha = MultiHeadAttention::init(4, 2, init);
    Gen g(4);
    const Matrix x = g.matrix(1, 4);
    const auto res = multi_head_self_attention(Var::constant(x), mha);
    Matrix heads(1, 4);
    heads << x * mha.heads[0].value.value(), x * mha.heads[1].value.value();
    CHECK(testsupport::max_abs_diff(res.output.value(), heads * mha.output.value()) < 1e-14);
    for (const auto& w : res.weights) CHECK(w.value()(0, 0) == 1.0);
}

TEST_CASE("attention weights are row-stochastic") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Gen g(seed);
        ParamInit init(seed);
        const auto mha = MultiHeadAttention::init(6, 3, init);
        const auto res = multi_head_self_attention(Var::constant(g.matrix(g.index(1, 9), 6, -3, 3)), mha);
        REQUIRE(res.weights.size() == 3);
        for (const auto& w : res.weights)
            for (Index i = 0; i < w.rows(); ++i) CHECK(std::abs(w.value().row(i).sum() - 1.0) <= 1e-12);
    }
    ParamInit init(0);
    CHECK_THROWS_AS(MultiHeadAttention::init(6, 4, init), ConfigError);
}

TEST_CASE("two-position attention with hand-set weights") {
    // One head, model dim 2, head dim 2, identity query/value maps, key = 2 * identity,
    // identity output. Scores are 2 x x^T / sqrt(2).
    ParamInit init(0);
    auto mha = MultiHeadAttention::init(2, 1, init);
    const Matrix id = Matrix::Identity(2, 2);
    mha.heads[0].query.set_value(id);
    mha.heads[0].key.set_value(2.0 * id);
    mha.heads[0].value.set_value(id);
    mha.output.set_value(id);
    Matrix x(2, 2);
    x << 1, 0,
         1, 1;
    const auto res = multi_head_self_attention(Var::constant(x), mha);
    // Raw scores: [[1,1],[1,2]] * 2/sqrt(2) = sqrt(2) * [[1,1],[1,2]].
    const double s = std::sqrt(2.0);
    const double w10 = std::exp(s) / (std::exp(s) + std::exp(2 * s));
    Matrix weights(2, 2);
    weights << 0.5, 0.5,
               w10, 1 - w10;
    CHECK(testsupport::max_abs_diff(res.weights[0].value(), weights) < 1e-15);
    Matrix expected(2, 2);
    expected << 1.0, 0.5,
                1.0, 1 - w10;
    CHECK(testsupport::max_abs_diff(res.output.value(), expected) < 1e-15);
}

TEST_CASE("bi_gru output width and reversal symmetry") {
    ParamInit init(5);
    const BiGru gru = BiGru::init(3, 4, init);
    Gen g(5);
    const Matrix x = g.matrix(3, 3);
    const Matrix out = bi_gru(Var::constant(x), gru).value();
    CHECK(out.cols() == 8);

    // Swap the cells and reverse the sequence: channels swap and positions reverse.
    const BiGru swapped{gru.backward, gru.forward};
    const Matrix rev = bi_gru(Var::constant(Matrix(x.colwise().reverse())), swapped).value();
    Matrix expected(3, 8);
    const Matrix flipped = out.colwise().reverse();
    expected << flipped.rightCols(4), flipped.leftCols(4);
    CHECK(rev == expected);
    CHECK_THROWS_AS(bi_gru(Var::constant(g.matrix(3, 2)), gru), ShapeError);
}

TEST_CASE("bi_gru gradient check on all weights") {
    ParamInit init(6);
    const BiGru gru = BiGru::init(3, 2, init);
    Gen g(6);
    const Var x = Var::constant(g.matrix(4, 3));
    NamedParams named;
    gru.collect("gru", named);
    const Matrix w = g.matrix(4, 4);
    const auto check = testsupport::param_gradient_check(
        named, [&] { return sum(mul(bi_gru(x, gru), Var::constant(w))); });
    INFO(check.worst);
    CHECK(check.max_rel_error <= 1e-4);
}

TEST_CASE("encoder gradient of mean(output) matches finite differences") {
    for (auto order : {EncoderOrder::attention_first, EncoderOrder::gru_first}) {
        const auto p = video_params(4, 4, 7, order);
        Gen g(7);
        const Var raw = Var::constant(g.matrix(3, 4));
        NamedParams named;
        p.collect("video", named);
        const auto check = testsupport::param_gradient_check(named, [&] { return mean_all(encode_video(raw, p)); });
        INFO(check.worst);
        CHECK(check.max_rel_error <= 1e-4);
    }
}

TEST_CASE("encoder outputs stay finite for inputs in [-10, 10]") {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        Gen g(seed);
        const auto p = video_params(6, 4, seed, g.coin() ? EncoderOrder::attention_first : EncoderOrder::gru_first);
        const Matrix raw = g.matrix(g.index(1, 20), 6, -10.0, 10.0);
        CHECK(all_finite(encode_video(FeatureSequence(raw), p).values()));
    }
}

TEST_CASE("one encoder instance serves both domains") {
    ModelConfig c;
    const ModelParams m = ModelParams::init(c);
    std::set<std::string> prefixes;
    for (const auto& [name, v] : m.parameters()) {
        const std::string head = name.substr(0, name.find('.'));
        prefixes.insert(head);
        if (head == "projection") continue;
        CHECK(name.find("source") == std::string::npos);
        CHECK(name.find("target") == std::string::npos);
    }
    // Only the four projections are domain specific.
    CHECK(prefixes == std::set<std::string>{"video_encoder", "query_encoder", "fusion", "projection"});
    CHECK(m.target_projection.video.id() != m.source_projection.video.id());
    const ModelParams copy = m;
    CHECK(copy.video_encoder.gru.forward.w.id() == m.video_encoder.gru.forward.w.id());
    CHECK(m.clone().video_encoder.gru.forward.w.id() != m.video_encoder.gru.forward.w.id());
}

TEST_CASE("feature sequences reject empty or non-finite values") {
    CHECK_THROWS_AS(FeatureSequence(Matrix(0, 3)), ShapeError);
    Matrix m = Matrix::Zero(2, 2);
    m(1, 1) = std::nan("");
    CHECK_THROWS_AS(FeatureSequence{m}, DomainError);
}
