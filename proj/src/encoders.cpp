#include "mmcda/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace mmcda {

FeatureSequence::FeatureSequence(Matrix values) : values_(std::move(values)) {
    if (values_.rows() < 1 || values_.cols() < 1)
        throw ShapeError("FeatureSequence: needs at least one row and column, got " + shape_of(values_));
    if (!all_finite(values_)) throw DomainError("FeatureSequence: non-finite entries");
}

Var ParamInit::uniform(Index rows, Index cols, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng_);
    return Var::parameter(std::move(m));
}

Linear Linear::init(Index in, Index out, ParamInit& init) {
    const auto fan = static_cast<double>(in);
    return {init.uniform(in, out, fan), init.uniform(1, out, fan)};
}

Var Linear::operator()(const Var& x) const { return add_row(matmul(x, weight), bias); }

void Linear::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

GruCell GruCell::init(Index in, Index hidden, ParamInit& init) {
    const auto h = static_cast<double>(hidden);
    return {init.uniform(in, 3 * hidden, static_cast<double>(in)), init.uniform(hidden, 3 * hidden, h),
            init.uniform(1, 3 * hidden, h)};
}

void GruCell::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".u", u);
    out.emplace_back(prefix + ".b", b);
}

BiGru BiGru::init(Index in, Index hidden, ParamInit& init) {
    GruCell f = GruCell::init(in, hidden, init);
    GruCell b = GruCell::init(in, hidden, init);
    return {f, b};
}

void BiGru::collect(const std::string& prefix, NamedParams& out) const {
    forward.collect(prefix + ".fwd", out);
    backward.collect(prefix + ".bwd", out);
}

MultiHeadAttention MultiHeadAttention::init(Index model_dim, Index head_count, ParamInit& init) {
    if (head_count < 1 || model_dim % head_count != 0)
        throw ConfigError("attention: head count " + std::to_string(head_count) + " must divide model dim " +
                          std::to_string(model_dim));
    const Index head_dim = model_dim / head_count;
    const auto fan = static_cast<double>(model_dim);
    MultiHeadAttention mha;
    for (Index h = 0; h < head_count; ++h) {
        AttentionHead head;
        head.query = init.uniform(model_dim, head_dim, fan);
        head.key = init.uniform(model_dim, head_dim, fan);
        head.value = init.uniform(model_dim, head_dim, fan);
        mha.heads.push_back(head);
    }
    mha.output = init.uniform(model_dim, model_dim, fan);
    return mha;
}

void MultiHeadAttention::collect(const std::string& prefix, NamedParams& out) const {
    for (std::size_t h = 0; h < heads.size(); ++h) {
        const std::string p = prefix + ".head" + std::to_string(h);
        out.emplace_back(p + ".query", heads[h].query);
        out.emplace_back(p + ".key", heads[h].key);
        out.emplace_back(p + ".value", heads[h].value);
    }
    out.emplace_back(prefix + ".output", output);
}

EncoderParams EncoderParams::init(const EncoderConfig& config, ParamInit& init) {
    if (config.input_dim < 1 || config.model_dim < 1 || config.hidden < 1)
        throw ConfigError("encoder: dimensions must be positive");
    EncoderParams p;
    p.config = config;
    if (config.vocab_size > 0) p.embedding = init.uniform(config.vocab_size, config.input_dim, 1.0);
    const Index attention_dim = config.order == EncoderOrder::attention_first ? config.input_dim : config.model_dim;
    p.attention = MultiHeadAttention::init(attention_dim, config.heads, init);
    p.gru = BiGru::init(config.input_dim, config.hidden, init);
    p.projection = Linear::init(2 * config.hidden, config.model_dim, init);
    return p;
}

void EncoderParams::collect(const std::string& prefix, NamedParams& out) const {
    if (embedding.defined()) out.emplace_back(prefix + ".embedding", embedding);
    attention.collect(prefix + ".attention", out);
    gru.collect(prefix + ".gru", out);
    projection.collect(prefix + ".projection", out);
}

AttentionResult multi_head_self_attention(const Var& x, const MultiHeadAttention& params) {
    if (x.cols() != params.model_dim())
        throw ShapeError("multi_head_self_attention: input dim " + std::to_string(x.cols()) + " vs model dim " +
                         std::to_string(params.model_dim()));
    AttentionResult res;
    std::vector<Var> heads;
    for (const auto& head : params.heads) {
        const Var q = matmul(x, head.query);
        const Var k = matmul(x, head.key);
        const Var v = matmul(x, head.value);
        const double temp = 1.0 / std::sqrt(static_cast<double>(head.query.cols()));
        Var w = row_softmax(scale(matmul(q, transpose(k)), temp));
        heads.push_back(matmul(w, v));
        res.weights.push_back(std::move(w));
    }
    res.output = matmul(concat_cols(heads), params.output);
    return res;
}

Var bi_gru(const Var& x, const BiGru& params) {
    if (x.cols() != params.input_dim())
        throw ShapeError("bi_gru: input dim " + std::to_string(x.cols()) + " vs GRU input dim " +
                         std::to_string(params.input_dim()));
    const Var f = gru_sequence(x, params.forward.w, params.forward.u, params.forward.b, false);
    const Var b = gru_sequence(x, params.backward.w, params.backward.u, params.backward.b, true);
    const Var parts[] = {f, b};
    return concat_cols(parts);
}

namespace {

// Attention carries a residual connection so each position keeps its own content.
Var attend(const Var& x, const MultiHeadAttention& mha) { return add(x, multi_head_self_attention(x, mha).output); }

Var encode(const Var& x, const EncoderParams& params) {
    if (params.config.order == EncoderOrder::attention_first) {
        return params.projection(bi_gru(attend(x, params.attention), params.gru));
    }
    return attend(params.projection(bi_gru(x, params.gru)), params.attention);
}

}  // namespace

Var encode_video(const Var& raw, const EncoderParams& params) {
    if (raw.cols() != params.config.input_dim)
        throw ShapeError("encode_video: raw dim " + std::to_string(raw.cols()) + " vs configured input dim " +
                         std::to_string(params.config.input_dim));
    if (raw.rows() < 1) throw ShapeError("encode_video: empty video");
    return encode(raw, params);
}

Var encode_query(std::span<const int> tokens, const EncoderParams& params) {
    if (!params.embedding.defined()) throw std::logic_error("encode_query: encoder has no embedding table");
    if (tokens.empty()) throw ShapeError("encode_query: empty query");
    for (int id : tokens)
        if (id < 0 || id >= params.config.vocab_size)
            throw std::out_of_range("encode_query: token id " + std::to_string(id) + " outside vocabulary of " +
                                    std::to_string(params.config.vocab_size));
    return encode(gather_rows(params.embedding, tokens), params);
}

FeatureSequence encode_video(const FeatureSequence& raw, const EncoderParams& params) {
    return FeatureSequence(encode_video(Var::constant(raw.values()), params).value());
}

FeatureSequence encode_query_values(std::span<const int> tokens, const EncoderParams& params) {
    return FeatureSequence(encode_query(tokens, params).value());
}

}  // namespace mmcda
