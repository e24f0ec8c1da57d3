#include "mmcda/gradsuite.hpp"

#include "mmcda/encoders.hpp"
#include "mmcda/losses.hpp"
#include "mmcda/xmodal.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

namespace mmcda {

namespace {

using Rng = std::mt19937_64;

struct Instance {
    GraphFn graph;
    std::vector<Matrix> inputs;
};

struct Case {
    std::string name;
    std::function<Instance(Rng&)> make;
};

Matrix uniform(Rng& rng, Index r, Index c, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
    return m;
}

// Reduce to a scalar with fixed random weights so that every output entry
// carries a distinct upstream gradient.
Var weighted_sum(const Var& y, const Matrix& weights) { return sum(mul(y, Var::constant(weights))); }

// Single-input op applied to an r x c matrix.
Case unary(std::string name, Index r, Index c, std::function<Var(const Var&)> op, double lo = -1.0,
           double hi = 1.0) {
    return {std::move(name), [=](Rng& rng) {
                Matrix x = uniform(rng, r, c, lo, hi);
                const Var probe = op(Var::constant(x));
                Matrix w = uniform(rng, probe.rows(), probe.cols());
                return Instance{[op, w](std::span<const Var> in) { return weighted_sum(op(in[0]), w); }, {x}};
            }};
}

Case binary(std::string name, std::pair<Index, Index> sa, std::pair<Index, Index> sb,
            std::function<Var(const Var&, const Var&)> op) {
    return {std::move(name), [=](Rng& rng) {
                Matrix a = uniform(rng, sa.first, sa.second);
                Matrix b = uniform(rng, sb.first, sb.second);
                const Var probe = op(Var::constant(a), Var::constant(b));
                Matrix w = uniform(rng, probe.rows(), probe.cols());
                return Instance{[op, w](std::span<const Var> in) { return weighted_sum(op(in[0], in[1]), w); },
                                {a, b}};
            }};
}

// Loss-level fixture: B paired sequences per domain at d = 4. B = 4 keeps the
// spread of the B sample means (sigma) away from zero in practice.
constexpr Index kBatch = 4, kFrames = 3, kWords = 2, kDim = 4;

struct LossInputs {
    EncodedBatch source, target;
    Projections source_projection, target_projection;
};

// Inputs laid out as: per domain [videos..., queries..., fused...], then
// P_v, P_q, P_V, P_Q.
std::vector<Matrix> loss_matrices(Rng& rng) {
    std::vector<Matrix> m;
    for (int domain = 0; domain < 2; ++domain) {
        for (Index i = 0; i < kBatch; ++i) m.push_back(uniform(rng, kFrames, kDim));
        for (Index i = 0; i < kBatch; ++i) m.push_back(uniform(rng, kWords, kDim));
        for (Index i = 0; i < kBatch; ++i) m.push_back(uniform(rng, kFrames, kDim));
    }
    for (int p = 0; p < 4; ++p) m.push_back(uniform(rng, kDim, kDim));
    return m;
}

LossInputs unpack(std::span<const Var> in) {
    LossInputs li;
    std::size_t k = 0;
    for (EncodedBatch* b : {&li.source, &li.target}) {
        for (Index i = 0; i < kBatch; ++i) b->videos.push_back(in[k++]);
        for (Index i = 0; i < kBatch; ++i) b->queries.push_back(in[k++]);
        for (Index i = 0; i < kBatch; ++i) b->fused.push_back(in[k++]);
    }
    li.source_projection = {in[k], in[k + 1]};
    li.target_projection = {in[k + 2], in[k + 3]};
    return li;
}

LossWeights check_weights() {
    LossWeights w;
    w.bandwidth = Bandwidth::fixed(1.0);  // the median rule is not differentiable
    return w;
}

Case loss_case(std::string name, std::function<Var(const LossInputs&)> loss) {
    return {std::move(name), [loss](Rng& rng) {
                return Instance{[loss](std::span<const Var> in) { return loss(unpack(in)); }, loss_matrices(rng)};
            }};
}

// Weights follow the model's own initializer range, U(+-1/sqrt(fan_in)).
Matrix weights(Rng& rng, Index r, Index c, Index fan_in) {
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return uniform(rng, r, c, -a, a);
}

void push_cell(std::vector<Matrix>& m, Rng& rng, Index in, Index hidden) {
    m.push_back(weights(rng, in, 3 * hidden, in));
    m.push_back(weights(rng, hidden, 3 * hidden, hidden));
    m.push_back(weights(rng, 1, 3 * hidden, hidden));
}

std::vector<Case> build_cases() {
    std::vector<Case> c;
    c.push_back(binary("add", {3, 4}, {3, 4}, [](const Var& a, const Var& b) { return add(a, b); }));
    c.push_back(binary("add_row", {3, 4}, {1, 4}, [](const Var& a, const Var& b) { return add_row(a, b); }));
    c.push_back(binary("sub", {3, 4}, {3, 4}, [](const Var& a, const Var& b) { return sub(a, b); }));
    c.push_back(binary("mul", {3, 4}, {3, 4}, [](const Var& a, const Var& b) { return mul(a, b); }));
    c.push_back(binary("matmul", {3, 4}, {4, 2}, [](const Var& a, const Var& b) { return matmul(a, b); }));
    c.push_back(unary("transpose", 3, 4, [](const Var& a) { return transpose(a); }));
    c.push_back(binary("concat_cols", {3, 2}, {3, 3}, [](const Var& a, const Var& b) {
        const Var parts[] = {a, b, a};
        return concat_cols(parts);
    }));
    c.push_back(binary("concat_rows", {2, 3}, {1, 3}, [](const Var& a, const Var& b) {
        const Var parts[] = {b, a, b};
        return concat_rows(parts);
    }));
    c.push_back(unary("scale", 3, 4, [](const Var& a) { return scale(a, -1.7); }));
    c.push_back(unary("add_scalar", 3, 4, [](const Var& a) { return add_scalar(a, 0.3); }));
    c.push_back(unary("row_softmax", 3, 4, [](const Var& a) { return row_softmax(a); }));
    c.push_back(unary("mean_rows", 3, 4, [](const Var& a) { return mean_rows(a); }));
    c.push_back(unary("std_rows", 4, 3, [](const Var& a) { return std_rows(a); }));
    c.push_back(unary("l2_norm", 3, 4, [](const Var& a) { return l2_norm(a); }));
    c.push_back(unary("normalize_rows", 3, 4, [](const Var& a) { return normalize_rows(a); }));
    c.push_back(unary("sum", 3, 4, [](const Var& a) { return sum(a); }));
    c.push_back(unary("sqrt", 3, 4, [](const Var& a) { return sqrt(a); }, 0.1, 2.0));
    c.push_back(unary("exp", 3, 4, [](const Var& a) { return exp(a); }));
    c.push_back(unary("log", 3, 4, [](const Var& a) { return log(a); }, 0.1, 2.0));
    c.push_back(unary("tanh", 3, 4, [](const Var& a) { return tanh(a); }));
    c.push_back(unary("sigmoid", 3, 4, [](const Var& a) { return sigmoid(a); }));
    c.push_back(unary("abs", 3, 4, [](const Var& a) { return abs(a); }));
    c.push_back(unary("hinge", 3, 4, [](const Var& a) { return hinge(a); }));
    c.push_back(unary("max_over_cols", 3, 4, [](const Var& a) { return max_over(a, Axis::cols); }));
    c.push_back(unary("max_over_rows", 3, 4, [](const Var& a) { return max_over(a, Axis::rows); }));
    c.push_back(unary("pick", 3, 4, [](const Var& a) { return pick(a, 1, 2); }));
    c.push_back(unary("row", 3, 4, [](const Var& a) { return row(a, 2); }));
    c.push_back(unary("gather_rows", 5, 3, [](const Var& a) {
        const int ids[] = {4, 0, 4, 2};
        return gather_rows(a, ids);
    }));
    c.push_back(binary("pairwise_sq_dist", {3, 4}, {2, 4}, [](const Var& a, const Var& b) {
        return pairwise_sq_dist(a, b);
    }));
    for (bool reverse : {false, true}) {
        c.push_back({reverse ? "gru_sequence_reverse" : "gru_sequence", [reverse](Rng& rng) {
                         std::vector<Matrix> m{uniform(rng, 4, 3)};
                         push_cell(m, rng, 3, 2);
                         Matrix w = uniform(rng, 4, 2);
                         return Instance{[reverse, w](std::span<const Var> in) {
                                             return weighted_sum(gru_sequence(in[0], in[1], in[2], in[3], reverse), w);
                                         },
                                         std::move(m)};
                     }});
    }
    c.push_back(binary("cosine_matrix", {3, 4}, {2, 4}, [](const Var& a, const Var& b) {
        return cosine_matrix(a, b, CosineMode::signed_cosine);
    }));
    c.push_back(binary("cosine_matrix_absolute", {3, 4}, {2, 4}, [](const Var& a, const Var& b) {
        return cosine_matrix(a, b, CosineMode::absolute);
    }));
    c.push_back(binary("mmd", {3, 4}, {4, 4}, [](const Var& a, const Var& b) {
        return mmd(a, b, MmdVariant::standard, Bandwidth::fixed(1.0));
    }));
    c.push_back(binary("mmd_additive", {3, 4}, {4, 4}, [](const Var& a, const Var& b) {
        return mmd(a, b, MmdVariant::additive, Bandwidth::fixed(1.0));
    }));
    const auto mode = CosineMode::signed_cosine;
    c.push_back(loss_case("L_SL", [mode](const LossInputs& l) {
        return supervised_loss(l.source.fused, l.source.queries, l.source_projection.video,
                               l.source_projection.query, 0.2, mode);
    }));
    c.push_back(loss_case("L_DV", [](const LossInputs& l) {
        return domain_alignment_loss(l.source, l.target, check_weights()).video;
    }));
    c.push_back(loss_case("L_DQ", [](const LossInputs& l) {
        return domain_alignment_loss(l.source, l.target, check_weights()).query;
    }));
    c.push_back(loss_case("L_M1", [mode](const LossInputs& l) {
        return cross_modal_consistent_loss(l.target.fused, l.target.queries, l.target_projection.video,
                                           l.target_projection.query, 0.2, mode);
    }));
    c.push_back(loss_case("L_M2", [](const LossInputs& l) {
        return cross_modal_distribution_loss(l.target.videos, l.target.queries);
    }));
    c.push_back(loss_case("L_SA", [](const LossInputs& l) {
        return specific_alignment_loss(l.target.videos[0], l.target.queries);
    }));
    c.push_back(loss_case("L_final", [mode](const LossInputs& l) {
        return final_loss(l.source, l.target, l.source_projection, l.target_projection, check_weights(), mode).total;
    }));
    return c;
}

std::uint64_t instance_seed(std::uint64_t seed, Index i) {
    std::uint64_t x = seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(i) + 1;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

double GradSuiteReport::max_rel_error() const { return worst().worst.max_rel_error; }

const GradSuiteEntry& GradSuiteReport::worst() const {
    if (entries.empty()) throw std::logic_error("empty grad-check report");
    return *std::max_element(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        return a.worst.max_rel_error < b.worst.max_rel_error;
    });
}

GradCheckResult run_grad_case(const std::string& name, std::uint64_t instance_seed, double perturbation) {
    for (const auto& c : build_cases()) {
        if (c.name != name) continue;
        Rng rng(instance_seed);
        const Instance inst = c.make(rng);
        return grad_check(inst.graph, inst.inputs, perturbation);
    }
    throw std::invalid_argument("run_grad_case: unknown case '" + name + "'");
}

std::vector<std::string> grad_suite_cases() {
    std::vector<std::string> names;
    for (const auto& c : build_cases()) names.push_back(c.name);
    return names;
}

GradSuiteReport run_grad_suite(std::uint64_t seed, Index instances, double perturbation,
                               const std::vector<std::string>& only) {
    if (instances < 1) throw std::invalid_argument("run_grad_suite: instances must be >= 1");
    const auto cases = build_cases();
    for (const auto& name : only)
        if (std::none_of(cases.begin(), cases.end(), [&](const Case& c) { return c.name == name; }))
            throw std::invalid_argument("run_grad_suite: unknown case '" + name + "'");

    GradSuiteReport report;
    report.instances = instances;
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        const Case& c = cases[ci];
        if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
        GradSuiteEntry entry{c.name, {}, 0};
        // Instances whose stencil straddles a non-smooth point are redrawn: the
        // central difference is meaningless there, whatever backward computes.
        Index drawn = 0;
        for (Index i = 0; i < instances; ++drawn) {
            if (drawn >= 10 * instances) throw std::runtime_error("run_grad_suite: too many kinked instances in " + c.name);
            const std::uint64_t s = instance_seed(seed ^ (0x51ED2701ULL * (ci + 1)), drawn);
            Rng rng(s);
            const Instance inst = c.make(rng);
            const GradCheckResult r = grad_check(inst.graph, inst.inputs, perturbation);
            if (r.kinked_entries > 0) {
                ++entry.redrawn;
                continue;
            }
            if (i == 0 || r.max_rel_error > entry.worst.max_rel_error) {
                entry.worst = r;
                entry.worst_seed = s;
            }
            ++i;
        }
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace mmcda
