#include "mmcda/diff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <unordered_set>

namespace mmcda {

namespace {

std::string corrupted_op;

using detail::Node;

void push(Node& in, const Matrix& g) {
    if (in.requires_grad) in.accumulate(g);
}

Node& input(Node& self, std::size_t k) { return *self.inputs[k]; }

[[noreturn]] void shape_mismatch(const char* op, const Matrix& a, const Matrix& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_of(a) + " vs " + shape_of(b));
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) shape_mismatch(op, a.value(), b.value());
}

template <typename F, typename G>
Var unary(const Var& a, const char* op, F&& forward, G&& derivative) {
    Matrix out = a.value().unaryExpr(forward);
    return make_result(std::move(out), op, {a}, [derivative](Node& self) {
        Node& x = input(self, 0);
        if (!x.requires_grad) return;
        Matrix g = self.grad;
        for (Index i = 0; i < g.size(); ++i) g.data()[i] *= derivative(x.value.data()[i], self.value.data()[i]);
        x.accumulate(g);
    });
}

}  // namespace

void detail::Node::accumulate(const Matrix& g) {
    if (grad.size() == 0) {
        grad = g;
    } else {
        grad += g;
    }
}

Var Var::parameter(Matrix value) {
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->op = "parameter";
    return Var(std::move(n));
}

Var Var::constant(Matrix value) {
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    n->op = "constant";
    return Var(std::move(n));
}

Matrix Var::grad() const {
    if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
    return node_->grad;
}

double Var::item() const {
    if (rows() != 1 || cols() != 1) throw ShapeError("item: expected 1x1, got " + shape_of(value()));
    return value()(0, 0);
}

void Var::set_value(const Matrix& v) {
    if (!node_->inputs.empty() || node_->backprop) throw std::logic_error("set_value: not a leaf");
    if (v.rows() != rows() || v.cols() != cols()) shape_mismatch("set_value", value(), v);
    node_->value = v;
}

void Var::zero_grad() {
    node_->grad.resize(0, 0);
    node_->backward_done = false;
}

Var make_result(Matrix value, const char* op, std::vector<Var> inputs,
                std::function<void(detail::Node&)> backprop) {
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    n->op = op;
    for (const auto& v : inputs) n->requires_grad = n->requires_grad || v.requires_grad();
    if (n->requires_grad) {
        n->inputs.reserve(inputs.size());
        for (auto& v : inputs) n->inputs.push_back(v.handle());
        n->backprop = std::move(backprop);
    }
    return Var(std::move(n));
}

void backward(const Var& output) {
    Node& root = output.node();
    if (output.rows() != 1 || output.cols() != 1)
        throw ShapeError("backward: output must be 1x1, got " + shape_of(output.value()));
    if (root.backward_done) throw std::logic_error("backward: already run on this output");
    root.backward_done = true;
    if (!root.requires_grad) return;

    // Iterative post-order DFS gives a topological order (inputs before users).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{&root, 0}};
    seen.insert(&root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.accumulate(Matrix::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node& n = **it;
        if (!n.backprop || n.grad.size() == 0) continue;
        if (!corrupted_op.empty() && corrupted_op == n.op) n.grad *= 1.5;
        n.backprop(n);
    }
}

// ---- ops -------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    require_same_shape("add", a, b);
    return make_result(a.value() + b.value(), "add", {a, b}, [](Node& self) {
        push(input(self, 0), self.grad);
        push(input(self, 1), self.grad);
    });
}

Var add_row(const Var& a, const Var& r) {
    if (r.rows() != 1 || r.cols() != a.cols()) shape_mismatch("add_row", a.value(), r.value());
    Matrix out = a.value().rowwise() + r.value().row(0);
    return make_result(std::move(out), "add_row", {a, r}, [](Node& self) {
        push(input(self, 0), self.grad);
        Node& rn = input(self, 1);
        if (!rn.requires_grad) return;
        Matrix g = Matrix::Zero(1, self.grad.cols());
        for (Index i = 0; i < self.grad.rows(); ++i)
            for (Index j = 0; j < self.grad.cols(); ++j) g(0, j) += self.grad(i, j);
        rn.accumulate(g);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape("sub", a, b);
    return make_result(a.value() - b.value(), "sub", {a, b}, [](Node& self) {
        push(input(self, 0), self.grad);
        push(input(self, 1), -self.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape("mul", a, b);
    Matrix out = a.value().cwiseProduct(b.value());
    return make_result(std::move(out), "mul", {a, b}, [](Node& self) {
        Node& x = input(self, 0);
        Node& y = input(self, 1);
        push(x, self.grad.cwiseProduct(y.value));
        push(y, self.grad.cwiseProduct(x.value));
    });
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) shape_mismatch("matmul", a.value(), b.value());
    return make_result(ordered_product(a.value(), b.value()), "matmul", {a, b}, [](Node& self) {
        Node& x = input(self, 0);
        Node& y = input(self, 1);
        if (x.requires_grad) x.accumulate(ordered_product<double>(self.grad, y.value.transpose()));
        if (y.requires_grad) y.accumulate(ordered_product<double>(x.value.transpose(), self.grad));
    });
}

Var transpose(const Var& a) {
    return make_result(a.value().transpose(), "transpose", {a},
                       [](Node& self) { push(input(self, 0), self.grad.transpose()); });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no operands");
    const Index r = parts[0].rows();
    Index c = 0;
    for (const auto& p : parts) {
        if (p.rows() != r) shape_mismatch("concat_cols", parts[0].value(), p.value());
        c += p.cols();
    }
    Matrix out(r, c);
    Index at = 0;
    for (const auto& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    return make_result(std::move(out), "concat_cols", {parts.begin(), parts.end()}, [](Node& self) {
        Index off = 0;
        for (auto& in : self.inputs) {
            const Index w = in->value.cols();
            if (in->requires_grad) in->accumulate(self.grad.middleCols(off, w));
            off += w;
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no operands");
    const Index c = parts[0].cols();
    Index r = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) shape_mismatch("concat_rows", parts[0].value(), p.value());
        r += p.rows();
    }
    Matrix out(r, c);
    Index at = 0;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    return make_result(std::move(out), "concat_rows", {parts.begin(), parts.end()}, [](Node& self) {
        Index off = 0;
        for (auto& in : self.inputs) {
            const Index h = in->value.rows();
            if (in->requires_grad) in->accumulate(self.grad.middleRows(off, h));
            off += h;
        }
    });
}

Var scale(const Var& a, double s) {
    return make_result(a.value() * s, "scale", {a}, [s](Node& self) { push(input(self, 0), self.grad * s); });
}

Var add_scalar(const Var& a, double s) {
    Matrix out = a.value().array() + s;
    return make_result(std::move(out), "add_scalar", {a}, [](Node& self) { push(input(self, 0), self.grad); });
}

Var row_softmax(const Var& a) {
    const Matrix& x = a.value();
    Matrix out(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (Index j = 0; j < x.cols(); ++j) m = std::max(m, x(i, j));
        double z = 0.0;
        for (Index j = 0; j < x.cols(); ++j) {
            out(i, j) = std::exp(x(i, j) - m);
            z += out(i, j);
        }
        for (Index j = 0; j < x.cols(); ++j) out(i, j) /= z;
    }
    return make_result(std::move(out), "row_softmax", {a}, [](Node& self) {
        Node& x = input(self, 0);
        if (!x.requires_grad) return;
        const Matrix& s = self.value;
        Matrix g(s.rows(), s.cols());
        for (Index i = 0; i < s.rows(); ++i) {
            double dot = 0.0;
            for (Index j = 0; j < s.cols(); ++j) dot += self.grad(i, j) * s(i, j);
            for (Index j = 0; j < s.cols(); ++j) g(i, j) = s(i, j) * (self.grad(i, j) - dot);
        }
        x.accumulate(g);
    });
}

Var mean_rows(const Var& a) {
    const Matrix& x = a.value();
    if (x.rows() == 0) throw ShapeError("mean_rows: empty operand");
    Matrix out = Matrix::Zero(1, x.cols());
    for (Index i = 0; i < x.rows(); ++i)
        for (Index j = 0; j < x.cols(); ++j) out(0, j) += x(i, j);
    out /= static_cast<double>(x.rows());
    return make_result(std::move(out), "mean_rows", {a}, [](Node& self) {
        Node& x = input(self, 0);
        if (!x.requires_grad) return;
        const double n = static_cast<double>(x.value.rows());
        Matrix g = self.grad.replicate(x.value.rows(), 1) / n;
        x.accumulate(g);
    });
}

Var std_rows(const Var& a) {
    const Matrix& x = a.value();
    const Index n = x.rows();
    if (n == 0) throw ShapeError("std_rows: empty operand");
    Matrix mean = Matrix::Zero(1, x.cols());
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < x.cols(); ++j) mean(0, j) += x(i, j);
    mean /= static_cast<double>(n);
    Matrix out = Matrix::Zero(1, x.cols());
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < x.cols(); ++j) {
            const double d = x(i, j) - mean(0, j);
            out(0, j) += d * d;
        }
    for (Index j = 0; j < x.cols(); ++j) out(0, j) = std::sqrt(out(0, j) / static_cast<double>(n));
    return make_result(std::move(out), "std_rows", {a}, [mean](Node& self) {
        Node& x = input(self, 0);
        if (!x.requires_grad) return;
        const Index n = x.value.rows();
        Matrix g = Matrix::Zero(n, x.value.cols());
        for (Index j = 0; j < x.value.cols(); ++j) {
            const double s = self.value(0, j);
            if (s == 0.0) continue;
            const double coef = self.grad(0, j) / (static_cast<double>(n) * s);
            for (Index i = 0; i < n; ++i) g(i, j) = coef * (x.value(i, j) - mean(0, j));
        }
        x.accumulate(g);
    });
}

Var l2_norm(const Var& a) {
    double ss = 0.0;
    const Matrix& x = a.value();
    for (Index i = 0; i < x.size(); ++i) ss += x.data()[i] * x.data()[i];
    const double norm = std::sqrt(ss);
    return make_result(Matrix::Constant(1, 1, norm), "l2_norm", {a}, [](Node& self) {
        Node& x = input(self, 0);
        const double norm = self.value(0, 0);
        if (!x.requires_grad || norm == 0.0) return;
        x.accumulate(x.value * (self.grad(0, 0) / norm));
    });
}

Var normalize_rows(const Var& a) {
    const Matrix& x = a.value();
    Matrix out = Matrix::Zero(x.rows(), x.cols());
    Matrix norms(x.rows(), 1);
    for (Index i = 0; i < x.rows(); ++i) {
        double ss = 0.0;
        for (Index j = 0; j < x.cols(); ++j) ss += x(i, j) * x(i, j);
        norms(i, 0) = std::sqrt(ss);
        if (norms(i, 0) > 0.0)
            for (Index j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) / norms(i, 0);
    }
    return make_result(std::move(out), "normalize_rows", {a}, [norms](Node& self) {
        Node& x = input(self, 0);
        if (!x.requires_grad) return;
        const Matrix& y = self.value;
        Matrix g = Matrix::Zero(y.rows(), y.cols());
        for (Index i = 0; i < y.rows(); ++i) {
            if (norms(i, 0) == 0.0) continue;
            double dot = 0.0;
            for (Index j = 0; j < y.cols(); ++j) dot += self.grad(i, j) * y(i, j);
            for (Index j = 0; j < y.cols(); ++j) g(i, j) = (self.grad(i, j) - dot * y(i, j)) / norms(i, 0);
        }
        x.accumulate(g);
    });
}

Var sum(const Var& a) {
    double s = 0.0;
    const Matrix& x = a.value();
    for (Index i = 0; i < x.size(); ++i) s += x.data()[i];
    return make_result(Matrix::Constant(1, 1, s), "sum", {a}, [](Node& self) {
        Node& x = input(self, 0);
        if (x.requires_grad) x.accumulate(Matrix::Constant(x.value.rows(), x.value.cols(), self.grad(0, 0)));
    });
}

Var sqrt(const Var& a) {
    if ((a.value().array() < 0.0).any()) throw DomainError("sqrt: negative operand");
    return unary(
        a, "sqrt", [](double v) { return std::sqrt(v); },
        [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var exp(const Var& a) {
    return unary(
        a, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
    if ((a.value().array() <= 0.0).any()) throw DomainError("log: non-positive operand");
    return unary(
        a, "log", [](double v) { return std::log(v); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(const Var& a) {
    return unary(
        a, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
    return unary(
        a, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Var abs(const Var& a) {
    return unary(
        a, "abs", [](double v) { return std::abs(v); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var hinge(const Var& a) {
    return unary(
        a, "hinge", [](double v) { return v > 0.0 ? v : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var max_over(const Var& a, Axis axis) {
    const Matrix& x = a.value();
    if (x.size() == 0) throw ShapeError("max_over: empty operand");
    const bool per_row = axis == Axis::cols;
    const Index n = per_row ? x.rows() : x.cols();
    const Index len = per_row ? x.cols() : x.rows();
    std::vector<Index> arg(static_cast<std::size_t>(n));
    Matrix out = per_row ? Matrix(n, 1) : Matrix(1, n);
    for (Index k = 0; k < n; ++k) {
        Index best = 0;
        for (Index t = 1; t < len; ++t) {
            const double v = per_row ? x(k, t) : x(t, k);
            const double b = per_row ? x(k, best) : x(best, k);
            if (v > b) best = t;
        }
        arg[static_cast<std::size_t>(k)] = best;
        out.data()[k] = per_row ? x(k, best) : x(best, k);
    }
    return make_result(std::move(out), "max_over", {a}, [arg, per_row](Node& self) {
        Node& x = input(self, 0);
        if (!x.requires_grad) return;
        Matrix g = Matrix::Zero(x.value.rows(), x.value.cols());
        for (std::size_t k = 0; k < arg.size(); ++k) {
            const Index ki = static_cast<Index>(k);
            if (per_row)
                g(ki, arg[k]) += self.grad.data()[k];
            else
                g(arg[k], ki) += self.grad.data()[k];
        }
        x.accumulate(g);
    });
}

Var pick(const Var& a, Index r, Index c) {
    if (r < 0 || r >= a.rows() || c < 0 || c >= a.cols())
        throw ShapeError("pick: index (" + std::to_string(r) + "," + std::to_string(c) + ") outside " +
                         shape_of(a.value()));
    return make_result(Matrix::Constant(1, 1, a.value()(r, c)), "pick", {a}, [r, c](Node& self) {
        Node& x = input(self, 0);
        if (!x.requires_grad) return;
        Matrix g = Matrix::Zero(x.value.rows(), x.value.cols());
        g(r, c) = self.grad(0, 0);
        x.accumulate(g);
    });
}

Var row(const Var& a, Index r) {
    if (r < 0 || r >= a.rows()) throw ShapeError("row: index " + std::to_string(r) + " outside " + shape_of(a.value()));
    return make_result(a.value().row(r), "row", {a}, [r](Node& self) {
        Node& x = input(self, 0);
        if (!x.requires_grad) return;
        Matrix g = Matrix::Zero(x.value.rows(), x.value.cols());
        g.row(r) = self.grad;
        x.accumulate(g);
    });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
    if (ids.empty()) throw ShapeError("gather_rows: no ids");
    Matrix out(static_cast<Index>(ids.size()), table.cols());
    for (std::size_t k = 0; k < ids.size(); ++k) {
        if (ids[k] < 0 || ids[k] >= table.rows())
            throw std::out_of_range("gather_rows: id " + std::to_string(ids[k]) + " outside table of " +
                                    std::to_string(table.rows()) + " rows");
        out.row(static_cast<Index>(k)) = table.value().row(ids[k]);
    }
    std::vector<int> idv(ids.begin(), ids.end());
    return make_result(std::move(out), "gather_rows", {table}, [idv](Node& self) {
        Node& t = input(self, 0);
        if (!t.requires_grad) return;
        Matrix g = Matrix::Zero(t.value.rows(), t.value.cols());
        for (std::size_t k = 0; k < idv.size(); ++k) g.row(idv[k]) += self.grad.row(static_cast<Index>(k));
        t.accumulate(g);
    });
}

Var pairwise_sq_dist(const Var& u, const Var& w) {
    if (u.cols() != w.cols()) shape_mismatch("pairwise_sq_dist", u.value(), w.value());
    const Matrix& U = u.value();
    const Matrix& W = w.value();
    Matrix out(U.rows(), W.rows());
    for (Index i = 0; i < U.rows(); ++i)
        for (Index j = 0; j < W.rows(); ++j) {
            double s = 0.0;
            for (Index k = 0; k < U.cols(); ++k) {
                const double d = U(i, k) - W(j, k);
                s += d * d;
            }
            out(i, j) = s;
        }
    return make_result(std::move(out), "pairwise_sq_dist", {u, w}, [](Node& self) {
        Node& un = input(self, 0);
        Node& wn = input(self, 1);
        const Matrix& U = un.value;
        const Matrix& W = wn.value;
        Matrix gu = Matrix::Zero(U.rows(), U.cols());
        Matrix gw = Matrix::Zero(W.rows(), W.cols());
        for (Index i = 0; i < U.rows(); ++i)
            for (Index j = 0; j < W.rows(); ++j) {
                const double g = 2.0 * self.grad(i, j);
                for (Index k = 0; k < U.cols(); ++k) {
                    const double d = U(i, k) - W(j, k);
                    gu(i, k) += g * d;
                    gw(j, k) -= g * d;
                }
            }
        push(un, gu);
        push(wn, gw);
    });
}

namespace {

struct GruTrace {
    // Per processed step (in processing order): state before the step, gates.
    Matrix h_prev, z, r, n;
    std::vector<Index> rows;  // x row consumed at each step
};

inline double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

Var gru_sequence(const Var& x, const Var& w, const Var& u, const Var& b, bool reverse) {
    const Index T = x.rows();
    const Index in = x.cols();
    const Index h3 = w.cols();
    if (h3 % 3 != 0 || h3 == 0) throw ShapeError("gru_sequence: W must be in x 3h, got " + shape_of(w.value()));
    const Index h = h3 / 3;
    if (w.rows() != in) shape_mismatch("gru_sequence(x, W)", x.value(), w.value());
    if (u.rows() != h || u.cols() != h3) throw ShapeError("gru_sequence: U must be " + std::to_string(h) + "x" +
                                                          std::to_string(h3) + ", got " + shape_of(u.value()));
    if (b.rows() != 1 || b.cols() != h3) throw ShapeError("gru_sequence: b must be 1x" + std::to_string(h3) +
                                                          ", got " + shape_of(b.value()));
    if (T == 0) throw ShapeError("gru_sequence: empty sequence");

    const Matrix& X = x.value();
    const Matrix& W = w.value();
    const Matrix& U = u.value();
    const Matrix& B = b.value();

    // Input contributions for all rows at once.
    Matrix xw = ordered_product(X, W);
    auto trace = std::make_shared<GruTrace>();
    trace->h_prev.resize(T, h);
    trace->z.resize(T, h);
    trace->r.resize(T, h);
    trace->n.resize(T, h);
    trace->rows.resize(static_cast<std::size_t>(T));

    Matrix out(T, h);
    std::vector<double> state(static_cast<std::size_t>(h), 0.0), rh(static_cast<std::size_t>(h));
    for (Index s = 0; s < T; ++s) {
        const Index t = reverse ? T - 1 - s : s;
        trace->rows[static_cast<std::size_t>(s)] = t;
        for (Index j = 0; j < h; ++j) trace->h_prev(s, j) = state[static_cast<std::size_t>(j)];
        for (Index j = 0; j < h; ++j) {
            double az = xw(t, j) + B(0, j);
            double ar = xw(t, h + j) + B(0, h + j);
            for (Index k = 0; k < h; ++k) {
                az += state[static_cast<std::size_t>(k)] * U(k, j);
                ar += state[static_cast<std::size_t>(k)] * U(k, h + j);
            }
            trace->z(s, j) = logistic(az);
            trace->r(s, j) = logistic(ar);
        }
        for (Index k = 0; k < h; ++k) rh[static_cast<std::size_t>(k)] = trace->r(s, k) * state[static_cast<std::size_t>(k)];
        for (Index j = 0; j < h; ++j) {
            double an = xw(t, 2 * h + j) + B(0, 2 * h + j);
            for (Index k = 0; k < h; ++k) an += rh[static_cast<std::size_t>(k)] * U(k, 2 * h + j);
            trace->n(s, j) = std::tanh(an);
        }
        for (Index j = 0; j < h; ++j) {
            const double z = trace->z(s, j);
            state[static_cast<std::size_t>(j)] = z * state[static_cast<std::size_t>(j)] + (1.0 - z) * trace->n(s, j);
            out(t, j) = state[static_cast<std::size_t>(j)];
        }
    }

    return make_result(std::move(out), "gru_sequence", {x, w, u, b}, [trace, h](Node& self) {
        Node& xn = input(self, 0);
        Node& wn = input(self, 1);
        Node& un = input(self, 2);
        Node& bn = input(self, 3);
        const Matrix& X = xn.value;
        const Matrix& W = wn.value;
        const Matrix& U = un.value;
        const Index T = X.rows();
        const Index in = X.cols();

        Matrix da(T, 3 * h);  // pre-activation gradients, indexed by x row
        Matrix gu = Matrix::Zero(h, 3 * h);
        std::vector<double> dh(static_cast<std::size_t>(h), 0.0), dh_prev(static_cast<std::size_t>(h)),
            drh(static_cast<std::size_t>(h));
        for (Index s = T - 1; s >= 0; --s) {
            const Index t = trace->rows[static_cast<std::size_t>(s)];
            for (Index j = 0; j < h; ++j) dh[static_cast<std::size_t>(j)] += self.grad(t, j);
            for (Index j = 0; j < h; ++j) {
                const double d = dh[static_cast<std::size_t>(j)];
                const double z = trace->z(s, j);
                const double n = trace->n(s, j);
                const double hp = trace->h_prev(s, j);
                da(t, j) = d * (hp - n) * z * (1.0 - z);
                da(t, 2 * h + j) = d * (1.0 - z) * (1.0 - n * n);
                dh_prev[static_cast<std::size_t>(j)] = d * z;
            }
            // candidate path: (r * h_prev) U_n
            for (Index k = 0; k < h; ++k) {
                double acc = 0.0;
                for (Index j = 0; j < h; ++j) acc += da(t, 2 * h + j) * U(k, 2 * h + j);
                drh[static_cast<std::size_t>(k)] = acc;
            }
            for (Index k = 0; k < h; ++k) {
                const double r = trace->r(s, k);
                const double hp = trace->h_prev(s, k);
                da(t, h + k) = drh[static_cast<std::size_t>(k)] * hp * r * (1.0 - r);
                dh_prev[static_cast<std::size_t>(k)] += drh[static_cast<std::size_t>(k)] * r;
                for (Index j = 0; j < h; ++j) gu(k, 2 * h + j) += r * hp * da(t, 2 * h + j);
            }
            // update/reset recurrent paths
            for (Index k = 0; k < h; ++k) {
                const double hp = trace->h_prev(s, k);
                double acc = 0.0;
                for (Index j = 0; j < 2 * h; ++j) {
                    gu(k, j) += hp * da(t, j);
                    acc += da(t, j) * U(k, j);
                }
                dh_prev[static_cast<std::size_t>(k)] += acc;
            }
            dh.swap(dh_prev);
        }

        if (xn.requires_grad) xn.accumulate(ordered_product<double>(da, W.transpose()));
        if (wn.requires_grad) wn.accumulate(ordered_product<double>(X.transpose(), da));
        push(un, gu);
        if (bn.requires_grad) {
            Matrix gb = Matrix::Zero(1, 3 * h);
            for (Index t = 0; t < T; ++t)
                for (Index j = 0; j < 3 * h; ++j) gb(0, j) += da(t, j);
            bn.accumulate(gb);
        }
        (void)in;
    });
}

// ---- gradient checking -------------------------------------------------------

GradCheckResult grad_check(const GraphFn& graph, std::span<const Matrix> inputs, double perturbation) {
    if (!(perturbation > 0.0) || perturbation > 1e-3)
        throw std::invalid_argument("grad_check: perturbation must lie in (0, 1e-3]");

    std::vector<Var> params;
    params.reserve(inputs.size());
    for (const auto& m : inputs) params.push_back(Var::parameter(m));
    Var out = graph(params);
    if (out.rows() != 1 || out.cols() != 1) throw ShapeError("grad_check: graph output must be 1x1");
    backward(out);

    std::vector<Matrix> point(inputs.begin(), inputs.end());
    auto evaluate = [&]() {
        std::vector<Var> consts;
        consts.reserve(point.size());
        for (const auto& m : point) consts.push_back(Var::constant(m));
        return graph(consts).item();
    };

    GradCheckResult res;
    const double center = evaluate();
    for (std::size_t i = 0; i < point.size(); ++i) {
        const Matrix analytic = params[i].grad();
        for (Index e = 0; e < point[i].size(); ++e) {
            double& slot = point[i].data()[e];
            const double saved = slot;
            slot = saved + perturbation;
            const double up = evaluate();
            slot = saved - perturbation;
            const double down = evaluate();
            slot = saved;
            const double numeric = (up - down) / (2.0 * perturbation);
            const double a = analytic.data()[e];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            // A non-smooth point inside [x-h, x+h] shows up as one-sided slopes
            // that disagree by about twice the central-difference error.
            const double one_sided_gap = std::abs((up - center) - (center - down)) / perturbation;
            if (rel > 1e-6 && one_sided_gap >= 1.5 * std::abs(a - numeric)) ++res.kinked_entries;
            if (rel > res.max_rel_error || !std::isfinite(rel)) {
                res.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
                res.worst_input = i;
                res.worst_entry = e;
                res.analytic = a;
                res.numeric = numeric;
            }
        }
    }
    return res;
}

GradCheckResult grad_check(const GraphFn& graph, std::span<const std::pair<Index, Index>> shapes,
                           double perturbation, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::vector<Matrix> inputs;
    for (auto [r, c] : shapes) {
        Matrix m(r, c);
        for (Index k = 0; k < m.size(); ++k) m.data()[k] = unif(rng);
        inputs.push_back(std::move(m));
    }
    return grad_check(graph, inputs, perturbation);
}

void testing_hooks::corrupt_gradient_of(const std::string& op) { corrupted_op = op; }

}  // namespace mmcda
