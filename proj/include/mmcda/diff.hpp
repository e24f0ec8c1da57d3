#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Var is a cheap handle to a node of a dynamically built graph. Leaves are
// either parameters (gradient tracked) or constants. Every op records its
// inputs and a backward closure; backward() walks the graph in reverse
// topological order from a 1x1 output.

#include "mmcda/errors.hpp"
#include "mmcda/matrix.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mmcda {

class Var;

namespace detail {

struct Node {
    Matrix value;
    Matrix grad;  // empty until first accumulation
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backprop;
    const char* op = "leaf";
    bool requires_grad = false;
    bool backward_done = false;

    void accumulate(const Matrix& g);
};

}  // namespace detail

class Var {
public:
    Var() = default;

    static Var parameter(Matrix value);
    static Var constant(Matrix value);
    static Var scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

    const Matrix& value() const { return node_->value; }
    /// Gradient accumulated by backward(); zeros of value's shape when nothing flowed here.
    Matrix grad() const;

    Index rows() const { return node_->value.rows(); }
    Index cols() const { return node_->value.cols(); }
    double item() const;
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }
    const char* op_name() const { return node_->op; }

    /// Overwrite a leaf's value in place (optimizer updates). Throws for non-leaves.
    void set_value(const Matrix& v);
    void zero_grad();

    /// Identity of the underlying node, used to check sharing.
    const void* id() const { return node_.get(); }

private:
    friend Var make_result(Matrix, const char*, std::vector<Var>, std::function<void(detail::Node&)>);
    friend void backward(const Var&);
    explicit Var(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;

public:
    // Internal access for op implementations.
    detail::Node& node() const { return *node_; }
    const std::shared_ptr<detail::Node>& handle() const { return node_; }
};

/// Build a result node. `backprop` receives the result node; its inputs are
/// available as node.inputs in the order given.
Var make_result(Matrix value, const char* op, std::vector<Var> inputs,
                std::function<void(detail::Node&)> backprop);

/// Propagate d(output)/d(node) to every upstream node. Output must be 1x1, and
/// each output may be back-propagated only once.
void backward(const Var& output);

// ---- elementwise and structural ops -------------------------------------

Var add(const Var& a, const Var& b);
/// a (r x c) plus a broadcast 1 x c row.
Var add_row(const Var& a, const Var& row);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var row_softmax(const Var& a);
/// Mean over rows: r x c -> 1 x c.
Var mean_rows(const Var& a);
/// Population standard deviation over rows: r x c -> 1 x c. Zero-deviation
/// columns get zero gradient.
Var std_rows(const Var& a);
/// Frobenius (l2) norm, 1 x 1. Gradient at the zero matrix is zero.
Var l2_norm(const Var& a);
/// Each row divided by its l2 norm; zero rows stay zero with zero gradient.
Var normalize_rows(const Var& a);
Var sum(const Var& a);

Var sqrt(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var abs(const Var& a);
/// max(0, x) elementwise.
Var hinge(const Var& a);

enum class Axis { rows, cols };
/// Axis::cols reduces each row to its maximum (r x 1); Axis::rows reduces each
/// column (1 x c). Ties route the gradient to the lowest index.
Var max_over(const Var& a, Axis axis);

/// Single entry as a 1 x 1 node.
Var pick(const Var& a, Index row, Index col);
Var row(const Var& a, Index r);
/// Rows of `table` selected by `ids` (embedding lookup); repeated ids accumulate gradient.
Var gather_rows(const Var& table, std::span<const int> ids);

/// Squared euclidean distances between the rows of u (n x d) and w (m x d): n x m.
Var pairwise_sq_dist(const Var& u, const Var& w);

/// Gated recurrent unit run over the rows of x (T x in) with zero initial state.
/// w: in x 3h, u: h x 3h, b: 1 x 3h, gate blocks ordered [update | reset | candidate]:
///   z = sigmoid(x W_z + h U_z + b_z)
///   r = sigmoid(x W_r + h U_r + b_r)
///   n = tanh(x W_n + (r * h) U_n + b_n)
///   h' = z * h + (1 - z) * n
/// With reverse=true the sequence is consumed from the last row to the first;
/// the output stays position-aligned with x.
Var gru_sequence(const Var& x, const Var& w, const Var& u, const Var& b, bool reverse);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

// ---- gradient checking ---------------------------------------------------

using GraphFn = std::function<Var(std::span<const Var>)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    Index worst_entry = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    /// Entries whose stencil straddles a kink (hinge, max, |x|, argmax switch):
    /// the one-sided differences disagree by at least 1.5x the reported error.
    Index kinked_entries = 0;
};

/// Compare backward() against central differences f(x+h) - f(x-h) / 2h for
/// every entry of every input. Relative error per entry is
/// |a - n| / max(|a|, |n|, 1e-8). The error is over every entry; kinked
/// entries are only counted, never excluded.
GradCheckResult grad_check(const GraphFn& graph, std::span<const Matrix> inputs, double perturbation);

/// Same, with inputs of the given shapes drawn uniformly from [-1, 1].
GradCheckResult grad_check(const GraphFn& graph, std::span<const std::pair<Index, Index>> shapes,
                           double perturbation, std::uint64_t seed);

namespace testing_hooks {
/// Scale the input gradients produced by the named op by 1.5. Pass an empty
/// string to clear. Only meant for mutation tests of the gradient suite.
void corrupt_gradient_of(const std::string& op);
}  // namespace testing_hooks

}  // namespace mmcda
