#pragma once

// Tape-based reverse-mode differentiation over a closed operation set:
// matmul (dense and constant-sparse), add, bias broadcast, scaling, ReLU,
// LeakyReLU, sigmoid, row gather/scatter, row scaling, per-segment softmax,
// per-segment mean/max/power-mean pooling and mean BCE-with-logits.
//
// Nodes are appended in evaluation order, so the tape order is a
// topological order and backward() is a single reverse sweep.

#include <Eigen/SparseCore>

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "gnnsup/numerics.hpp"

namespace gnnsup::ad {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Index = std::vector<int>;

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Matrix& value() const;
    const Matrix& grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    /// Leaf whose gradient is accumulated and reported by backward().
    Var parameter(Matrix value);

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    /// Gradient of the last backward() target w.r.t. v; zero-sized if v does
    /// not influence it.
    const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Reverse sweep from a 1x1 loss. Throws NonFinite if any gradient
    /// entry is NaN/Inf.
    void backward(Var loss);

    /// Appends a node. `inputs` decide whether the result needs a gradient;
    /// `backprop` receives the node's own upstream gradient.
    using Backprop = std::function<void(Tape&, const Matrix& upstream)>;
    Var record(Matrix value, std::initializer_list<Var> inputs, Backprop backprop);

    /// Adds `g` into the gradient buffer of v (no-op for constants).
    void accumulate(Var v, const Matrix& g);
    void accumulate(Var v, Matrix&& g);
    template <typename Derived>
    void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
        accumulate(v, Matrix(g));
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backprop backprop;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }
inline const Matrix& Var::grad() const { return tape->grad(*this); }

Var matmul(Var a, Var b);
/// s * b for a constant sparse s.
Var sparse_matmul(std::shared_ptr<const SparseMatrix> s, Var b);
Var add(Var a, Var b);
/// a + 1 * bias, bias is 1 x cols(a).
Var add_bias(Var a, Var bias);
Var scale(Var a, double c);
Var relu(Var a);
Var leaky_relu(Var a, double slope);
Var sigmoid(Var a);
Var sum_all(Var a);

/// out.row(k) = a.row(index[k]).
Var gather_rows(Var a, std::shared_ptr<const Index> index);
/// out.row(index[k]) += a.row(k); out has `out_rows` rows.
Var scatter_add_rows(Var a, std::shared_ptr<const Index> index, int out_rows);
/// out.row(k) = weights(k, 0) * a.row(k); weights is rows(a) x 1.
Var mul_rows(Var a, Var weights);

/// Softmax of a column vector within each segment.
Var segment_softmax(Var scores, std::shared_ptr<const Index> segment, int num_segments);
/// Column-wise mean of the rows in each segment. Empty segments give zeros.
Var segment_mean(Var a, std::shared_ptr<const Index> segment, int num_segments);
/// Column-wise max per segment; the subgradient goes to the first maximal
/// row in row order.
Var segment_max(Var a, std::shared_ptr<const Index> segment, int num_segments);
/// Signed power mean per segment and column:
///   s = mean_i sgn(x_i)(|x_i| + eps)^p,  h = sgn(s)(|s| + eps)^(1/p).
Var segment_power_mean(Var a, std::shared_ptr<const Index> segment, int num_segments, double p,
                       double eps);

/// Mean over all entries of the numerically stable BCE-with-logits.
Var bce_with_logits(Var logits, const Matrix& targets);

/// Elementwise stable BCE value, max(z,0) - z*y + log1p(exp(-|z|)).
double bce_term(double logit, double target);

}  // namespace gnnsup::ad
