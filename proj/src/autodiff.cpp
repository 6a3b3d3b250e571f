#include "gnnsup/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace gnnsup::ad {

namespace {

double sgn(double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }

void check_segments(const Index& segment, Eigen::Index rows, int num_segments) {
    if (static_cast<Eigen::Index>(segment.size()) != rows)
        throw Error(ErrorCode::ShapeMismatch, "segment index length != rows");
    for (int s : segment)
        if (s < 0 || s >= num_segments) throw Error(ErrorCode::ShapeMismatch, "segment id out of range");
}

std::vector<int> segment_counts(const Index& segment, int num_segments) {
    std::vector<int> counts(static_cast<std::size_t>(num_segments), 0);
    for (int s : segment) ++counts[static_cast<std::size_t>(s)];
    return counts;
}

}  // namespace

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), nullptr, false});
    return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), nullptr, true});
    return Var{this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backprop backprop) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(backprop) : nullptr, needs});
    return Var{this, nodes_.size() - 1};
}

void Tape::accumulate(Var v, const Matrix& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (g.rows() != n.value.rows() || g.cols() != n.value.cols())
        throw Error(ErrorCode::ShapeMismatch, "gradient shape does not match value");
    if (n.grad.size() == 0)
        n.grad = g;
    else
        n.grad += g;
}

void Tape::accumulate(Var v, Matrix&& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (g.rows() != n.value.rows() || g.cols() != n.value.cols())
        throw Error(ErrorCode::ShapeMismatch, "gradient shape does not match value");
    if (n.grad.size() == 0)
        n.grad = std::move(g);
    else
        n.grad += g;
}

void Tape::backward(Var loss) {
    if (nodes_[loss.id].value.rows() != 1 || nodes_[loss.id].value.cols() != 1)
        throw Error(ErrorCode::ShapeMismatch, "backward requires a 1x1 loss");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad = Matrix::Ones(1, 1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backprop || n.grad.size() == 0) continue;
        // Backprop only writes to earlier nodes, so the buffer stays valid.
        n.backprop(*this, n.grad);
    }
    for (const Node& n : nodes_)
        if (!n.backprop && n.grad.size() != 0 && !all_finite(n.grad)) throw Error(ErrorCode::NonFinite, "gradient");
}

Var matmul(Var a, Var b) {
    if (a.cols() != b.rows()) throw Error(ErrorCode::ShapeMismatch, "matmul inner dimensions");
    Matrix out = a.value() * b.value();
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
        if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
        if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
    });
}

Var sparse_matmul(std::shared_ptr<const SparseMatrix> s, Var b) {
    if (s->cols() != b.rows()) throw Error(ErrorCode::ShapeMismatch, "sparse_matmul inner dimensions");
    Matrix out = (*s) * b.value();
    return b.tape->record(std::move(out), {b}, [s, b](Tape& t, const Matrix& g) {
        t.accumulate(b, Matrix(s->transpose() * g));
    });
}

Var add(Var a, Var b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorCode::ShapeMismatch, "add");
    Matrix out = a.value() + b.value();
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var add_bias(Var a, Var bias) {
    if (bias.rows() != 1 || bias.cols() != a.cols()) throw Error(ErrorCode::ShapeMismatch, "add_bias");
    Matrix out = a.value().rowwise() + bias.value().row(0);
    return a.tape->record(std::move(out), {a, bias}, [a, bias](Tape& t, const Matrix& g) {
        t.accumulate(a, g);
        if (t.requires_grad(bias)) t.accumulate(bias, Matrix(g.colwise().sum()));
    });
}

Var scale(Var a, double c) {
    Matrix out = a.value() * c;
    return a.tape->record(std::move(out), {a}, [a, c](Tape& t, const Matrix& g) { t.accumulate(a, g * c); });
}

Var relu(Var a) {
    Matrix out = a.value().cwiseMax(0.0);
    return a.tape->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
        const Matrix& x = t.value(a);
        t.accumulate(a, Matrix((x.array() > 0.0).select(g, 0.0)));
    });
}

Var leaky_relu(Var a, double slope) {
    const Matrix& x = a.value();
    Matrix out = (x.array() > 0.0).select(x, slope * x);
    return a.tape->record(std::move(out), {a}, [a, slope](Tape& t, const Matrix& g) {
        const Matrix& x = t.value(a);
        t.accumulate(a, Matrix((x.array() > 0.0).select(g, slope * g)));
    });
}

static double logistic(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

Var sigmoid(Var a) {
    Matrix out = a.value().unaryExpr(&logistic);
    return a.tape->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
        const Matrix s = t.value(a).unaryExpr(&logistic);
        t.accumulate(a, Matrix(g.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix()))));
    });
}

Var sum_all(Var a) {
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    const Eigen::Index r = a.rows(), c = a.cols();
    return a.tape->record(std::move(out), {a}, [a, r, c](Tape& t, const Matrix& g) {
        t.accumulate(a, Matrix(Matrix::Constant(r, c, g(0, 0))));
    });
}

Var gather_rows(Var a, std::shared_ptr<const Index> index) {
    const Matrix& x = a.value();
    Matrix out(static_cast<Eigen::Index>(index->size()), x.cols());
    for (std::size_t k = 0; k < index->size(); ++k) {
        const int src = (*index)[k];
        if (src < 0 || src >= x.rows()) throw Error(ErrorCode::ShapeMismatch, "gather index out of range");
        out.row(static_cast<Eigen::Index>(k)) = x.row(src);
    }
    const Eigen::Index rows = x.rows();
    return a.tape->record(std::move(out), {a}, [a, index, rows](Tape& t, const Matrix& g) {
        Matrix ga = Matrix::Zero(rows, g.cols());
        for (std::size_t k = 0; k < index->size(); ++k) ga.row((*index)[k]) += g.row(static_cast<Eigen::Index>(k));
        t.accumulate(a, ga);
    });
}

Var scatter_add_rows(Var a, std::shared_ptr<const Index> index, int out_rows) {
    const Matrix& x = a.value();
    check_segments(*index, x.rows(), out_rows);
    Matrix out = Matrix::Zero(out_rows, x.cols());
    for (std::size_t k = 0; k < index->size(); ++k) out.row((*index)[k]) += x.row(static_cast<Eigen::Index>(k));
    return a.tape->record(std::move(out), {a}, [a, index](Tape& t, const Matrix& g) {
        Matrix ga(static_cast<Eigen::Index>(index->size()), g.cols());
        for (std::size_t k = 0; k < index->size(); ++k) ga.row(static_cast<Eigen::Index>(k)) = g.row((*index)[k]);
        t.accumulate(a, ga);
    });
}

Var mul_rows(Var a, Var weights) {
    if (weights.cols() != 1 || weights.rows() != a.rows()) throw Error(ErrorCode::ShapeMismatch, "mul_rows");
    Matrix out = a.value().array().colwise() * weights.value().col(0).array();
    return a.tape->record(std::move(out), {a, weights}, [a, weights](Tape& t, const Matrix& g) {
        const Matrix& x = t.value(a);
        const Matrix& w = t.value(weights);
        if (t.requires_grad(a)) t.accumulate(a, Matrix(g.array().colwise() * w.col(0).array()));
        if (t.requires_grad(weights)) t.accumulate(weights, Matrix(x.cwiseProduct(g).rowwise().sum()));
    });
}

Var segment_softmax(Var scores, std::shared_ptr<const Index> segment, int num_segments) {
    const Matrix& z = scores.value();
    if (z.cols() != 1) throw Error(ErrorCode::ShapeMismatch, "segment_softmax expects a column");
    check_segments(*segment, z.rows(), num_segments);
    std::vector<double> seg_max(static_cast<std::size_t>(num_segments), -std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < segment->size(); ++k) {
        double& m = seg_max[static_cast<std::size_t>((*segment)[k])];
        m = std::max(m, z(static_cast<Eigen::Index>(k), 0));
    }
    Matrix out(z.rows(), 1);
    std::vector<double> seg_sum(static_cast<std::size_t>(num_segments), 0.0);
    for (std::size_t k = 0; k < segment->size(); ++k) {
        const auto s = static_cast<std::size_t>((*segment)[k]);
        out(static_cast<Eigen::Index>(k), 0) = std::exp(z(static_cast<Eigen::Index>(k), 0) - seg_max[s]);
        seg_sum[s] += out(static_cast<Eigen::Index>(k), 0);
    }
    for (std::size_t k = 0; k < segment->size(); ++k)
        out(static_cast<Eigen::Index>(k), 0) /= seg_sum[static_cast<std::size_t>((*segment)[k])];
    auto alpha = std::make_shared<const Matrix>(out);
    return scores.tape->record(std::move(out), {scores},
                               [scores, segment, num_segments, alpha](Tape& t, const Matrix& g) {
                                   // d softmax: alpha * (g - sum_seg(alpha * g))
                                   std::vector<double> dot(static_cast<std::size_t>(num_segments), 0.0);
                                   for (std::size_t k = 0; k < segment->size(); ++k) {
                                       const auto r = static_cast<Eigen::Index>(k);
                                       dot[static_cast<std::size_t>((*segment)[k])] += (*alpha)(r, 0) * g(r, 0);
                                   }
                                   Matrix gs(g.rows(), 1);
                                   for (std::size_t k = 0; k < segment->size(); ++k) {
                                       const auto r = static_cast<Eigen::Index>(k);
                                       gs(r, 0) = (*alpha)(r, 0) *
                                                  (g(r, 0) - dot[static_cast<std::size_t>((*segment)[k])]);
                                   }
                                   t.accumulate(scores, gs);
                               });
}

Var segment_mean(Var a, std::shared_ptr<const Index> segment, int num_segments) {
    const Matrix& x = a.value();
    check_segments(*segment, x.rows(), num_segments);
    auto counts = std::make_shared<const std::vector<int>>(segment_counts(*segment, num_segments));
    Matrix out = Matrix::Zero(num_segments, x.cols());
    for (std::size_t k = 0; k < segment->size(); ++k) out.row((*segment)[k]) += x.row(static_cast<Eigen::Index>(k));
    for (int s = 0; s < num_segments; ++s)
        if ((*counts)[static_cast<std::size_t>(s)] > 0) out.row(s) /= (*counts)[static_cast<std::size_t>(s)];
    const Eigen::Index rows = x.rows();
    return a.tape->record(std::move(out), {a}, [a, segment, counts, rows](Tape& t, const Matrix& g) {
        Matrix ga(rows, g.cols());
        for (std::size_t k = 0; k < segment->size(); ++k) {
            const int s = (*segment)[k];
            ga.row(static_cast<Eigen::Index>(k)) = g.row(s) / (*counts)[static_cast<std::size_t>(s)];
        }
        t.accumulate(a, ga);
    });
}

Var segment_max(Var a, std::shared_ptr<const Index> segment, int num_segments) {
    const Matrix& x = a.value();
    check_segments(*segment, x.rows(), num_segments);
    Matrix out = Matrix::Zero(num_segments, x.cols());
    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(num_segments * x.cols()), -1);
    for (std::size_t k = 0; k < segment->size(); ++k) {
        const int s = (*segment)[k];
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            int& best = (*argmax)[static_cast<std::size_t>(s * x.cols() + c)];
            const double v = x(static_cast<Eigen::Index>(k), c);
            if (best < 0 || v > out(s, c)) {
                best = static_cast<int>(k);
                out(s, c) = v;
            }
        }
    }
    const Eigen::Index rows = x.rows(), cols = x.cols();
    return a.tape->record(std::move(out), {a}, [a, argmax, num_segments, rows, cols](Tape& t, const Matrix& g) {
        Matrix ga = Matrix::Zero(rows, cols);
        for (int s = 0; s < num_segments; ++s)
            for (Eigen::Index c = 0; c < cols; ++c) {
                const int k = (*argmax)[static_cast<std::size_t>(s * cols + c)];
                if (k >= 0) ga(k, c) += g(s, c);
            }
        t.accumulate(a, ga);
    });
}

Var segment_power_mean(Var a, std::shared_ptr<const Index> segment, int num_segments, double p, double eps) {
    if (!(p >= 1.0) || !(eps > 0.0)) throw Error(ErrorCode::InvalidConfig, "power mean requires p >= 1, eps > 0");
    const Matrix& x = a.value();
    check_segments(*segment, x.rows(), num_segments);
    const auto counts = segment_counts(*segment, num_segments);
    auto mean_t = std::make_shared<Matrix>(Matrix::Zero(num_segments, x.cols()));
    for (std::size_t k = 0; k < segment->size(); ++k) {
        const int s = (*segment)[k];
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            const double v = x(static_cast<Eigen::Index>(k), c);
            (*mean_t)(s, c) += sgn(v) * std::pow(std::abs(v) + eps, p);
        }
    }
    Matrix out = Matrix::Zero(num_segments, x.cols());
    for (int s = 0; s < num_segments; ++s) {
        const auto n = counts[static_cast<std::size_t>(s)];
        if (n == 0) continue;
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            double& m = (*mean_t)(s, c);
            m /= n;
            out(s, c) = sgn(m) * std::pow(std::abs(m) + eps, 1.0 / p);
        }
    }
    require_finite(out, "power mean pooling");
    auto count_ptr = std::make_shared<const std::vector<int>>(counts);
    return a.tape->record(std::move(out), {a}, [a, segment, count_ptr, mean_t, p, eps](Tape& t, const Matrix& g) {
        const Matrix& x = t.value(a);
        Matrix ga(x.rows(), x.cols());
        for (std::size_t k = 0; k < segment->size(); ++k) {
            const int s = (*segment)[k];
            const double n = (*count_ptr)[static_cast<std::size_t>(s)];
            for (Eigen::Index c = 0; c < x.cols(); ++c) {
                const double m = (*mean_t)(s, c);
                const double v = x(static_cast<Eigen::Index>(k), c);
                ga(static_cast<Eigen::Index>(k), c) =
                    g(s, c) * std::pow(std::abs(m) + eps, 1.0 / p - 1.0) * std::pow(std::abs(v) + eps, p - 1.0) / n;
            }
        }
        t.accumulate(a, ga);
    });
}

double bce_term(double z, double y) { return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))); }

Var bce_with_logits(Var logits, const Matrix& targets) {
    const Matrix& z = logits.value();
    if (z.rows() != targets.rows() || z.cols() != targets.cols())
        throw Error(ErrorCode::ShapeMismatch, "bce logits/targets");
    const double count = static_cast<double>(z.size());
    double total = 0.0;
    for (Eigen::Index r = 0; r < z.rows(); ++r)
        for (Eigen::Index c = 0; c < z.cols(); ++c) total += bce_term(z(r, c), targets(r, c));
    Matrix out(1, 1);
    out(0, 0) = total / count;
    auto y = std::make_shared<const Matrix>(targets);
    return logits.tape->record(std::move(out), {logits}, [logits, y, count](Tape& t, const Matrix& g) {
        const Matrix& z = t.value(logits);
        Matrix gz = z.unaryExpr(&logistic);
        gz = (gz - *y) * (g(0, 0) / count);
        t.accumulate(logits, gz);
    });
}

}  // namespace gnnsup::ad
