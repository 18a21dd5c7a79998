#pragma once

// Reverse-mode differentiation over dense float64 matrices.
//
// A Tape owns every intermediate value created during a forward pass.
// Operations append nodes in evaluation order, so a reverse sweep over the
// node list is a valid topological order for backpropagation. Nodes whose
// parents are all constants store no backward rule, so an evaluation-only
// forward pass costs nothing beyond the values themselves.

#include <cmath>
#include <deque>
#include <functional>
#include <initializer_list>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "m2s/numerics/matrix.hpp"

namespace m2s {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Matrix& value() const;
    /// Accumulated gradient; an empty matrix when no gradient reached the node.
    const Matrix& grad() const;
    bool requires_grad() const;

    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const { return value()(0, 0); }

    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using Backward = std::function<void(const Matrix& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value) { return push(std::move(value), false, nullptr); }
    Var parameter(Matrix value) { return push(std::move(value), true, nullptr); }

    /// Appends the result of an operation. `backward` is kept only when at
    /// least one parent participates in differentiation.
    Var record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
        return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                      std::move(backward));
    }

    Var record(Matrix value, std::span<const Var> parents, Backward backward) {
        bool needs = false;
        for (const Var& p : parents) needs = needs || p.requires_grad();
        return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
    }

    /// Adds `g` into the gradient of `v`; a no-op for constants.
    template <class Expr>
    void accumulate(const Var& v, const Expr& g) {
        Node& n = nodes_[v.id_];
        if (!n.requires_grad) return;
        if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
            throw ShapeError("gradient shape " + shape_string(g.rows(), g.cols()) +
                             " does not match value " + shape_string(n.value));
        }
        if (n.grad.size() == 0) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    /// Backpropagates from a 1x1 node, seeding its gradient with 1.
    void backward(const Var& loss) {
        if (loss.rows() != 1 || loss.cols() != 1) {
            throw ShapeError("backward() needs a scalar, got " + shape_string(loss.value()));
        }
        accumulate(loss, Matrix::Ones(1, 1));
        for (std::size_t i = loss.id_ + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward && n.grad.size() != 0) n.backward(n.grad);
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    friend class Var;

    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        Backward backward;
    };

    Var push(Matrix value, bool requires_grad, Backward backward) {
        nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(backward)});
        return Var(this, nodes_.size() - 1);
    }

    // deque keeps element addresses stable as the tape grows.
    std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->nodes_[id_].value; }
inline const Matrix& Var::grad() const { return tape_->nodes_[id_].grad; }
inline bool Var::requires_grad() const { return tape_->nodes_[id_].requires_grad; }

namespace ad {

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.value()) +
                         " vs " + shape_string(b.value()));
    }
}

inline void require_row_vector(const Var& v, Eigen::Index cols, const char* op) {
    if (v.rows() != 1 || v.cols() != cols) {
        throw ShapeError(std::string(op) + ": expected 1x" + std::to_string(cols) + ", got " +
                         shape_string(v.value()));
    }
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + shape_string(a.value()) + " * " + shape_string(b.value()));
    }
    Tape& t = a.tape();
    return t.record(a.value() * b.value(), {a, b}, [&t, a, b](const Matrix& g) {
        if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
        if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
    });
}

/// a * b^T
inline Var matmul_nt(const Var& a, const Var& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: " + shape_string(a.value()) + " * (" +
                         shape_string(b.value()) + ")^T");
    }
    Tape& t = a.tape();
    return t.record(a.value() * b.value().transpose(), {a, b}, [&t, a, b](const Matrix& g) {
        if (a.requires_grad()) t.accumulate(a, g * b.value());
        if (b.requires_grad()) t.accumulate(b, g.transpose() * a.value());
    });
}

inline Var add(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "add");
    Tape& t = a.tape();
    return t.record(a.value() + b.value(), {a, b}, [&t, a, b](const Matrix& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

/// Adds a 1 x cols row to every row of `a`.
inline Var add_row(const Var& a, const Var& row) {
    detail::require_row_vector(row, a.cols(), "add_row");
    Tape& t = a.tape();
    Matrix out = a.value().rowwise() + row.value().row(0);
    return t.record(std::move(out), {a, row}, [&t, a, row](const Matrix& g) {
        t.accumulate(a, g);
        if (row.requires_grad()) t.accumulate(row, g.colwise().sum());
    });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "mul");
    Tape& t = a.tape();
    return t.record(a.value().cwiseProduct(b.value()), {a, b}, [&t, a, b](const Matrix& g) {
        if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
        if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
    });
}

inline Var scale(const Var& a, double c) {
    Tape& t = a.tape();
    return t.record(a.value() * c, {a}, [&t, a, c](const Matrix& g) { t.accumulate(a, g * c); });
}

inline Var relu(const Var& a) {
    Tape& t = a.tape();
    return t.record(a.value().cwiseMax(0.0), {a}, [&t, a](const Matrix& g) {
        t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
    });
}

/// Exact (erf) GELU.
inline Var gelu(const Var& a) {
    Tape& t = a.tape();
    const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    Matrix out = a.value().unaryExpr(
        [inv_sqrt2](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
    return t.record(std::move(out), {a}, [&t, a, inv_sqrt2](const Matrix& g) {
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        Matrix d = a.value().unaryExpr([inv_sqrt2, inv_sqrt_2pi](double x) {
            return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * std::exp(-0.5 * x * x) * inv_sqrt_2pi;
        });
        t.accumulate(a, g.cwiseProduct(d));
    });
}

/// Inverted dropout: scales survivors by 1/(1-p) in training, identity in eval.
inline Var dropout(const Var& a, double p, Rng& rng, bool train) {
    if (p < 0.0 || p >= 1.0) throw InvalidArgument("dropout probability must be in [0, 1)");
    if (!train || p == 0.0) return a;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix mask(a.rows(), a.cols());
    const double keep_scale = 1.0 / (1.0 - p);
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = u(rng) >= p ? keep_scale : 0.0;
    }
    Tape& t = a.tape();
    Matrix out = a.value().cwiseProduct(mask);
    return t.record(std::move(out), {a}, [&t, a, mask = std::move(mask)](const Matrix& g) {
        t.accumulate(a, g.cwiseProduct(mask));
    });
}

inline Var avg_pool2d(const Var& a, int k, int s) {
    Tape& t = a.tape();
    return t.record(m2s::avg_pool2d(a.value(), k, s), {a}, [&t, a, k, s](const Matrix& g) {
        Matrix ga = Matrix::Zero(a.rows(), a.cols());
        const double inv = 1.0 / (static_cast<double>(k) * k);
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            for (Eigen::Index j = 0; j < g.cols(); ++j) {
                ga.block(i * s, j * s, k, k).array() += g(i, j) * inv;
            }
        }
        t.accumulate(a, ga);
    });
}

/// Max pooling; the gradient goes to the first maximum in row-major window order.
inline Var max_pool2d(const Var& a, int k, int s) {
    const auto shape = pooled_shape(a.rows(), a.cols(), k, s);
    const Matrix& x = a.value();
    Matrix out(shape.rows, shape.cols);
    std::vector<Eigen::Index> argmax(static_cast<std::size_t>(shape.rows * shape.cols));
    for (Eigen::Index i = 0; i < shape.rows; ++i) {
        for (Eigen::Index j = 0; j < shape.cols; ++j) {
            Eigen::Index best = i * s * x.cols() + j * s;
            for (Eigen::Index r = i * s; r < i * s + k; ++r) {
                for (Eigen::Index c = j * s; c < j * s + k; ++c) {
                    const Eigen::Index idx = r * x.cols() + c;
                    if (x.data()[idx] > x.data()[best]) best = idx;
                }
            }
            out(i, j) = x.data()[best];
            argmax[static_cast<std::size_t>(i * shape.cols + j)] = best;
        }
    }
    Tape& t = a.tape();
    return t.record(std::move(out), {a}, [&t, a, argmax = std::move(argmax)](const Matrix& g) {
        Matrix ga = Matrix::Zero(a.rows(), a.cols());
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            ga.data()[argmax[static_cast<std::size_t>(i)]] += g.data()[i];
        }
        t.accumulate(a, ga);
    });
}

/// Row-major flatten to a 1 x (rows*cols) row.
inline Var flatten(const Var& a) {
    Tape& t = a.tape();
    Matrix out = Eigen::Map<const Matrix>(a.value().data(), 1, a.value().size());
    return t.record(std::move(out), {a}, [&t, a](const Matrix& g) {
        t.accumulate(a, Eigen::Map<const Matrix>(g.data(), a.rows(), a.cols()));
    });
}

inline Var softmax_rows(const Var& a) {
    Matrix y = a.value();
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const double mx = y.row(i).maxCoeff();
        y.row(i) = (y.row(i).array() - mx).exp();
        y.row(i) /= y.row(i).sum();
    }
    Tape& t = a.tape();
    return t.record(y, {a}, [&t, a, y](const Matrix& g) {
        const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
        Matrix ga = y.cwiseProduct(g.colwise() - dots);
        t.accumulate(a, ga);
    });
}

/// Per-row layer normalization with learned 1 x cols gain and bias.
inline Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
    const Eigen::Index d = x.cols();
    detail::require_row_vector(gain, d, "layer_norm_rows(gain)");
    detail::require_row_vector(bias, d, "layer_norm_rows(bias)");
    Matrix xhat(x.rows(), d);
    Eigen::VectorXd inv_std(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mean = x.value().row(i).mean();
        const auto centered = x.value().row(i).array() - mean;
        const double var = centered.square().mean();
        inv_std(i) = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = centered * inv_std(i);
    }
    Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
                 bias.value().row(0).array();
    Tape& t = x.tape();
    return t.record(std::move(out), {x, gain, bias},
                    [&t, x, gain, bias, xhat, inv_std](const Matrix& g) {
                        if (gain.requires_grad()) t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
                        if (bias.requires_grad()) t.accumulate(bias, g.colwise().sum());
                        if (!x.requires_grad()) return;
                        const Matrix gxhat = g.array().rowwise() * gain.value().row(0).array();
                        const Eigen::Index n = xhat.cols();
                        Matrix gx(xhat.rows(), n);
                        for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
                            const double m1 = gxhat.row(i).sum() / static_cast<double>(n);
                            const double m2 =
                                gxhat.row(i).cwiseProduct(xhat.row(i)).sum() / static_cast<double>(n);
                            gx.row(i) = (gxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
                        }
                        t.accumulate(x, gx);
                    });
}

inline Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) {
        throw ShapeError("slice_rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of " + shape_string(a.value()));
    }
    Tape& t = a.tape();
    return t.record(a.value().middleRows(start, count), {a}, [&t, a, start, count](const Matrix& g) {
        Matrix ga = Matrix::Zero(a.rows(), a.cols());
        ga.middleRows(start, count) = g;
        t.accumulate(a, ga);
    });
}

inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) {
        throw ShapeError("slice_cols [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of " + shape_string(a.value()));
    }
    Tape& t = a.tape();
    return t.record(a.value().middleCols(start, count), {a}, [&t, a, start, count](const Matrix& g) {
        Matrix ga = Matrix::Zero(a.rows(), a.cols());
        ga.middleCols(start, count) = g;
        t.accumulate(a, ga);
    });
}

inline Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows of nothing");
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts.front().cols();
    for (const Var& p : parts) {
        if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    Tape& t = parts.front().tape();
    std::vector<Var> keep(parts.begin(), parts.end());
    return t.record(std::move(out), parts, [&t, keep](const Matrix& g) {
        Eigen::Index off = 0;
        for (const Var& p : keep) {
            t.accumulate(p, g.middleRows(off, p.rows()));
            off += p.rows();
        }
    });
}

inline Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols of nothing");
    Eigen::Index cols = 0;
    const Eigen::Index rows = parts.front().rows();
    for (const Var& p : parts) {
        if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
        cols += p.cols();
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    Tape& t = parts.front().tape();
    std::vector<Var> keep(parts.begin(), parts.end());
    return t.record(std::move(out), parts, [&t, keep](const Matrix& g) {
        Eigen::Index off = 0;
        for (const Var& p : keep) {
            t.accumulate(p, g.middleCols(off, p.cols()));
            off += p.cols();
        }
    });
}

inline Var concat_rows(std::initializer_list<Var> parts) {
    return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}
inline Var concat_cols(std::initializer_list<Var> parts) {
    return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

/// Divides every row by its L2 norm. Zero rows are an error.
inline Var l2_normalize_rows(const Var& a) {
    const Eigen::VectorXd norms = a.value().rowwise().norm();
    if ((norms.array() == 0.0).any() || !norms.allFinite()) {
        throw NumericalError("l2_normalize_rows: zero or non-finite row norm");
    }
    Matrix y = a.value().array().colwise() / norms.array();
    Tape& t = a.tape();
    return t.record(y, {a}, [&t, a, y, norms](const Matrix& g) {
        const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
        const Matrix radial = y.array().colwise() * dots.array();
        const Matrix ga = (g - radial).array().colwise() / norms.array();
        t.accumulate(a, ga);
    });
}

/// r x c -> r x 1
inline Var row_sum(const Var& a) {
    Tape& t = a.tape();
    Matrix out = a.value().rowwise().sum();
    return t.record(std::move(out), {a}, [&t, a](const Matrix& g) {
        t.accumulate(a, g.replicate(1, a.cols()));
    });
}

inline Var sum(const Var& a) {
    Tape& t = a.tape();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return t.record(std::move(out), {a}, [&t, a](const Matrix& g) {
        t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
    });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// x W + b, with W stored fan_in x fan_out and b a 1 x fan_out row.
inline Var linear(const Var& x, const Var& weight, const Var& bias) {
    return add_row(matmul(x, weight), bias);
}

/// Mean over rows of -log softmax(logits)[target].
inline Var softmax_cross_entropy(const Var& logits, std::span<const int> targets) {
    const Eigen::Index n = logits.rows(), c = logits.cols();
    if (static_cast<Eigen::Index>(targets.size()) != n) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
    }
    Matrix probs(n, c);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int target = targets[static_cast<std::size_t>(i)];
        if (target < 0 || target >= c) throw InvalidArgument("target class out of range");
        const double mx = logits.value().row(i).maxCoeff();
        const auto shifted = logits.value().row(i).array() - mx;
        const double lse = std::log(shifted.exp().sum());
        total += lse - shifted(target);
        probs.row(i) = (shifted - lse).exp();
    }
    Matrix out(1, 1);
    out(0, 0) = total / static_cast<double>(n);
    std::vector<int> tgt(targets.begin(), targets.end());
    Tape& t = logits.tape();
    return t.record(std::move(out), {logits}, [&t, logits, probs, tgt, n](const Matrix& g) {
        Matrix ga = probs;
        for (Eigen::Index i = 0; i < n; ++i) ga(i, tgt[static_cast<std::size_t>(i)]) -= 1.0;
        t.accumulate(logits, ga * (g(0, 0) / static_cast<double>(n)));
    });
}

/// Mean elementwise binary cross-entropy on logits against 0/1 targets.
inline Var bce_with_logits(const Var& logits, const Matrix& targets) {
    if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
        throw ShapeError("bce_with_logits: target shape " + shape_string(targets) + " vs " +
                         shape_string(logits.value()));
    }
    const Matrix& x = logits.value();
    const double n = static_cast<double>(x.size());
    const Matrix per = x.cwiseMax(0.0) - x.cwiseProduct(targets) +
                       x.unaryExpr([](double v) { return std::log1p(std::exp(-std::abs(v))); });
    Matrix out(1, 1);
    out(0, 0) = per.sum() / n;
    Tape& t = logits.tape();
    return t.record(std::move(out), {logits}, [&t, logits, targets, n](const Matrix& g) {
        const Matrix sig = logits.value().unaryExpr([](double v) {
            return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        });
        t.accumulate(logits, (sig - targets) * (g(0, 0) / n));
    });
}

/// Mean squared error against a constant target.
inline Var mse(const Var& pred, const Matrix& target) {
    if (target.rows() != pred.rows() || target.cols() != pred.cols()) {
        throw ShapeError("mse: target shape " + shape_string(target) + " vs " + shape_string(pred.value()));
    }
    const Matrix diff = pred.value() - target;
    const double n = static_cast<double>(diff.size());
    Matrix out(1, 1);
    out(0, 0) = diff.squaredNorm() / n;
    Tape& t = pred.tape();
    return t.record(std::move(out), {pred}, [&t, pred, diff, n](const Matrix& g) {
        t.accumulate(pred, diff * (2.0 * g(0, 0) / n));
    });
}

}  // namespace ad
}  // namespace m2s
