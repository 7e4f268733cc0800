#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "krsvqg/rng.hpp"
#include "krsvqg/tensor.hpp"

namespace krsvqg {

// A named, trainable tensor. Lives in the model; gradients accumulate here
// when Tape::backward runs over a graph that references it.
template <class Scalar>
struct Parameter {
    std::string name;
    Matrix<Scalar> value;
    Matrix<Scalar> grad;
    bool no_decay = false;  // layer-norm scales/shifts and biases

    Parameter() = default;
    Parameter(std::string n, Matrix<Scalar> v, bool nd = false)
        : name(std::move(n)), value(std::move(v)), no_decay(nd) {
        grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
    }

    void zero_grad() { grad.setZero(); }
};

template <class Scalar>
class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <class Scalar>
class Var {
public:
    Var() = default;
    Var(Tape<Scalar>* tape, int index) : tape_(tape), index_(index) {}

    bool valid() const { return tape_ != nullptr; }
    int index() const { return index_; }
    Tape<Scalar>* tape() const { return tape_; }

    const Matrix<Scalar>& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }

private:
    Tape<Scalar>* tape_ = nullptr;
    int index_ = -1;
};

// Records one forward pass; replays it in reverse for gradients. Nodes are
// appended in program order, which fixes the arithmetic order and makes
// repeated runs bit-identical.
template <class Scalar>
class Tape {
public:
    using Mat = Matrix<Scalar>;
    // Called with (tape, index of this node); reads grad(index) and
    // accumulates into the node's parents.
    using Backprop = std::function<void(Tape&, int)>;

    struct Node {
        Mat owned_value;
        const Mat* external_value = nullptr;  // leaves alias the parameter
        Mat grad;                             // empty until reached by backward
        Backprop backprop;                    // empty for leaves/constants
        Parameter<Scalar>* param = nullptr;

        const Mat& value() const { return external_value ? *external_value : owned_value; }
    };

    Var<Scalar> constant(Mat m) {
        nodes_.push_back(Node{std::move(m), nullptr, {}, {}, nullptr});
        return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
    }

    Var<Scalar> leaf(Parameter<Scalar>& p) {
        nodes_.push_back(Node{{}, &p.value, {}, {}, &p});
        return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
    }

    Var<Scalar> emplace(Mat value, Backprop backprop) {
        nodes_.push_back(Node{std::move(value), nullptr, {}, std::move(backprop), nullptr});
        return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
    }

    const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return nodes_.size(); }

    const Mat& value(int i) const { return nodes_[static_cast<std::size_t>(i)].value(); }
    const Mat& grad(int i) const { return nodes_[static_cast<std::size_t>(i)].grad; }

    // Accumulates into node i's gradient, allocating zeros on first touch.
    template <class Expr>
    void accumulate(int i, const Expr& g) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.grad.size() == 0) {
            const Mat& v = n.value();
            n.grad = Mat::Zero(v.rows(), v.cols());
        }
        n.grad += g;
    }

    // Variant for ops that write sub-blocks of the parent gradient.
    Mat& grad_buffer(int i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.grad.size() == 0) {
            const Mat& v = n.value();
            n.grad = Mat::Zero(v.rows(), v.cols());
        }
        return n.grad;
    }

    // Seeds d(loss)/d(loss) = 1 and walks the tape in reverse. Gradients of
    // leaf nodes are added into their parameters.
    void backward(const Var<Scalar>& loss) {
        if (!loss.valid() || loss.tape() != this || nodes_.empty())
            throw std::logic_error("backward before forward");
        const Node& last = nodes_[static_cast<std::size_t>(loss.index())];
        if (last.value().rows() != 1 || last.value().cols() != 1)
            throw std::invalid_argument("backward expects a scalar loss");

        accumulate(loss.index(), Mat::Constant(1, 1, Scalar(1)));
        for (int i = loss.index(); i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.grad.size() == 0) continue;
            if (n.backprop) n.backprop(*this, i);
            if (n.param) n.param->grad += n.grad;
        }
    }

private:
    std::deque<Node> nodes_;  // deque: stable storage while appending
};

template <class Scalar>
const Matrix<Scalar>& Var<Scalar>::value() const {
    return tape_->node(index_).value();
}

namespace detail {

template <class Scalar>
Tape<Scalar>& tape_of(const Var<Scalar>& v) {
    if (!v.valid()) throw std::logic_error("operation on an empty Var");
    return *v.tape();
}

template <class Scalar>
void check_same_shape(const Matrix<Scalar>& a, const Matrix<Scalar>& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops. Each records its reverse rule on the tape.
// ---------------------------------------------------------------------------

// C = op(A) * op(B) with optional transposes. The transposed-output forms
//   dA = g  B'^T  (or B' g^T when A was transposed)
//   dB = A'^T g   (or g^T A' when B was transposed)
// keep tied-embedding projections (h E^T) a single op.
template <class Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b,
                   bool trans_a = false, bool trans_b = false) {
    auto& t = detail::tape_of(a);
    const auto& A = a.value();
    const auto& B = b.value();
    Matrix<Scalar> value = (trans_a ? A.transpose() : A) * (trans_b ? B.transpose() : B);
    const int ia = a.index(), ib = b.index();
    return t.emplace(std::move(value), [ia, ib, trans_a, trans_b](Tape<Scalar>& tp, int self) {
        const Matrix<Scalar>& g = tp.grad(self);
        const auto& A_ = tp.value(ia);
        const auto& B_ = tp.value(ib);
        if (!trans_a) {
            tp.accumulate(ia, trans_b ? (g * B_).eval() : (g * B_.transpose()).eval());
        } else {
            tp.accumulate(ia, trans_b ? (B_.transpose() * g.transpose()).eval()
                                      : (B_ * g.transpose()).eval());
        }
        if (!trans_b) {
            tp.accumulate(ib, trans_a ? (A_ * g).eval() : (A_.transpose() * g).eval());
        } else {
            tp.accumulate(ib, trans_a ? (g.transpose() * A_.transpose()).eval()
                                      : (g.transpose() * A_).eval());
        }
    });
}

template <class Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
    auto& t = detail::tape_of(a);
    detail::check_same_shape(a.value(), b.value(), "add");
    const int ia = a.index(), ib = b.index();
    return t.emplace(a.value() + b.value(), [ia, ib](Tape<Scalar>& tp, int self) {
        tp.accumulate(ia, tp.grad(self));
        tp.accumulate(ib, tp.grad(self));
    });
}

// x + b with b broadcast over rows (b is 1 x cols).
template <class Scalar>
Var<Scalar> add_rowvec(const Var<Scalar>& x, const Var<Scalar>& b) {
    auto& t = detail::tape_of(x);
    if (b.rows() != 1 || b.cols() != x.cols())
        throw std::invalid_argument("add_rowvec: bias must be 1 x cols");
    Matrix<Scalar> value = x.value().rowwise() + b.value().row(0);
    const int ix = x.index(), ib = b.index();
    return t.emplace(std::move(value), [ix, ib](Tape<Scalar>& tp, int self) {
        const Matrix<Scalar>& g = tp.grad(self);
        tp.accumulate(ix, g);
        tp.accumulate(ib, g.colwise().sum());
    });
}

template <class Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar s) {
    auto& t = detail::tape_of(x);
    const int ix = x.index();
    return t.emplace((x.value() * s).eval(), [ix, s](Tape<Scalar>& tp, int self) {
        tp.accumulate(ix, tp.grad(self) * s);
    });
}

template <class Scalar>
Var<Scalar> concat_rows(const Var<Scalar>& a, const Var<Scalar>& b) {
    auto& t = detail::tape_of(a);
    if (a.cols() != b.cols()) throw std::invalid_argument("concat_rows: column mismatch");
    Matrix<Scalar> value(a.rows() + b.rows(), a.cols());
    value.topRows(a.rows()) = a.value();
    value.bottomRows(b.rows()) = b.value();
    const int ia = a.index(), ib = b.index();
    const Eigen::Index ra = a.rows(), rb = b.rows();
    return t.emplace(std::move(value), [ia, ib, ra, rb](Tape<Scalar>& tp, int self) {
        const Matrix<Scalar>& g = tp.grad(self);
        tp.accumulate(ia, g.topRows(ra));
        tp.accumulate(ib, g.bottomRows(rb));
    });
}

template <class Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& x, Eigen::Index start, Eigen::Index count) {
    auto& t = detail::tape_of(x);
    if (start < 0 || count < 0 || start + count > x.rows())
        throw std::invalid_argument("slice_rows: out of range");
    const int ix = x.index();
    return t.emplace(x.value().middleRows(start, count),
                     [ix, start, count](Tape<Scalar>& tp, int self) {
                         tp.grad_buffer(ix).middleRows(start, count) += tp.grad(self);
                     });
}

template <class Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& x, Eigen::Index start, Eigen::Index count) {
    auto& t = detail::tape_of(x);
    if (start < 0 || count < 0 || start + count > x.cols())
        throw std::invalid_argument("slice_cols: out of range");
    const int ix = x.index();
    return t.emplace(x.value().middleCols(start, count),
                     [ix, start, count](Tape<Scalar>& tp, int self) {
                         tp.grad_buffer(ix).middleCols(start, count) += tp.grad(self);
                     });
}

template <class Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    auto& t = detail::tape_of(parts.front());
    Eigen::Index cols = 0;
    for (const auto& p : parts) cols += p.cols();
    Matrix<Scalar> value(parts.front().rows(), cols);
    std::vector<int> indices;
    std::vector<Eigen::Index> widths;
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        value.middleCols(at, p.cols()) = p.value();
        indices.push_back(p.index());
        widths.push_back(p.cols());
        at += p.cols();
    }
    return t.emplace(std::move(value), [indices, widths](Tape<Scalar>& tp, int self) {
        const Matrix<Scalar>& g = tp.grad(self);
        Eigen::Index at2 = 0;
        for (std::size_t i = 0; i < indices.size(); ++i) {
            tp.accumulate(indices[i], g.middleCols(at2, widths[i]));
            at2 += widths[i];
        }
    });
}

// Row-wise softmax with max subtraction. Masked logits are expected to
// arrive already pushed to ~-1e9 so that exp() underflows to exactly zero.
template <class Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& x) {
    auto& t = detail::tape_of(x);
    const auto& X = x.value();
    Matrix<Scalar> y(X.rows(), X.cols());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
        const Scalar m = X.row(r).maxCoeff();
        y.row(r) = (X.row(r).array() - m).exp();
        y.row(r) /= y.row(r).sum();
    }
    const int ix = x.index();
    return t.emplace(std::move(y), [ix](Tape<Scalar>& tp, int self) {
        const Matrix<Scalar>& g = tp.grad(self);
        const Matrix<Scalar>& y_ = tp.value(self);
        Matrix<Scalar> dx(y_.rows(), y_.cols());
        for (Eigen::Index r = 0; r < y_.rows(); ++r) {
            const Scalar dot = (g.row(r).array() * y_.row(r).array()).sum();
            dx.row(r) = y_.row(r).array() * (g.row(r).array() - dot);
        }
        tp.accumulate(ix, dx);
    });
}

// GELU with the exact erf form.
template <class Scalar>
Var<Scalar> gelu(const Var<Scalar>& x) {
    auto& t = detail::tape_of(x);
    const auto& X = x.value();
    const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
    Matrix<Scalar> y = X.unaryExpr([inv_sqrt2](Scalar v) {
        return Scalar(0.5) * v * (Scalar(1) + std::erf(v * inv_sqrt2));
    });
    const int ix = x.index();
    return t.emplace(std::move(y), [ix, inv_sqrt2](Tape<Scalar>& tp, int self) {
        const Matrix<Scalar>& g = tp.grad(self);
        const Matrix<Scalar>& X_ = tp.value(ix);
        const Scalar inv_sqrt2pi = Scalar(1) / std::sqrt(Scalar(2) * Scalar(M_PI));
        Matrix<Scalar> dx = X_.unaryExpr([&](Scalar v) {
            const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2));
            const Scalar pdf = std::exp(Scalar(-0.5) * v * v) * inv_sqrt2pi;
            return cdf + v * pdf;
        });
        tp.accumulate(ix, (dx.array() * g.array()).matrix());
    });
}

// Per-row normalization of (x) to zero mean / unit variance, then
// elementwise scale and shift (both 1 x cols).
template <class Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma,
                       const Var<Scalar>& beta, Scalar eps = Scalar(1e-6)) {
    auto& t = detail::tape_of(x);
    const auto& X = x.value();
    const Eigen::Index d = X.cols();
    if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d)
        throw std::invalid_argument("layer_norm: scale/shift must be 1 x cols");

    Matrix<Scalar> xhat(X.rows(), d);
    Matrix<Scalar> inv_std(X.rows(), 1);
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
        const Scalar mu = X.row(r).mean();
        const Scalar var = (X.row(r).array() - mu).square().sum() / Scalar(d);
        const Scalar is = Scalar(1) / std::sqrt(var + eps);
        inv_std(r, 0) = is;
        xhat.row(r) = (X.row(r).array() - mu) * is;
    }
    Matrix<Scalar> y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
                       beta.value().row(0).array();
    const int ix = x.index(), ig = gamma.index(), ib = beta.index();
    return t.emplace(std::move(y), [ix, ig, ib, xhat, inv_std, d](Tape<Scalar>& tp, int self) {
        const Matrix<Scalar>& g = tp.grad(self);
        const auto gamma_row = tp.value(ig).row(0);
        tp.accumulate(ib, g.colwise().sum());
        tp.accumulate(ig, (g.array() * xhat.array()).colwise().sum().matrix());

        Matrix<Scalar> dx(g.rows(), d);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            const auto dxhat = (g.row(r).array() * gamma_row.array()).eval();
            const Scalar mean_dxhat = dxhat.sum() / Scalar(d);
            const Scalar mean_dxhat_xhat = (dxhat * xhat.row(r).array()).sum() / Scalar(d);
            dx.row(r) = inv_std(r, 0) *
                        (dxhat - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat);
        }
        tp.accumulate(ix, dx);
    });
}

// Gathers table rows by id. Backward scatter-adds, so repeated ids sum.
template <class Scalar>
Var<Scalar> embedding(const Var<Scalar>& table, const std::vector<int>& ids) {
    auto& t = detail::tape_of(table);
    const auto& T = table.value();
    Matrix<Scalar> value(static_cast<Eigen::Index>(ids.size()), T.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= T.rows()) throw std::out_of_range("id out of range");
        value.row(static_cast<Eigen::Index>(i)) = T.row(ids[i]);
    }
    const int it = table.index();
    return t.emplace(std::move(value), [it, ids](Tape<Scalar>& tp, int self) {
        const Matrix<Scalar>& g = tp.grad(self);
        auto& buf = tp.grad_buffer(it);
        for (std::size_t i = 0; i < ids.size(); ++i)
            buf.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
    });
}

// Inverted dropout; a rate of zero is the identity (no node recorded).
template <class Scalar>
Var<Scalar> dropout(const Var<Scalar>& x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
    auto& t = detail::tape_of(x);
    const auto& X = x.value();
    Matrix<Scalar> mask(X.rows(), X.cols());
    const Scalar keep_scale = Scalar(1.0 / (1.0 - rate));
    for (Eigen::Index r = 0; r < X.rows(); ++r)
        for (Eigen::Index c = 0; c < X.cols(); ++c)
            mask(r, c) = rng.bernoulli(rate) ? Scalar(0) : keep_scale;
    const int ix = x.index();
    return t.emplace((X.array() * mask.array()).matrix(), [ix, mask](Tape<Scalar>& tp, int self) {
        tp.accumulate(ix, (tp.grad(self).array() * mask.array()).matrix());
    });
}

// Mean negative log-likelihood of target ids under row-wise softmax of
// logits. Rows whose target id equals pad_id are excluded from the mean.
template <class Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, const std::vector<int>& targets,
                          int pad_id) {
    auto& t = detail::tape_of(logits);
    const auto& L = logits.value();
    if (L.rows() != static_cast<Eigen::Index>(targets.size()))
        throw std::invalid_argument("cross_entropy: logits row count must equal target length");

    Eigen::Index used = 0;
    Scalar total = Scalar(0);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] == pad_id) continue;
        if (targets[i] < 0 || targets[i] >= L.cols()) throw std::out_of_range("id out of range");
        const auto row = L.row(static_cast<Eigen::Index>(i));
        const Scalar m = row.maxCoeff();
        const Scalar lse = m + std::log((row.array() - m).exp().sum());
        total += lse - row(targets[i]);
        ++used;
    }
    if (used == 0) throw std::invalid_argument("empty target");
    Matrix<Scalar> value = Matrix<Scalar>::Constant(1, 1, total / Scalar(used));

    const int il = logits.index();
    return t.emplace(std::move(value), [il, targets, pad_id, used](Tape<Scalar>& tp, int self) {
        const Scalar gscale = tp.grad(self)(0, 0) / Scalar(used);
        const Matrix<Scalar>& L_ = tp.value(il);
        Matrix<Scalar> dl = Matrix<Scalar>::Zero(L_.rows(), L_.cols());
        for (std::size_t i = 0; i < targets.size(); ++i) {
            if (targets[i] == pad_id) continue;
            const auto row = L_.row(static_cast<Eigen::Index>(i));
            const Scalar m = row.maxCoeff();
            Eigen::Array<Scalar, 1, Eigen::Dynamic> p = (row.array() - m).exp();
            p /= p.sum();
            dl.row(static_cast<Eigen::Index>(i)) = p.matrix() * gscale;
            dl(static_cast<Eigen::Index>(i), targets[i]) -= gscale;
        }
        tp.accumulate(il, dl);
    });
}

}  // namespace krsvqg
