#pragma once

#include <optional>
#include <vector>

#include "krsvqg/autograd.hpp"

namespace krsvqg {

enum class MaskKind { none, causal };

// Attention mask: causal forbids query n from seeing keys > n; key_padding
// marks key positions (true = masked) regardless of query position.
struct AttentionMask {
    MaskKind kind = MaskKind::none;
    std::vector<bool> key_padding;  // empty means no padding
};

constexpr double kMaskFill = -1e9;  // additive logit penalty; exp() underflows to 0

namespace detail {

// Builds the additive mask matrix, or nullopt when nothing is masked.
// Throws if some query row ends up with no visible key.
template <class Scalar>
std::optional<Matrix<Scalar>> mask_matrix(const AttentionMask& mask, Eigen::Index q_rows,
                                          Eigen::Index k_rows) {
    const bool causal = mask.kind == MaskKind::causal;
    const bool padded = !mask.key_padding.empty();
    if (padded && static_cast<Eigen::Index>(mask.key_padding.size()) != k_rows)
        throw std::invalid_argument("key_padding size must equal key count");
    if (!causal && !padded) return std::nullopt;

    Matrix<Scalar> m = Matrix<Scalar>::Zero(q_rows, k_rows);
    for (Eigen::Index r = 0; r < q_rows; ++r) {
        Eigen::Index visible = 0;
        for (Eigen::Index c = 0; c < k_rows; ++c) {
            const bool blocked = (causal && c > r) ||
                                 (padded && mask.key_padding[static_cast<std::size_t>(c)]);
            if (blocked)
                m(r, c) = Scalar(kMaskFill);
            else
                ++visible;
        }
        if (visible == 0) throw std::invalid_argument("fully masked row");
    }
    return m;
}

}  // namespace detail

// Scaled dot-product multi-head attention over already-projected q/k/v.
// Heads split the feature columns; each head computes
// softmax(q k^T / sqrt(head_width)) v and the heads are re-concatenated.
template <class Scalar>
Var<Scalar> attention(const Var<Scalar>& query, const Var<Scalar>& key,
                      const Var<Scalar>& value, const AttentionMask& mask, int heads) {
    if (heads < 1) throw std::invalid_argument("heads must be positive");
    if (query.cols() != key.cols() || query.cols() != value.cols())
        throw std::invalid_argument("attention: query/key/value widths must match");
    if (query.cols() % heads != 0)
        throw std::invalid_argument("width not divisible by heads");
    if (key.rows() != value.rows())
        throw std::invalid_argument("attention: key and value row counts must match");

    auto& t = *query.tape();
    const Eigen::Index head_width = query.cols() / heads;
    const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(head_width));

    auto mask_m = detail::mask_matrix<Scalar>(mask, query.rows(), key.rows());
    std::optional<Var<Scalar>> mask_var;
    if (mask_m) mask_var = t.constant(std::move(*mask_m));

    std::vector<Var<Scalar>> heads_out;
    heads_out.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const Eigen::Index c0 = h * head_width;
        Var<Scalar> qh = slice_cols(query, c0, head_width);
        Var<Scalar> kh = slice_cols(key, c0, head_width);
        Var<Scalar> vh = slice_cols(value, c0, head_width);
        Var<Scalar> scores = scale(matmul(qh, kh, false, true), inv_sqrt_d);
        if (mask_var) scores = add(scores, *mask_var);
        Var<Scalar> weights = softmax_rows(scores);
        heads_out.push_back(matmul(weights, vh));
    }
    return heads == 1 ? heads_out.front() : concat_cols(heads_out);
}

// ---------------------------------------------------------------------------
// Layers. Each owns its parameters and exposes collect() for checkpointing.
// ---------------------------------------------------------------------------

template <class Scalar>
void init_truncated_normal(Matrix<Scalar>& m, Rng& rng, double stddev = 0.02) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            m(r, c) = static_cast<Scalar>(rng.truncated_normal(0.0, stddev));
}

template <class Scalar>
struct Linear {
    Parameter<Scalar> weight;  // in x out
    Parameter<Scalar> bias;    // 1 x out

    Linear(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng) {
        Matrix<Scalar> w(in, out);
        init_truncated_normal(w, rng);
        weight = Parameter<Scalar>(name + ".weight", std::move(w));
        bias = Parameter<Scalar>(name + ".bias", Matrix<Scalar>::Zero(1, out), /*no_decay=*/true);
    }

    Var<Scalar> operator()(Tape<Scalar>& t, const Var<Scalar>& x) {
        return add_rowvec(matmul(x, t.leaf(weight)), t.leaf(bias));
    }

    void collect(std::vector<Parameter<Scalar>*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

template <class Scalar>
struct LayerNorm {
    Parameter<Scalar> norm_scale;  // init 1
    Parameter<Scalar> norm_shift;  // init 0
    Scalar eps = Scalar(1e-6);

    LayerNorm(const std::string& name, Eigen::Index width)
        : norm_scale(name + ".scale", Matrix<Scalar>::Ones(1, width), /*no_decay=*/true),
          norm_shift(name + ".shift", Matrix<Scalar>::Zero(1, width), /*no_decay=*/true) {}

    Var<Scalar> operator()(Tape<Scalar>& t, const Var<Scalar>& x) {
        return layer_norm(x, t.leaf(norm_scale), t.leaf(norm_shift), eps);
    }

    void collect(std::vector<Parameter<Scalar>*>& out) {
        out.push_back(&norm_scale);
        out.push_back(&norm_shift);
    }
};

// Residual-add followed by layer normalization.
template <class Scalar>
Var<Scalar> add_norm(Tape<Scalar>& t, LayerNorm<Scalar>& norm, const Var<Scalar>& x,
                     const Var<Scalar>& sublayer_out) {
    return norm(t, add(x, sublayer_out));
}

// Two affine maps with a GELU in between.
template <class Scalar>
struct FeedForward {
    Linear<Scalar> fc1;
    Linear<Scalar> fc2;

    FeedForward(const std::string& name, Eigen::Index width, Eigen::Index hidden, Rng& rng)
        : fc1(name + ".fc1", width, hidden, rng), fc2(name + ".fc2", hidden, width, rng) {}

    Var<Scalar> operator()(Tape<Scalar>& t, const Var<Scalar>& x) {
        return fc2(t, gelu(fc1(t, x)));
    }

    void collect(std::vector<Parameter<Scalar>*>& out) {
        fc1.collect(out);
        fc2.collect(out);
    }
};

template <class Scalar>
struct MultiHeadAttention {
    Linear<Scalar> query;
    Linear<Scalar> key;
    Linear<Scalar> value;
    Linear<Scalar> out;
    int heads;

    MultiHeadAttention(const std::string& name, Eigen::Index width, int n_heads, Rng& rng)
        : query(name + ".query", width, width, rng),
          key(name + ".key", width, width, rng),
          value(name + ".value", width, width, rng),
          out(name + ".out", width, width, rng),
          heads(n_heads) {
        if (width % n_heads != 0) throw std::invalid_argument("width not divisible by heads");
    }

    // Self-attention when x_kv is x_q; cross-attention otherwise.
    Var<Scalar> operator()(Tape<Scalar>& t, const Var<Scalar>& x_q, const Var<Scalar>& x_kv,
                           const AttentionMask& mask) {
        Var<Scalar> q = query(t, x_q);
        Var<Scalar> k = key(t, x_kv);
        Var<Scalar> v = value(t, x_kv);
        return out(t, attention(q, k, v, mask, heads));
    }

    void collect(std::vector<Parameter<Scalar>*>& out_params) {
        query.collect(out_params);
        key.collect(out_params);
        value.collect(out_params);
        out.collect(out_params);
    }
};

// Optional training-time dropout; inactive when rng is null or rate is 0.
struct DropoutConfig {
    double rate = 0.0;
    Rng* rng = nullptr;

    bool active() const { return rng != nullptr && rate > 0.0; }
};

// One transformer block: self-attention, optional cross-attention, and a
// feed-forward network, each followed by addition and normalization.
template <class Scalar>
struct TransformerBlock {
    MultiHeadAttention<Scalar> self_attn;
    LayerNorm<Scalar> norm_self;
    std::optional<MultiHeadAttention<Scalar>> cross_attn;
    std::optional<LayerNorm<Scalar>> norm_cross;
    FeedForward<Scalar> ffn;
    LayerNorm<Scalar> norm_ffn;
    bool causal;

    TransformerBlock(const std::string& name, Eigen::Index width, Eigen::Index ffn_hidden,
                     int heads, bool causal_self, bool with_cross, Rng& rng)
        : self_attn(name + ".self_attn", width, heads, rng),
          norm_self(name + ".norm_self", width),
          ffn(name + ".ffn", width, ffn_hidden, rng),
          norm_ffn(name + ".norm_ffn", width),
          causal(causal_self) {
        if (with_cross) {
            cross_attn.emplace(name + ".cross_attn", width, heads, rng);
            norm_cross.emplace(name + ".norm_cross", width);
        }
    }

    Var<Scalar> operator()(Tape<Scalar>& t, Var<Scalar> x,
                           const std::optional<Var<Scalar>>& context,
                           const DropoutConfig& drop = {}) {
        AttentionMask self_mask{causal ? MaskKind::causal : MaskKind::none, {}};
        Var<Scalar> attn_out = self_attn(t, x, x, self_mask);
        if (drop.active()) attn_out = dropout(attn_out, drop.rate, *drop.rng);
        x = add_norm(t, norm_self, x, attn_out);

        if (cross_attn) {
            if (!context) throw std::invalid_argument("cross-attention block requires context");
            Var<Scalar> cross_out = (*cross_attn)(t, x, *context, AttentionMask{});
            if (drop.active()) cross_out = dropout(cross_out, drop.rate, *drop.rng);
            x = add_norm(t, *norm_cross, x, cross_out);
        }

        Var<Scalar> ffn_out = ffn(t, x);
        if (drop.active()) ffn_out = dropout(ffn_out, drop.rate, *drop.rng);
        return add_norm(t, norm_ffn, x, ffn_out);
    }

    void collect(std::vector<Parameter<Scalar>*>& out) {
        self_attn.collect(out);
        norm_self.collect(out);
        if (cross_attn) {
            cross_attn->collect(out);
            norm_cross->collect(out);
        }
        ffn.collect(out);
        norm_ffn.collect(out);
    }
};

// Spec-level feed-forward entry point over a raw activation block: applies
// the layer to a constant wrapped on a scratch tape.
template <class Scalar>
Matrix<Scalar> feed_forward(FeedForward<Scalar>& layer, const Matrix<Scalar>& x) {
    Tape<Scalar> t;
    return layer(t, t.constant(x)).value();
}

}  // namespace krsvqg
