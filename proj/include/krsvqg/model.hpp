#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "krsvqg/image.hpp"
#include "krsvqg/nn.hpp"
#include "krsvqg/tokenizer.hpp"

namespace krsvqg {

struct ModelConfig {
    int image_size = 64;
    int patch_size = 16;
    int model_width = 128;
    int heads = 4;
    int image_blocks = 2;
    int caption_blocks = 2;
    int text_blocks = 2;
    int question_blocks = 2;
    int vocab_size = 0;
    int caption_max_len = 40;
    int knowledge_max_len = 30;
    int question_max_len = 30;

    bool operator==(const ModelConfig&) const = default;

    int ffn_hidden() const { return 4 * model_width; }
    int patches_per_side() const { return image_size / patch_size; }
    int image_tokens() const { return patches_per_side() * patches_per_side() + 1; }

    void validate() const {
        if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
            throw std::invalid_argument("image_size must be divisible by patch_size");
        if (model_width <= 0 || heads <= 0 || model_width % heads != 0)
            throw std::invalid_argument("width not divisible by heads");
        if (image_blocks < 1 || caption_blocks < 1 || text_blocks < 1 || question_blocks < 1)
            throw std::invalid_argument("each component needs at least one block");
        if (vocab_size < 5) throw std::invalid_argument("vocab_size must cover specials");
        if (caption_max_len < 3 || knowledge_max_len < 3 || question_max_len < 3)
            throw std::invalid_argument("max lengths must be at least 3");
    }

    static ModelConfig toy(int vocab) {
        ModelConfig c;
        c.vocab_size = vocab;
        return c;
    }

    // Full-scale dimensions: 384x384 input, 16px patches, width 768 with
    // 12 heads. Depth stays config-driven; raise the block counts to match
    // a full-size backbone when the hardware allows it.
    static ModelConfig paper(int vocab) {
        ModelConfig c;
        c.image_size = 384;
        c.patch_size = 16;
        c.model_width = 768;
        c.heads = 12;
        c.vocab_size = vocab;
        return c;
    }
};

enum class FeatureSource { image, caption, knowledge, question };

// A (sequence length x model width) activation block tagged with where in
// the pipeline it came from.
template <class Scalar>
struct FeatureSequence {
    Matrix<Scalar> block;
    FeatureSource source = FeatureSource::image;

    Eigen::Index length() const { return block.rows(); }
    Eigen::Index width() const { return block.cols(); }
};

struct DecodingParams {
    int beam_size = 1;  // 1 = greedy
    int max_len = 0;    // 0 = component default from the model config
};

namespace detail {

// Returns the non-PAD prefix after checking the PAD-suffix invariant and
// the id range.
inline std::vector<int> effective_ids(const TokenSequence& seq, int vocab_size) {
    std::size_t first_pad = seq.ids.size();
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        const int id = seq.ids[i];
        if (id < 0 || id >= vocab_size) throw std::out_of_range("id out of range");
        if (id == kPadId && first_pad == seq.ids.size()) first_pad = i;
        if (id != kPadId && first_pad != seq.ids.size())
            throw std::invalid_argument("PAD ids must form a contiguous suffix");
    }
    if (first_pad == 0) throw std::invalid_argument("empty token sequence");
    if (static_cast<int>(first_pad) != seq.length)
        throw std::invalid_argument("token sequence length field is inconsistent");
    return {seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(first_pad)};
}

}  // namespace detail

// One text-side transformer component: token embedding (tied with the
// output projection), learned positions, and a block stack that
// cross-attends into a supplied context sequence.
template <class Scalar>
struct TextTransformer {
    Parameter<Scalar> token_embed;  // vocab x width
    Parameter<Scalar> pos_embed;    // max_len x width
    std::vector<TransformerBlock<Scalar>> blocks;

    TextTransformer(const std::string& name, int vocab, int max_len, int width, int ffn_hidden,
                    int heads, int n_blocks, bool causal, Rng& rng) {
        Matrix<Scalar> emb(vocab, width);
        init_truncated_normal(emb, rng);
        token_embed = Parameter<Scalar>(name + ".token_embed", std::move(emb));
        Matrix<Scalar> pos(max_len, width);
        init_truncated_normal(pos, rng);
        pos_embed = Parameter<Scalar>(name + ".pos_embed", std::move(pos));
        blocks.reserve(static_cast<std::size_t>(n_blocks));
        for (int b = 0; b < n_blocks; ++b)
            blocks.emplace_back(name + ".block" + std::to_string(b), width, ffn_hidden, heads,
                                causal, /*with_cross=*/true, rng);
    }

    Var<Scalar> hidden(Tape<Scalar>& t, const std::vector<int>& ids, const Var<Scalar>& context,
                       const DropoutConfig& drop = {}) {
        if (static_cast<Eigen::Index>(ids.size()) > pos_embed.value.rows())
            throw std::invalid_argument("sequence exceeds maximum length");
        Var<Scalar> x = embedding(t.leaf(token_embed), ids);
        Var<Scalar> pos = slice_rows(t.leaf(pos_embed), 0, static_cast<Eigen::Index>(ids.size()));
        x = add(x, pos);
        std::optional<Var<Scalar>> ctx(context);
        for (auto& block : blocks) x = block(t, x, ctx, drop);
        return x;
    }

    // Tied projection onto the vocabulary: h E^T.
    Var<Scalar> vocab_logits(Tape<Scalar>& t, const Var<Scalar>& h) {
        return matmul(h, t.leaf(token_embed), false, true);
    }

    void collect(std::vector<Parameter<Scalar>*>& out) {
        out.push_back(&token_embed);
        out.push_back(&pos_embed);
        for (auto& b : blocks) b.collect(out);
    }
};

// ViT-style image encoder: per-patch linear embedding, a learned class
// token, learned positions, and bidirectional blocks.
template <class Scalar>
struct ImageEncoder {
    Linear<Scalar> patch_embed;
    Parameter<Scalar> cls_token;  // 1 x width
    Parameter<Scalar> pos_embed;  // (patches + 1) x width
    std::vector<TransformerBlock<Scalar>> blocks;

    ImageEncoder(const ModelConfig& cfg, Rng& rng)
        : patch_embed("image_encoder.patch_embed",
                      cfg.patch_size * cfg.patch_size * 3, cfg.model_width, rng) {
        Matrix<Scalar> cls(1, cfg.model_width);
        init_truncated_normal(cls, rng);
        cls_token = Parameter<Scalar>("image_encoder.cls_token", std::move(cls));
        Matrix<Scalar> pos(cfg.image_tokens(), cfg.model_width);
        init_truncated_normal(pos, rng);
        pos_embed = Parameter<Scalar>("image_encoder.pos_embed", std::move(pos));
        blocks.reserve(static_cast<std::size_t>(cfg.image_blocks));
        for (int b = 0; b < cfg.image_blocks; ++b)
            blocks.emplace_back("image_encoder.block" + std::to_string(b), cfg.model_width,
                                cfg.ffn_hidden(), cfg.heads, /*causal=*/false,
                                /*with_cross=*/false, rng);
    }

    Var<Scalar> operator()(Tape<Scalar>& t, const Matrix<Scalar>& patches,
                           const DropoutConfig& drop = {}) {
        if (patches.rows() + 1 != pos_embed.value.rows())
            throw std::invalid_argument("patch count does not match configuration");
        Var<Scalar> x = patch_embed(t, t.constant(patches));
        x = concat_rows(t.leaf(cls_token), x);
        x = add(x, t.leaf(pos_embed));
        for (auto& block : blocks) x = block(t, x, std::nullopt, drop);
        return x;
    }

    void collect(std::vector<Parameter<Scalar>*>& out) {
        patch_embed.collect(out);
        out.push_back(&cls_token);
        out.push_back(&pos_embed);
        for (auto& b : blocks) b.collect(out);
    }
};

// The four-component question generation network. Text is grounded in the
// image twice: the caption decoder and text encoder cross-attend into the
// image features, and the question decoder cross-attends into the
// concatenated caption and knowledge features.
template <class Scalar>
class KrsvqgModel {
public:
    KrsvqgModel(const ModelConfig& cfg, std::uint64_t seed)
        : cfg_(validated(cfg)), rng_(seed), image_encoder_(cfg_, rng_),
          caption_decoder_("caption_decoder", cfg.vocab_size, cfg.caption_max_len,
                           cfg.model_width, cfg.ffn_hidden(), cfg.heads, cfg.caption_blocks,
                           /*causal=*/true, rng_),
          text_encoder_("text_encoder", cfg.vocab_size, cfg.knowledge_max_len, cfg.model_width,
                        cfg.ffn_hidden(), cfg.heads, cfg.text_blocks, /*causal=*/false, rng_),
          question_decoder_("question_decoder", cfg.vocab_size, cfg.question_max_len,
                            cfg.model_width, cfg.ffn_hidden(), cfg.heads, cfg.question_blocks,
                            /*causal=*/true, rng_) {
        image_encoder_.collect(params_);
        caption_decoder_.collect(params_);
        text_encoder_.collect(params_);
        question_decoder_.collect(params_);
    }

    const ModelConfig& config() const { return cfg_; }
    const std::vector<Parameter<Scalar>*>& parameters() { return params_; }

    Parameter<Scalar>* find_parameter(const std::string& name) {
        for (auto* p : params_)
            if (p->name == name) return p;
        return nullptr;
    }

    void zero_grads() {
        for (auto* p : params_) p->zero_grad();
    }

    // ---- tape-level forwards (training uses these; gradients flow) ----

    Var<Scalar> image_features(Tape<Scalar>& t, const Matrix<Scalar>& patches,
                               const DropoutConfig& drop = {}) {
        return image_encoder_(t, patches, drop);
    }

    Var<Scalar> caption_hidden(Tape<Scalar>& t, const std::vector<int>& ids,
                               const Var<Scalar>& f_image, const DropoutConfig& drop = {}) {
        if (static_cast<int>(ids.size()) > cfg_.caption_max_len)
            throw std::invalid_argument("caption exceeds maximum length");
        return caption_decoder_.hidden(t, ids, f_image, drop);
    }

    Var<Scalar> caption_vocab_logits(Tape<Scalar>& t, const Var<Scalar>& hidden) {
        return caption_decoder_.vocab_logits(t, hidden);
    }

    Var<Scalar> knowledge_hidden(Tape<Scalar>& t, const std::vector<int>& ids,
                                 const Var<Scalar>& f_image, const DropoutConfig& drop = {}) {
        if (static_cast<int>(ids.size()) > cfg_.knowledge_max_len)
            throw std::invalid_argument("knowledge exceeds maximum length");
        return text_encoder_.hidden(t, ids, f_image, drop);
    }

    Var<Scalar> question_hidden(Tape<Scalar>& t, const std::vector<int>& ids,
                                const Var<Scalar>& fused_context,
                                const DropoutConfig& drop = {}) {
        if (static_cast<int>(ids.size()) > cfg_.question_max_len)
            throw std::invalid_argument("question exceeds maximum length");
        return question_decoder_.hidden(t, ids, fused_context, drop);
    }

    Var<Scalar> question_vocab_logits(Tape<Scalar>& t, const Var<Scalar>& hidden) {
        return question_decoder_.vocab_logits(t, hidden);
    }

    // ---- value-level pipeline ops ----

    FeatureSequence<Scalar> encode_image(const Image& img) {
        if (img.height != cfg_.image_size || img.width != cfg_.image_size || img.channels != 3)
            throw std::invalid_argument("image shape must be image_size x image_size x 3");
        Tape<Scalar> t;
        Var<Scalar> f = image_features(t, patchify<Scalar>(img, cfg_.patch_size));
        return {f.value(), FeatureSource::image};
    }

    // Teacher-forced pass: returns the caption feature sequence (hidden
    // state per caption token) and the per-position vocabulary logits.
    std::pair<FeatureSequence<Scalar>, Matrix<Scalar>> caption_forward(
        const FeatureSequence<Scalar>& f_image, const TokenSequence& caption) {
        require_source(f_image, FeatureSource::image, "caption_forward");
        const auto ids = detail::effective_ids(caption, cfg_.vocab_size);
        Tape<Scalar> t;
        Var<Scalar> ctx = t.constant(f_image.block);
        Var<Scalar> h = caption_hidden(t, ids, ctx);
        Var<Scalar> logits = caption_vocab_logits(t, h);
        return {{h.value(), FeatureSource::caption}, logits.value()};
    }

    FeatureSequence<Scalar> encode_knowledge(const TokenSequence& knowledge,
                                             const FeatureSequence<Scalar>& f_image) {
        require_source(f_image, FeatureSource::image, "encode_knowledge");
        const auto ids = detail::effective_ids(knowledge, cfg_.vocab_size);
        if (ids.size() <= 2) throw std::invalid_argument("knowledge required");
        Tape<Scalar> t;
        Var<Scalar> ctx = t.constant(f_image.block);
        Var<Scalar> h = knowledge_hidden(t, ids, ctx);
        return {h.value(), FeatureSource::knowledge};
    }

    Matrix<Scalar> question_forward(const FeatureSequence<Scalar>& f_caption,
                                    const FeatureSequence<Scalar>& f_knowledge,
                                    const TokenSequence& question) {
        if (f_caption.width() != f_knowledge.width())
            throw std::invalid_argument("feature width mismatch");
        const auto ids = detail::effective_ids(question, cfg_.vocab_size);
        Tape<Scalar> t;
        Var<Scalar> ctx = t.constant(fused_context(f_caption, f_knowledge));
        Var<Scalar> h = question_hidden(t, ids, ctx);
        return question_vocab_logits(t, h).value();
    }

    // Autoregressive caption decode; also returns the hidden states over
    // the generated tokens so question decoding sees the same shape as in
    // training.
    std::pair<TokenSequence, FeatureSequence<Scalar>> generate_caption(
        const FeatureSequence<Scalar>& f_image, const DecodingParams& decoding = {}) {
        require_source(f_image, FeatureSource::image, "generate_caption");
        const int max_len = decoding.max_len > 0 ? decoding.max_len : cfg_.caption_max_len;
        const auto ids = decode_ids(caption_decoder_, f_image.block, max_len,
                                    decoding.beam_size, cfg_.caption_max_len);
        Tape<Scalar> t;
        Var<Scalar> ctx = t.constant(f_image.block);
        Var<Scalar> h = caption_decoder_.hidden(t, ids, ctx);
        return {to_sequence(ids, cfg_.caption_max_len), {h.value(), FeatureSource::caption}};
    }

    TokenSequence generate_question(const FeatureSequence<Scalar>& f_caption,
                                    const FeatureSequence<Scalar>& f_knowledge,
                                    const DecodingParams& decoding = {}) {
        if (f_caption.width() != f_knowledge.width())
            throw std::invalid_argument("feature width mismatch");
        const int max_len = decoding.max_len > 0 ? decoding.max_len : cfg_.question_max_len;
        const auto ids = decode_ids(question_decoder_, fused_context(f_caption, f_knowledge),
                                    max_len, decoding.beam_size, cfg_.question_max_len);
        return to_sequence(ids, cfg_.question_max_len);
    }

private:
    ModelConfig cfg_;
    Rng rng_;
    ImageEncoder<Scalar> image_encoder_;
    TextTransformer<Scalar> caption_decoder_;
    TextTransformer<Scalar> text_encoder_;
    TextTransformer<Scalar> question_decoder_;
    std::vector<Parameter<Scalar>*> params_;

    static ModelConfig validated(ModelConfig cfg) {
        cfg.validate();
        return cfg;
    }

    static void require_source(const FeatureSequence<Scalar>& f, FeatureSource want,
                               const char* op) {
        if (f.source != want)
            throw std::invalid_argument(std::string(op) + ": unexpected feature source");
    }

    static Matrix<Scalar> fused_context(const FeatureSequence<Scalar>& f_caption,
                                        const FeatureSequence<Scalar>& f_knowledge) {
        Matrix<Scalar> ctx(f_caption.length() + f_knowledge.length(), f_caption.width());
        ctx.topRows(f_caption.length()) = f_caption.block;
        ctx.bottomRows(f_knowledge.length()) = f_knowledge.block;
        return ctx;
    }

    static TokenSequence to_sequence(const std::vector<int>& ids, int max_len) {
        TokenSequence seq;
        seq.ids = ids;
        seq.length = static_cast<int>(ids.size());
        seq.ids.resize(static_cast<std::size_t>(std::max<int>(max_len, seq.length)), kPadId);
        return seq;
    }

    struct Hypothesis {
        std::vector<int> ids;
        double score = 0.0;
        bool done = false;
    };

    std::vector<double> next_log_probs(TextTransformer<Scalar>& component,
                                       const Matrix<Scalar>& context,
                                       const std::vector<int>& prefix) {
        Tape<Scalar> t;
        Var<Scalar> ctx = t.constant(context);
        Var<Scalar> h = component.hidden(t, prefix, ctx);
        Var<Scalar> logits = component.vocab_logits(t, h);
        const auto row = logits.value().row(logits.value().rows() - 1);
        double max = -std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < row.size(); ++i)
            max = std::max(max, static_cast<double>(row(i)));
        double sum = 0.0;
        for (Eigen::Index i = 0; i < row.size(); ++i)
            sum += std::exp(static_cast<double>(row(i)) - max);
        const double lse = max + std::log(sum);
        std::vector<double> lp(static_cast<std::size_t>(row.size()));
        for (Eigen::Index i = 0; i < row.size(); ++i)
            lp[static_cast<std::size_t>(i)] = static_cast<double>(row(i)) - lse;
        // PAD and BOS are never valid generation targets.
        lp[kPadId] = -std::numeric_limits<double>::infinity();
        lp[kBosId] = -std::numeric_limits<double>::infinity();
        return lp;
    }

    // Greedy is the beam_size == 1 fast path; both share the same
    // first-index tie-break on equal scores.
    std::vector<int> decode_ids(TextTransformer<Scalar>& component,
                                const Matrix<Scalar>& context, int max_len, int beam_size,
                                int hard_cap) {
        if (max_len < 2) throw std::invalid_argument("max_len must allow BOS and one token");
        max_len = std::min(max_len, hard_cap);
        if (beam_size < 1) throw std::invalid_argument("beam size must be positive");
        if (beam_size == 1) return decode_greedy(component, context, max_len);
        return decode_beam(component, context, max_len, beam_size);
    }

    std::vector<int> decode_greedy(TextTransformer<Scalar>& component,
                                   const Matrix<Scalar>& context, int max_len) {
        std::vector<int> ids{kBosId};
        while (static_cast<int>(ids.size()) < max_len) {
            const auto lp = next_log_probs(component, context, ids);
            const int next = static_cast<int>(
                std::max_element(lp.begin(), lp.end()) - lp.begin());
            ids.push_back(next);
            if (next == kEosId) break;
        }
        return ids;
    }

    std::vector<int> decode_beam(TextTransformer<Scalar>& component,
                                 const Matrix<Scalar>& context, int max_len, int beam_size) {
        std::vector<Hypothesis> beam{{{kBosId}, 0.0, false}};
        for (int step = 1; step < max_len; ++step) {
            bool any_live = false;
            std::vector<Hypothesis> candidates;
            for (const auto& hyp : beam) {
                if (hyp.done) {
                    candidates.push_back(hyp);
                    continue;
                }
                any_live = true;
                const auto lp = next_log_probs(component, context, hyp.ids);
                // Top beam_size continuations of this hypothesis.
                std::vector<int> order(lp.size());
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
                std::stable_sort(order.begin(), order.end(),
                                 [&](int a, int b) { return lp[static_cast<std::size_t>(a)] >
                                                            lp[static_cast<std::size_t>(b)]; });
                const int take = std::min<int>(beam_size, static_cast<int>(order.size()));
                for (int k = 0; k < take; ++k) {
                    Hypothesis next = hyp;
                    next.ids.push_back(order[static_cast<std::size_t>(k)]);
                    next.score += lp[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
                    next.done = order[static_cast<std::size_t>(k)] == kEosId;
                    candidates.push_back(std::move(next));
                }
            }
            if (!any_live) break;
            std::stable_sort(candidates.begin(), candidates.end(),
                             [](const Hypothesis& a, const Hypothesis& b) {
                                 return a.score > b.score;
                             });
            if (static_cast<int>(candidates.size()) > beam_size)
                candidates.resize(static_cast<std::size_t>(beam_size));
            beam = std::move(candidates);
        }
        for (const auto& hyp : beam)
            if (hyp.done) return hyp.ids;
        return beam.front().ids;
    }
};

}  // namespace krsvqg
