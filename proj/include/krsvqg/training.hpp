#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "krsvqg/checkpoint.hpp"
#include "krsvqg/dataset.hpp"
#include "krsvqg/errors.hpp"
#include "krsvqg/model.hpp"

namespace krsvqg {

struct TrainConfig {
    double learning_rate = 0.0;  // 0 = per-stage default (1e-4 / 1e-4 / 1e-5)
    double weight_decay = 0.05;
    int batch_size = 8;
    int steps = 0;   // takes precedence over epochs when > 0
    int epochs = 0;  // both 0 = error
    std::uint64_t seed = 42;
    double grad_clip = 1.0;  // global norm; 0 disables
    bool cosine_lr = true;
    bool freeze_vision = false;  // stage 3 only
    double dropout = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        if (learning_rate < 0) throw std::invalid_argument("learning_rate must be positive");
        if (weight_decay < 0) throw std::invalid_argument("weight_decay must be non-negative");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
        if (steps <= 0 && epochs <= 0)
            throw std::invalid_argument("either steps or epochs must be set");
    }

    double stage_default_lr(int stage) const {
        if (learning_rate > 0) return learning_rate;
        return stage == 3 ? 1e-5 : 1e-4;
    }
};

// One of the three schedule stages: (1) caption pre-training of the vision
// module, (2) general-domain question pre-training of the whole model,
// (3) composed fine-tuning for the target domain.
struct StagePlan {
    int stage = 1;
    std::string dataset;
    std::string stage1_checkpoint;  // required for stage 3
    std::string stage2_checkpoint;  // required for stage 3

    std::vector<std::string> trained_components(bool freeze_vision) const {
        if (stage == 1) return {"image_encoder", "caption_decoder"};
        if (stage == 3 && freeze_vision) return {"text_encoder", "question_decoder"};
        return {"image_encoder", "caption_decoder", "text_encoder", "question_decoder"};
    }
};

// ---------------------------------------------------------------------------
// Losses. Mean negative log-likelihood per non-PAD target token.
// ---------------------------------------------------------------------------

template <class Scalar>
double sequence_nll(const Matrix<Scalar>& logits, const TokenSequence& target) {
    Tape<Scalar> t;
    Var<Scalar> loss = cross_entropy(t.constant(logits), target.ids, kPadId);
    return static_cast<double>(loss.value()(0, 0));
}

template <class Scalar>
double caption_loss(const Matrix<Scalar>& logits, const TokenSequence& target) {
    return sequence_nll(logits, target);
}

template <class Scalar>
double question_loss(const Matrix<Scalar>& logits, const TokenSequence& target) {
    return sequence_nll(logits, target);
}

// ---------------------------------------------------------------------------
// Decoupled-weight-decay Adam.
// ---------------------------------------------------------------------------

template <class Scalar>
class AdamW {
public:
    explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

    long step_count() const { return step_count_; }

    // One update over `params` from their accumulated gradients. Weight
    // decay is applied directly to the parameter, separate from the
    // gradient term; no-decay parameters (biases, norm scales/shifts) and
    // frozen parameters are untouched by it.
    void step(const std::vector<Parameter<Scalar>*>& params, double lr) {
        ++step_count_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        for (Parameter<Scalar>* p : params) {
            if (!all_finite(p->grad))
                throw std::runtime_error("non-finite gradient in parameter " + p->name);
            State& s = state(p);
            const Matrix<double> g = p->grad.template cast<double>();
            s.m = cfg_.beta1 * s.m + (1.0 - cfg_.beta1) * g;
            s.v = cfg_.beta2 * s.v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
            const Matrix<double> m_hat = s.m / bc1;
            const Matrix<double> v_hat = s.v / bc2;
            Matrix<double> update =
                (m_hat.array() / (v_hat.array().sqrt() + cfg_.adam_eps)).matrix();
            if (cfg_.weight_decay > 0 && !p->no_decay)
                update += cfg_.weight_decay * p->value.template cast<double>();
            p->value -= (lr * update).template cast<Scalar>();
        }
    }

    // Scales all gradients so their global L2 norm is at most `max_norm`.
    static void clip_gradients(const std::vector<Parameter<Scalar>*>& params, double max_norm) {
        if (max_norm <= 0) return;
        double sq = 0;
        for (const Parameter<Scalar>* p : params)
            sq += static_cast<double>(p->grad.squaredNorm());
        const double norm = std::sqrt(sq);
        if (norm <= max_norm) return;
        const Scalar factor = static_cast<Scalar>(max_norm / norm);
        for (Parameter<Scalar>* p : params) p->grad *= factor;
    }

private:
    struct State {
        Matrix<double> m, v;
    };

    State& state(Parameter<Scalar>* p) {
        auto it = states_.find(p);
        if (it == states_.end()) {
            State s;
            s.m = Matrix<double>::Zero(p->value.rows(), p->value.cols());
            s.v = Matrix<double>::Zero(p->value.rows(), p->value.cols());
            it = states_.emplace(p, std::move(s)).first;
        }
        return it->second;
    }

    TrainConfig cfg_;
    long step_count_ = 0;
    std::unordered_map<Parameter<Scalar>*, State> states_;
};

// ---------------------------------------------------------------------------
// Stage runner.
// ---------------------------------------------------------------------------

template <class Scalar>
struct TrainSample {
    std::string image_ref;
    Matrix<Scalar> patches;  // pre-patchified image
    TokenSequence caption;
    TokenSequence knowledge;
    TokenSequence question;
};

// Reads a dataset file, resolves image paths relative to it, resizes
// images to the model's input size, and tokenizes the text fields.
// Verifies the schema needed by the stage.
template <class Scalar>
std::vector<TrainSample<Scalar>> load_training_set(const std::string& dataset_path,
                                                   const Vocabulary& vocab,
                                                   const ModelConfig& cfg, int stage) {
    const auto records = read_records_jsonl(dataset_path);
    if (records.empty()) throw PreconditionError("dataset is empty: " + dataset_path);
    const auto base = std::filesystem::path(dataset_path).parent_path();

    std::vector<TrainSample<Scalar>> samples;
    samples.reserve(records.size());
    for (const auto& r : records) {
        if (r.image_ref.empty() || r.caption.empty())
            throw PreconditionError("dataset schema mismatch: records need 'image' and 'caption'");
        if (stage >= 2 && (r.knowledge_sentence.empty() || r.question.empty()))
            throw PreconditionError(
                "dataset schema mismatch: stage " + std::to_string(stage) +
                " needs 'knowledge_sentence' and 'question' fields");
        TrainSample<Scalar> s;
        s.image_ref = r.image_ref;
        std::filesystem::path img_path(r.image_ref);
        if (img_path.is_relative()) img_path = base / img_path;
        Image img = load_image(img_path.string());
        if (img.height != cfg.image_size || img.width != cfg.image_size)
            img = resize_bilinear(img, cfg.image_size, cfg.image_size);
        s.patches = patchify<Scalar>(img, cfg.patch_size);
        s.caption = encode(r.caption, vocab, cfg.caption_max_len);
        if (stage >= 2) {
            s.knowledge = encode(r.knowledge_sentence, vocab, cfg.knowledge_max_len);
            s.question = encode(r.question, vocab, cfg.question_max_len);
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

namespace detail {

inline std::vector<int> shifted_targets(const std::vector<int>& ids) {
    return {ids.begin() + 1, ids.end()};
}

}  // namespace detail

// Teacher-forced loss for one sample on a fresh tape; backward() on the
// returned Var reaches every parameter the stage's loss depends on.
template <class Scalar>
Var<Scalar> stage_loss(KrsvqgModel<Scalar>& model, Tape<Scalar>& t,
                       const TrainSample<Scalar>& sample, int stage,
                       const DropoutConfig& drop = {}) {
    const auto cap_ids = detail::effective_ids(sample.caption, model.config().vocab_size);
    Var<Scalar> f_image = model.image_features(t, sample.patches, drop);
    Var<Scalar> cap_hidden = model.caption_hidden(t, cap_ids, f_image, drop);

    if (stage == 1) {
        Var<Scalar> logits = model.caption_vocab_logits(t, cap_hidden);
        Var<Scalar> scored = slice_rows(logits, 0, logits.rows() - 1);
        return cross_entropy(scored, detail::shifted_targets(cap_ids), kPadId);
    }

    const auto knw_ids = detail::effective_ids(sample.knowledge, model.config().vocab_size);
    if (knw_ids.size() <= 2) throw std::invalid_argument("knowledge required");
    const auto q_ids = detail::effective_ids(sample.question, model.config().vocab_size);

    Var<Scalar> f_knowledge = model.knowledge_hidden(t, knw_ids, f_image, drop);
    Var<Scalar> fused = concat_rows(cap_hidden, f_knowledge);
    Var<Scalar> q_hidden = model.question_hidden(t, q_ids, fused, drop);
    Var<Scalar> logits = model.question_vocab_logits(t, q_hidden);
    Var<Scalar> scored = slice_rows(logits, 0, logits.rows() - 1);
    return cross_entropy(scored, detail::shifted_targets(q_ids), kPadId);
}

struct StageResult {
    std::vector<std::pair<long, double>> curve;  // (step, batch loss)
    std::string final_checkpoint;
};

// Runs one schedule stage. Stage 3 composes its starting point from the
// stage-1 checkpoint (vision components) and the stage-2 checkpoint
// (language components) before any update.
template <class Scalar>
StageResult run_stage(const StagePlan& plan, KrsvqgModel<Scalar>& model,
                      const std::vector<TrainSample<Scalar>>& data, const TrainConfig& tc,
                      const std::string& out_dir) {
    tc.validate();
    if (plan.stage < 1 || plan.stage > 3) throw std::invalid_argument("stage must be 1, 2 or 3");
    if (data.empty()) throw PreconditionError("no training samples");
    if (plan.stage == 3) {
        if (plan.stage1_checkpoint.empty())
            throw PreconditionError("stage 3 requires a stage-1 checkpoint (vision components)");
        if (plan.stage2_checkpoint.empty())
            throw PreconditionError("stage 3 requires a stage-2 checkpoint (language components)");
        const auto ck1 = Checkpoint<Scalar>::load(plan.stage1_checkpoint);
        const auto ck2 = Checkpoint<Scalar>::load(plan.stage2_checkpoint);
        load_components(ck1, model, kVisionComponents);
        load_components(ck2, model, kLanguageComponents);
    }

    std::filesystem::create_directories(out_dir);
    const std::string stage_tag = "stage" + std::to_string(plan.stage);

    // Restrict updates (and decay) to the stage's trained components.
    std::vector<Parameter<Scalar>*> trained;
    const auto components = plan.trained_components(tc.freeze_vision);
    for (Parameter<Scalar>* p : model.parameters()) {
        const std::string comp = component_of(p->name);
        for (const auto& c : components)
            if (comp == c) {
                trained.push_back(p);
                break;
            }
    }

    const int steps_per_epoch =
        static_cast<int>((data.size() + tc.batch_size - 1) / tc.batch_size);
    const int total_steps = tc.steps > 0 ? tc.steps : tc.epochs * steps_per_epoch;
    if (total_steps <= 0) throw std::invalid_argument("no training steps requested");

    AdamW<Scalar> opt(tc);
    Rng order_rng(tc.seed);
    Rng dropout_rng(tc.seed ^ 0x5eedd20b5eedd20bULL);
    const double base_lr = tc.stage_default_lr(plan.stage);

    std::ofstream curve_out(out_dir + "/loss_curve.csv", std::ios::binary);
    if (!curve_out) throw IoError("cannot write loss curve in " + out_dir);
    curve_out << "step,stage,loss\n";

    StageResult result;
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = 0;
    order_rng.shuffle(order);

    for (long step = 1; step <= total_steps; ++step) {
        model.zero_grads();
        double batch_loss = 0;
        int in_batch = 0;
        for (; in_batch < tc.batch_size; ++in_batch) {
            if (cursor == order.size()) {
                cursor = 0;
                order_rng.shuffle(order);
            }
            const auto& sample = data[order[cursor++]];
            Tape<Scalar> tape;
            DropoutConfig drop;
            if (tc.dropout > 0) drop = DropoutConfig{tc.dropout, &dropout_rng};
            Var<Scalar> loss = stage_loss(model, tape, sample, plan.stage, drop);
            batch_loss += static_cast<double>(loss.value()(0, 0));
            tape.backward(loss);
        }
        batch_loss /= in_batch;
        // Mean gradient over the batch.
        for (Parameter<Scalar>* p : trained) p->grad /= static_cast<Scalar>(in_batch);
        AdamW<Scalar>::clip_gradients(trained, tc.grad_clip);

        double lr = base_lr;
        if (tc.cosine_lr)
            lr = base_lr * 0.5 *
                 (1.0 + std::cos(M_PI * static_cast<double>(step - 1) /
                                 static_cast<double>(total_steps)));
        opt.step(trained, lr);

        curve_out << step << ',' << plan.stage << ',' << batch_loss << '\n';
        result.curve.emplace_back(step, batch_loss);

        // Epoch-driven runs persist a checkpoint at each epoch boundary.
        if (tc.steps == 0 && step % steps_per_epoch == 0 && step < total_steps) {
            const int epoch = static_cast<int>(step) / steps_per_epoch;
            Checkpoint<Scalar>::from_model(model).save(
                out_dir + "/" + stage_tag + "_epoch" + std::to_string(epoch) + ".krsv");
        }
    }

    result.final_checkpoint = out_dir + "/" + stage_tag + "_final.krsv";
    Checkpoint<Scalar>::from_model(model).save(result.final_checkpoint);
    return result;
}

}  // namespace krsvqg
