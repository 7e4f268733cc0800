// Command-line entry point: dataset construction, the three training
// stages, generation, and evaluation.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "krsvqg/checkpoint.hpp"
#include "krsvqg/config.hpp"
#include "krsvqg/dataset.hpp"
#include "krsvqg/errors.hpp"
#include "krsvqg/metrics.hpp"
#include "krsvqg/model.hpp"
#include "krsvqg/tokenizer.hpp"
#include "krsvqg/training.hpp"

namespace fs = std::filesystem;
using Scalar = double;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitTrainPrecondition = 3;
constexpr int kExitGeneration = 4;
constexpr int kExitEvaluation = 5;

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 42;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key=value config file");
    cmd->add_option("--out-dir", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "random seed");
}

// ---------------------------------------------------------------------------
// build-dataset
// ---------------------------------------------------------------------------

struct BuildArgs {
    CommonArgs common;
    std::string captions_path;
    std::string triplets_path;
    std::string questions_path;  // optional external annotations
};

int run_build_dataset(const BuildArgs& args) {
    try {
        const auto captions = krsvqg::load_captions(args.captions_path);
        std::vector<std::string> warnings;
        const auto triplets =
            krsvqg::load_triplets(args.triplets_path, krsvqg::supported_relations(), &warnings);
        for (const auto& w : warnings) std::cerr << args.triplets_path << ": " << w << '\n';

        std::optional<std::map<std::string, std::string>> questions;
        if (!args.questions_path.empty()) {
            questions.emplace();
            for (const auto& entry : krsvqg::load_captions(args.questions_path))
                (*questions)[entry.image_ref] = entry.caption;
        }

        krsvqg::BuildSummary summary;
        const auto records = krsvqg::build_records(
            captions, triplets, args.common.seed, questions ? &*questions : nullptr, &summary);
        const auto [train, val] = krsvqg::split_dataset(records, args.common.seed);
        summary.train = static_cast<int>(train.size());
        summary.val = static_cast<int>(val.size());

        fs::create_directories(args.common.out_dir);
        krsvqg::write_records_jsonl(train, args.common.out_dir + "/train.jsonl");
        krsvqg::write_records_jsonl(val, args.common.out_dir + "/val.jsonl");

        nlohmann::ordered_json j;
        j["captions"] = summary.captions;
        j["records"] = summary.records;
        j["skipped"] = summary.skipped;
        j["train"] = summary.train;
        j["val"] = summary.val;
        j["relations"] = summary.relation_histogram;
        const std::string text = j.dump(2);
        std::ofstream summary_out(args.common.out_dir + "/summary.json", std::ios::binary);
        summary_out << text << '\n';
        std::cout << text << '\n';
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "build-dataset: " << e.what() << '\n';
        return kExitIo;
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    CommonArgs common;
    int stage = 0;
    std::string dataset_path;
    std::string vocab_path;
    std::string stage1_ckpt;
    std::string stage2_ckpt;
    std::string preset = "toy";
    // Optional overrides; config file supplies the rest.
    std::optional<double> lr, weight_decay, grad_clip, dropout;
    std::optional<int> steps, epochs, batch_size;
    std::optional<int> image_size, patch_size, model_width, heads;
    std::optional<int> image_blocks, caption_blocks, text_blocks, question_blocks;
    std::optional<int> caption_max_len, knowledge_max_len, question_max_len;
    bool freeze_vision = false;
    bool constant_lr = false;
};

template <class T>
void maybe_set(const std::map<std::string, std::string>& kv, const char* key, T& out) {
    const auto it = kv.find(key);
    if (it == kv.end()) return;
    if constexpr (std::is_same_v<T, bool>)
        out = it->second == "1" || it->second == "true" || it->second == "yes";
    else if constexpr (std::is_integral_v<T>)
        out = static_cast<T>(std::stoll(it->second));
    else
        out = static_cast<T>(std::stod(it->second));
}

int run_train(const TrainArgs& args) {
    try {
        krsvqg::ModelConfig mc =
            args.preset == "paper" ? krsvqg::ModelConfig::paper(0) : krsvqg::ModelConfig::toy(0);
        krsvqg::TrainConfig tc;
        tc.seed = args.common.seed;

        if (!args.common.config_path.empty()) {
            const auto kv = krsvqg::parse_kv_file(args.common.config_path);
            maybe_set(kv, "image_size", mc.image_size);
            maybe_set(kv, "patch_size", mc.patch_size);
            maybe_set(kv, "model_width", mc.model_width);
            maybe_set(kv, "heads", mc.heads);
            maybe_set(kv, "image_blocks", mc.image_blocks);
            maybe_set(kv, "caption_blocks", mc.caption_blocks);
            maybe_set(kv, "text_blocks", mc.text_blocks);
            maybe_set(kv, "question_blocks", mc.question_blocks);
            maybe_set(kv, "caption_max_len", mc.caption_max_len);
            maybe_set(kv, "knowledge_max_len", mc.knowledge_max_len);
            maybe_set(kv, "question_max_len", mc.question_max_len);
            maybe_set(kv, "learning_rate", tc.learning_rate);
            maybe_set(kv, "weight_decay", tc.weight_decay);
            maybe_set(kv, "batch_size", tc.batch_size);
            maybe_set(kv, "steps", tc.steps);
            maybe_set(kv, "epochs", tc.epochs);
            maybe_set(kv, "seed", tc.seed);
            maybe_set(kv, "grad_clip", tc.grad_clip);
            maybe_set(kv, "cosine_lr", tc.cosine_lr);
            maybe_set(kv, "freeze_vision", tc.freeze_vision);
            maybe_set(kv, "dropout", tc.dropout);
        }
        // Flags win over the config file.
        auto apply = [](auto& target, const auto& opt) {
            if (opt) target = *opt;
        };
        apply(mc.image_size, args.image_size);
        apply(mc.patch_size, args.patch_size);
        apply(mc.model_width, args.model_width);
        apply(mc.heads, args.heads);
        apply(mc.image_blocks, args.image_blocks);
        apply(mc.caption_blocks, args.caption_blocks);
        apply(mc.text_blocks, args.text_blocks);
        apply(mc.question_blocks, args.question_blocks);
        apply(mc.caption_max_len, args.caption_max_len);
        apply(mc.knowledge_max_len, args.knowledge_max_len);
        apply(mc.question_max_len, args.question_max_len);
        apply(tc.learning_rate, args.lr);
        apply(tc.weight_decay, args.weight_decay);
        apply(tc.batch_size, args.batch_size);
        apply(tc.steps, args.steps);
        apply(tc.epochs, args.epochs);
        apply(tc.grad_clip, args.grad_clip);
        apply(tc.dropout, args.dropout);
        if (args.freeze_vision) tc.freeze_vision = true;
        if (args.constant_lr) tc.cosine_lr = false;
        if (tc.steps == 0 && tc.epochs == 0) tc.epochs = 10;

        fs::create_directories(args.common.out_dir);

        // The vocabulary is shared across stages: built from the first
        // dataset it sees, then reloaded from disk.
        std::string vocab_path = args.vocab_path.empty()
                                     ? args.common.out_dir + "/vocab.txt"
                                     : args.vocab_path;
        krsvqg::Vocabulary vocab;
        if (fs::exists(vocab_path)) {
            vocab = krsvqg::Vocabulary::load(vocab_path);
        } else {
            std::vector<std::string> corpus;
            for (const auto& r : krsvqg::read_records_jsonl(args.dataset_path)) {
                if (!r.caption.empty()) corpus.push_back(r.caption);
                if (!r.knowledge_sentence.empty()) corpus.push_back(r.knowledge_sentence);
                if (!r.question.empty()) corpus.push_back(r.question);
            }
            vocab = krsvqg::Vocabulary::build(corpus, 1);
            vocab.save(vocab_path);
        }
        mc.vocab_size = vocab.size();

        krsvqg::KrsvqgModel<Scalar> model(mc, tc.seed);
        const auto data =
            krsvqg::load_training_set<Scalar>(args.dataset_path, vocab, mc, args.stage);

        krsvqg::StagePlan plan;
        plan.stage = args.stage;
        plan.dataset = args.dataset_path;
        plan.stage1_checkpoint = args.stage1_ckpt;
        plan.stage2_checkpoint = args.stage2_ckpt;

        const auto result = krsvqg::run_stage(plan, model, data, tc, args.common.out_dir);
        std::cout << "final loss: " << result.curve.back().second << '\n';
        std::cout << "checkpoint: " << result.final_checkpoint << '\n';
        std::cout << "loss curve: " << args.common.out_dir << "/loss_curve.csv" << '\n';
        return 0;
    } catch (const krsvqg::IoError& e) {
        std::cerr << "train: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "train: " << e.what() << '\n';
        return kExitTrainPrecondition;
    }
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
    CommonArgs common;
    std::string checkpoint_path;
    std::string image_path;
    std::string knowledge;
    std::string vocab_path;
    int beam = 1;
    int max_len = 0;
    bool show_shapes = false;
};

int run_generate(const GenerateArgs& args) {
    try {
        const auto ck = krsvqg::Checkpoint<Scalar>::load(args.checkpoint_path);
        const std::string vocab_path =
            args.vocab_path.empty()
                ? (fs::path(args.checkpoint_path).parent_path() / "vocab.txt").string()
                : args.vocab_path;
        const auto vocab = krsvqg::Vocabulary::load(vocab_path);

        krsvqg::Image img = krsvqg::load_image(args.image_path);

        try {
            if (vocab.size() != ck.config.vocab_size)
                throw krsvqg::GenerationError("vocabulary size does not match checkpoint");
            krsvqg::KrsvqgModel<Scalar> model(ck.config, args.common.seed);
            krsvqg::load_into_model(ck, model);

            if (img.height != ck.config.image_size || img.width != ck.config.image_size)
                img = krsvqg::resize_bilinear(img, ck.config.image_size, ck.config.image_size);

            const auto f_image = model.encode_image(img);
            krsvqg::DecodingParams decoding{args.beam, args.max_len};
            const auto [caption_ids, f_caption] = model.generate_caption(f_image, decoding);

            const auto knowledge_ids =
                krsvqg::encode(args.knowledge, vocab, ck.config.knowledge_max_len);
            const auto f_knowledge = model.encode_knowledge(knowledge_ids, f_image);
            const auto question_ids =
                model.generate_question(f_caption, f_knowledge, decoding);

            if (args.show_shapes) {
                std::cout << "f_I: " << f_image.length() << 'x' << f_image.width() << '\n';
                std::cout << "f_C: " << f_caption.length() << 'x' << f_caption.width() << '\n';
                std::cout << "f_T: " << f_knowledge.length() << 'x' << f_knowledge.width()
                          << '\n';
            }
            std::cout << "caption: " << krsvqg::decode(caption_ids, vocab) << '\n';
            std::cout << "question: " << krsvqg::decode(question_ids, vocab) << '\n';
            return 0;
        } catch (const krsvqg::IoError&) {
            throw;
        } catch (const std::exception& e) {
            std::cerr << "generate: " << e.what() << '\n';
            return kExitGeneration;
        }
    } catch (const std::exception& e) {
        std::cerr << "generate: " << e.what() << '\n';
        return kExitIo;
    }
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
    CommonArgs common;
    std::string predictions_path;
    std::string references_path;
    bool csv = false;
};

// "image_ref<TAB>text" lines; a .jsonl dataset file contributes its
// question field.
std::vector<std::pair<std::string, std::string>> load_eval_lines(const std::string& path) {
    std::vector<std::pair<std::string, std::string>> out;
    if (path.size() > 6 && path.substr(path.size() - 6) == ".jsonl") {
        for (const auto& r : krsvqg::read_records_jsonl(path)) out.emplace_back(r.image_ref, r.question);
        return out;
    }
    for (const auto& e : krsvqg::load_captions(path)) out.emplace_back(e.image_ref, e.caption);
    return out;
}

int run_evaluate(const EvaluateArgs& args) {
    try {
        std::vector<std::pair<std::string, std::string>> predictions, references;
        try {
            predictions = load_eval_lines(args.predictions_path);
            references = load_eval_lines(args.references_path);
        } catch (const krsvqg::IoError&) {
            throw;
        }

        if (predictions.empty()) throw krsvqg::EvalError("empty predictions file");
        std::map<std::string, std::vector<std::vector<std::string>>> refs_by_id;
        for (const auto& [id, text] : references)
            refs_by_id[id].push_back(krsvqg::normalize_tokens(text));

        std::vector<krsvqg::EvalPair> pairs;
        std::set<std::string> seen;
        for (const auto& [id, text] : predictions) {
            if (!seen.insert(id).second)
                throw krsvqg::EvalError("duplicate prediction for image: " + id);
            const auto it = refs_by_id.find(id);
            if (it == refs_by_id.end())
                throw krsvqg::EvalError("prediction has no reference: " + id);
            pairs.push_back(krsvqg::EvalPair{krsvqg::normalize_tokens(text), it->second});
        }
        if (seen.size() != refs_by_id.size())
            throw krsvqg::EvalError("reference file has images missing from predictions");

        const auto report = krsvqg::score_all(pairs);
        nlohmann::ordered_json j;
        j["bleu1"] = report.bleu1;
        j["bleu2"] = report.bleu2;
        j["bleu3"] = report.bleu3;
        j["bleu4"] = report.bleu4;
        j["meteor"] = report.meteor;
        j["rouge_l"] = report.rouge_l;
        j["cider"] = report.cider;
        std::cout << j.dump(2) << '\n';
        if (args.csv) {
            std::cout << "bleu1,bleu2,bleu3,bleu4,meteor,rouge_l,cider\n";
            std::cout << report.bleu1 << ',' << report.bleu2 << ',' << report.bleu3 << ','
                      << report.bleu4 << ',' << report.meteor << ',' << report.rouge_l << ','
                      << report.cider << '\n';
        }
        return 0;
    } catch (const krsvqg::IoError& e) {
        std::cerr << "evaluate: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "evaluate: " << e.what() << '\n';
        return kExitEvaluation;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"knowledge-aware visual question generation pipeline"};
    app.require_subcommand(1);

    BuildArgs build_args;
    CLI::App* build = app.add_subcommand("build-dataset",
                                         "select triplets for a caption corpus and emit splits");
    build->add_option("--captions", build_args.captions_path, "image_ref<TAB>caption lines")
        ->required();
    build->add_option("--triplets", build_args.triplets_path, "relation<TAB>head<TAB>tail lines")
        ->required();
    build->add_option("--questions", build_args.questions_path,
                      "optional image_ref<TAB>question annotations");
    add_common(build, build_args.common);

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "run one training stage");
    train->add_option("--stage", train_args.stage, "1: captions, 2: general questions, 3: fine-tune")
        ->required()
        ->check(CLI::Range(1, 3));
    train->add_option("--dataset", train_args.dataset_path, "dataset .jsonl")->required();
    train->add_option("--vocab", train_args.vocab_path, "vocabulary file (built if missing)");
    train->add_option("--stage1-ckpt", train_args.stage1_ckpt, "stage-1 checkpoint (stage 3)");
    train->add_option("--stage2-ckpt", train_args.stage2_ckpt, "stage-2 checkpoint (stage 3)");
    train->add_option("--preset", train_args.preset, "toy or paper")
        ->check(CLI::IsMember({"toy", "paper"}));
    train->add_option("--lr", train_args.lr, "learning rate");
    train->add_option("--weight-decay", train_args.weight_decay, "decoupled weight decay");
    train->add_option("--batch-size", train_args.batch_size, "batch size");
    train->add_option("--steps", train_args.steps, "total optimizer steps");
    train->add_option("--epochs", train_args.epochs, "epochs (when steps unset)");
    train->add_option("--grad-clip", train_args.grad_clip, "global gradient norm clip");
    train->add_option("--dropout", train_args.dropout, "dropout rate");
    train->add_option("--image-size", train_args.image_size, "input image size");
    train->add_option("--patch-size", train_args.patch_size, "patch size");
    train->add_option("--model-width", train_args.model_width, "model width");
    train->add_option("--heads", train_args.heads, "attention heads");
    train->add_option("--image-blocks", train_args.image_blocks, "image encoder blocks");
    train->add_option("--caption-blocks", train_args.caption_blocks, "caption decoder blocks");
    train->add_option("--text-blocks", train_args.text_blocks, "text encoder blocks");
    train->add_option("--question-blocks", train_args.question_blocks, "question decoder blocks");
    train->add_option("--caption-max-len", train_args.caption_max_len, "caption token limit");
    train->add_option("--knowledge-max-len", train_args.knowledge_max_len, "knowledge token limit");
    train->add_option("--question-max-len", train_args.question_max_len, "question token limit");
    train->add_flag("--freeze-vision", train_args.freeze_vision,
                    "stage 3: do not update vision components");
    train->add_flag("--constant-lr", train_args.constant_lr, "disable cosine decay");
    add_common(train, train_args.common);

    GenerateArgs gen_args;
    CLI::App* gen = app.add_subcommand("generate", "caption + question for one image");
    gen->add_option("--checkpoint", gen_args.checkpoint_path, "model checkpoint")->required();
    gen->add_option("--image", gen_args.image_path, "image file (.ppm or raw float)")->required();
    gen->add_option("--knowledge", gen_args.knowledge, "knowledge sentence")->required();
    gen->add_option("--vocab", gen_args.vocab_path, "vocabulary (default: next to checkpoint)");
    gen->add_option("--beam", gen_args.beam, "beam size (1 = greedy)");
    gen->add_option("--max-len", gen_args.max_len, "decode length cap");
    gen->add_flag("--show-shapes", gen_args.show_shapes, "print f_I/f_C/f_T shapes");
    add_common(gen, gen_args.common);

    EvaluateArgs eval_args;
    CLI::App* eval = app.add_subcommand("evaluate", "score predictions against references");
    eval->add_option("--predictions", eval_args.predictions_path, "image_ref<TAB>question lines")
        ->required();
    eval->add_option("--references", eval_args.references_path,
                     "image_ref<TAB>question lines or dataset .jsonl")
        ->required();
    eval->add_flag("--csv", eval_args.csv, "also print a CSV row");
    add_common(eval, eval_args.common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    if (build->parsed()) return run_build_dataset(build_args);
    if (train->parsed()) return run_train(train_args);
    if (gen->parsed()) return run_generate(gen_args);
    if (eval->parsed()) return run_evaluate(eval_args);
    return kExitUsage;
}
