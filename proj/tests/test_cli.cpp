#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "krsvqg/dataset.hpp"
#include "support/fixtures.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args, const std::string& workdir) {
    const std::string out_file = workdir + "/cli_output.txt";
    const std::string cmd =
        std::string(KRSVQG_CLI_PATH) + " " + args + " > " + out_file + " 2>&1";
    const int raw = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.output = testsupport::read_file(out_file);
    return r;
}

// Caption/triplet corpus large enough for a 4:1 split demonstration.
void write_builder_inputs(const std::string& dir) {
    std::string captions;
    for (const auto& line : testsupport::fixture_caption_lines()) captions += line + "\n";
    // Repeat with new image refs to get 16 records.
    for (const auto& line : testsupport::fixture_caption_lines()) {
        captions += "copy_" + line + "\n";
    }
    testsupport::write_file(dir + "/captions.tsv", captions);

    std::string triplets;
    for (const auto& t : testsupport::fixture_triplets())
        triplets += t.relation + "\t" + t.head + "\t" + t.tail + "\n";
    testsupport::write_file(dir + "/triplets.tsv", triplets);
}

}  // namespace

TEST_CASE("build-dataset emits a 4:1 split, a summary, and is seed-deterministic") {
    const auto dir = testsupport::make_temp_dir("cli_build");
    write_builder_inputs(dir);

    const auto r1 = run_cli("build-dataset --captions " + dir + "/captions.tsv --triplets " +
                                dir + "/triplets.tsv --out-dir " + dir + "/out1 --seed 5",
                            dir);
    CHECK(r1.exit_code == 0);
    CHECK(r1.output.find("\"records\": 16") != std::string::npos);
    CHECK(r1.output.find("\"train\": 13") != std::string::npos);  // 16 - floor(16/5)
    CHECK(r1.output.find("\"val\": 3") != std::string::npos);

    const auto r2 = run_cli("build-dataset --captions " + dir + "/captions.tsv --triplets " +
                                dir + "/triplets.tsv --out-dir " + dir + "/out2 --seed 5",
                            dir);
    CHECK(r2.exit_code == 0);
    CHECK(testsupport::read_file(dir + "/out1/train.jsonl") ==
          testsupport::read_file(dir + "/out2/train.jsonl"));
    CHECK(testsupport::read_file(dir + "/out1/val.jsonl") ==
          testsupport::read_file(dir + "/out2/val.jsonl"));
    CHECK(!testsupport::read_file(dir + "/out1/summary.json").empty());
}

TEST_CASE("build-dataset with an unreadable path exits 2 and names it") {
    const auto dir = testsupport::make_temp_dir("cli_build_bad");
    write_builder_inputs(dir);
    const auto r = run_cli("build-dataset --captions " + dir + "/absent.tsv --triplets " + dir +
                               "/triplets.tsv --out-dir " + dir + "/out",
                           dir);
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("absent.tsv") != std::string::npos);
}

TEST_CASE("train/generate/evaluate round trip on the fixture") {
    const auto dir = testsupport::make_temp_dir("cli_train");
    const auto fixture = testsupport::write_fixture_dataset(dir + "/data", 32);

    const std::string model_flags =
        " --image-size 32 --patch-size 8 --model-width 16 --heads 2 "
        "--caption-max-len 16 --knowledge-max-len 14 --question-max-len 14 ";

    // Stage 3 without prerequisites: exit 3, names the missing artifact.
    const auto missing = run_cli("train --stage 3 --dataset " + fixture.dataset_path +
                                     " --out-dir " + dir + "/s3" + model_flags,
                                 dir);
    CHECK(missing.exit_code == 3);
    CHECK(missing.output.find("stage-1 checkpoint") != std::string::npos);

    // A short stage-1 run completes and is reproducible under a fixed seed.
    const auto start = std::chrono::steady_clock::now();
    const std::string train_flags = "train --stage 1 --dataset " + fixture.dataset_path +
                                    model_flags + "--steps 4 --batch-size 4 --seed 9 --lr 1e-3";
    const auto t1 = run_cli(train_flags + " --out-dir " + dir + "/runA", dir);
    const auto elapsed = std::chrono::duration_cast<std::chrono::seconds>(
                             std::chrono::steady_clock::now() - start)
                             .count();
    CHECK(t1.exit_code == 0);
    CHECK(elapsed < 300);  // the toy stage completes comfortably on CPU
    CHECK(fs::exists(dir + "/runA/stage1_final.krsv"));
    CHECK(fs::exists(dir + "/runA/loss_curve.csv"));
    CHECK(fs::exists(dir + "/runA/vocab.txt"));

    const auto t2 = run_cli(train_flags + " --out-dir " + dir + "/runB", dir);
    CHECK(t2.exit_code == 0);
    CHECK(testsupport::read_file(dir + "/runA/loss_curve.csv") ==
          testsupport::read_file(dir + "/runB/loss_curve.csv"));

    // Generation: deterministic under greedy decoding; knowledge required.
    const std::string gen = "generate --checkpoint " + dir + "/runA/stage1_final.krsv" +
                            " --image " + dir + "/data/img0.imgf32" +
                            " --knowledge \"basketball court is used for playing games\"";
    const auto g1 = run_cli(gen, dir);
    const auto g2 = run_cli(gen, dir);
    CHECK(g1.exit_code == 0);
    CHECK(g1.output == g2.output);
    CHECK(g1.output.find("caption:") != std::string::npos);
    CHECK(g1.output.find("question:") != std::string::npos);

    const auto g3 = run_cli(gen + " --show-shapes", dir);
    CHECK(g3.exit_code == 0);
    CHECK(g3.output.find("f_I: 17x16") != std::string::npos);
    CHECK(g3.output.find("f_T:") != std::string::npos);

    // Missing --knowledge is a usage error.
    const auto g4 = run_cli("generate --checkpoint " + dir + "/runA/stage1_final.krsv" +
                                " --image " + dir + "/data/img0.imgf32",
                            dir);
    CHECK(g4.exit_code == 1);

    // Unreadable image: io error.
    const auto g5 = run_cli("generate --checkpoint " + dir + "/runA/stage1_final.krsv" +
                                " --image " + dir + "/missing.imgf32 --knowledge \"a b c\"",
                            dir);
    CHECK(g5.exit_code == 2);
}

TEST_CASE("train reads a config file and flags override it") {
    const auto dir = testsupport::make_temp_dir("cli_config");
    const auto fixture = testsupport::write_fixture_dataset(dir + "/data", 32);

    testsupport::write_file(dir + "/train.cfg",
                            "# compact model\n"
                            "image_size = 32\n"
                            "patch_size = 8\n"
                            "model_width = 16\n"
                            "heads = 2\n"
                            "caption_max_len = 16\n"
                            "knowledge_max_len = 14\n"
                            "question_max_len = 14\n"
                            "steps = 2\n"
                            "batch_size = 4\n"
                            "learning_rate = 1e-3\n");

    // Config alone: 2 steps.
    const auto r1 = run_cli("train --stage 1 --dataset " + fixture.dataset_path +
                                " --config " + dir + "/train.cfg --out-dir " + dir + "/c1",
                            dir);
    CHECK(r1.exit_code == 0);
    std::istringstream curve1(testsupport::read_file(dir + "/c1/loss_curve.csv"));
    std::string line;
    int rows1 = -1;  // header
    while (std::getline(curve1, line))
        if (!line.empty()) ++rows1;
    CHECK(rows1 == 2);

    // The --steps flag wins over the config file.
    const auto r2 = run_cli("train --stage 1 --dataset " + fixture.dataset_path +
                                " --config " + dir + "/train.cfg --steps 4 --out-dir " + dir +
                                "/c2",
                            dir);
    CHECK(r2.exit_code == 0);
    std::istringstream curve2(testsupport::read_file(dir + "/c2/loss_curve.csv"));
    int rows2 = -1;
    while (std::getline(curve2, line))
        if (!line.empty()) ++rows2;
    CHECK(rows2 == 4);
}

TEST_CASE("evaluate scores aligned files and rejects misalignment") {
    const auto dir = testsupport::make_temp_dir("cli_eval");
    std::string refs;
    refs += "img0\twhat is used for playing games\n";
    refs += "img1\tbridge is used for what\n";
    refs += "img2\twhere are the mobile houses\n";
    testsupport::write_file(dir + "/refs.tsv", refs);
    testsupport::write_file(dir + "/preds.tsv", refs);  // predictions == references

    const auto r = run_cli("evaluate --predictions " + dir + "/preds.tsv --references " + dir +
                               "/refs.tsv --csv",
                           dir);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("\"bleu4\": 100.0") != std::string::npos);
    CHECK(r.output.find("\"rouge_l\": 1.0") != std::string::npos);
    CHECK(r.output.find("bleu1,bleu2,bleu3,bleu4,meteor,rouge_l,cider") != std::string::npos);

    // Empty predictions file.
    testsupport::write_file(dir + "/empty.tsv", "");
    const auto r2 =
        run_cli("evaluate --predictions " + dir + "/empty.tsv --references " + dir + "/refs.tsv",
                dir);
    CHECK(r2.exit_code == 5);

    // Misaligned ids.
    testsupport::write_file(dir + "/other.tsv", "imgX\tsomething else\n");
    const auto r3 =
        run_cli("evaluate --predictions " + dir + "/other.tsv --references " + dir + "/refs.tsv",
                dir);
    CHECK(r3.exit_code == 5);

    // Unreadable file is io.
    const auto r4 = run_cli(
        "evaluate --predictions " + dir + "/nope.tsv --references " + dir + "/refs.tsv", dir);
    CHECK(r4.exit_code == 2);
}

TEST_CASE("evaluate accepts dataset jsonl as references") {
    const auto dir = testsupport::make_temp_dir("cli_eval_jsonl");
    const auto fixture = testsupport::write_fixture_dataset(dir + "/data", 16);
    std::string preds;
    for (const auto& rec : fixture.records) preds += rec.image_ref + "\t" + rec.question + "\n";
    testsupport::write_file(dir + "/preds.tsv", preds);

    const auto r = run_cli("evaluate --predictions " + dir + "/preds.tsv --references " +
                               fixture.dataset_path,
                           dir);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("\"bleu1\": 100.0") != std::string::npos);
}
