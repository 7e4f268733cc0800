#pragma once

#include <string>
#include <vector>

#include "krsvqg/dataset.hpp"
#include "krsvqg/image.hpp"
#include "krsvqg/model.hpp"
#include "krsvqg/tokenizer.hpp"

namespace testsupport {

// Fresh directory under the system temp dir.
std::string make_temp_dir(const std::string& tag);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& text);

// Deterministic smooth pattern, distinct per index.
krsvqg::Image synthetic_image(int size, int index);

// The triplets behind the synthetic training fixture plus a few extras
// (including a shorter-match decoy for ranking tests).
std::vector<krsvqg::KnowledgeTriplet> fixture_triplets();

// "image_ref<TAB>caption" lines matching fixture_triplets content.
std::vector<std::string> fixture_caption_lines();

struct Fixture {
    std::string dir;
    std::string dataset_path;
    std::vector<krsvqg::SampleRecord> records;
};

// Writes eight raw-array images plus a dataset .jsonl whose records are
// produced by the real builder templates (so all invariants hold).
Fixture write_fixture_dataset(const std::string& dir, int image_size);

// Vocabulary over every text field in the fixture.
krsvqg::Vocabulary fixture_vocab(const Fixture& fixture);

// A 20-line caption corpus file for vocabulary tests.
std::vector<std::string> caption_corpus_20();

}  // namespace testsupport
