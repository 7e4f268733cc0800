#include "support/fixtures.hpp"

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace testsupport {

std::string make_temp_dir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto dir = fs::temp_directory_path() /
                     ("krsvqg_" + tag + "_" + std::to_string(::getpid()) + "_" +
                      std::to_string(counter++));
    fs::create_directories(dir);
    return dir.string();
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

krsvqg::Image synthetic_image(int size, int index) {
    krsvqg::Image img;
    img.height = img.width = size;
    img.channels = 3;
    img.values.resize(static_cast<std::size_t>(size) * size * 3);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = 0.5f + 0.5f * std::sin(0.31f * (x + 1) * (index + 1) +
                                                         0.47f * (y + 1) + 1.3f * c);
    return img;
}

std::vector<krsvqg::KnowledgeTriplet> fixture_triplets() {
    return {
        {"basketball court", "UsedFor", "playing games"},
        {"bridge", "UsedFor", "crossing the river"},
        {"mobile houses", "AtLocation", "street"},
        {"airport", "UsedFor", "air travel"},
        {"river", "HasProperty", "dangerous to traverse"},
        {"forest", "PartOf", "natural landscape"},
        {"boat", "CapableOf", "floating on water"},
        {"playground", "UsedFor", "children playing"},
        // decoy with a shorter match than "basketball court"
        {"court", "AtLocation", "city"},
    };
}

std::vector<std::string> fixture_caption_lines() {
    return {
        "img0.imgf32\ta basketball court surrounded by green trees",
        "img1.imgf32\ttwo bridges cross the wide river",
        "img2.imgf32\tmany mobile houses parked along the street",
        "img3.imgf32\tan airport with several planes on the runway",
        "img4.imgf32\ta large river flows through the city",
        "img5.imgf32\tdense forest covers the mountain area",
        "img6.imgf32\ta harbor with one boat near the sea",
        "img7.imgf32\ta school building next to a playground",
    };
}

Fixture write_fixture_dataset(const std::string& dir, int image_size) {
    fs::create_directories(dir);
    Fixture fixture;
    fixture.dir = dir;

    // Triplet indices aligned with fixture_caption_lines image order.
    const auto triplets = fixture_triplets();
    const int chosen[8] = {0, 1, 2, 3, 4, 5, 6, 7};
    const auto captions = fixture_caption_lines();

    for (int i = 0; i < 8; ++i) {
        const auto& line = captions[static_cast<std::size_t>(i)];
        const auto tab = line.find('\t');
        krsvqg::SampleRecord r;
        r.image_ref = line.substr(0, tab);
        r.caption = line.substr(tab + 1);
        r.triplet = triplets[static_cast<std::size_t>(chosen[i])];
        r.knowledge_sentence = krsvqg::triplet_to_sentence(r.triplet);
        r.answer = krsvqg::sample_answer(r.triplet, 7);
        r.question = krsvqg::question_from_template(r.knowledge_sentence, r.answer);
        fixture.records.push_back(std::move(r));

        krsvqg::save_imgf32(synthetic_image(image_size, i),
                            dir + "/img" + std::to_string(i) + ".imgf32");
    }
    fixture.dataset_path = dir + "/fixture.jsonl";
    krsvqg::write_records_jsonl(fixture.records, fixture.dataset_path);
    return fixture;
}

krsvqg::Vocabulary fixture_vocab(const Fixture& fixture) {
    std::vector<std::string> corpus;
    for (const auto& r : fixture.records) {
        corpus.push_back(r.caption);
        corpus.push_back(r.knowledge_sentence);
        corpus.push_back(r.question);
    }
    return krsvqg::Vocabulary::build(corpus, 1);
}

std::vector<std::string> caption_corpus_20() {
    return {
        "a basketball court surrounded by green trees",
        "two bridges cross the wide river",
        "many mobile houses parked along the street",
        "an airport with several planes on the runway",
        "a large river flows through the city",
        "dense forest covers the mountain area",
        "a harbor with one boat near the sea",
        "a school building next to a playground",
        "the river winds between two small hills",
        "a basketball court next to the school",
        "cars parked near the airport terminal",
        "a narrow bridge over the dry river bed",
        "green trees line both sides of the street",
        "boats docked in neat rows at the harbor",
        "the playground is empty in the morning",
        "a forest trail leads to the mountain top",
        "white planes wait on the gray runway",
        "the wide street runs through mobile houses",
        "children playing games on the court",
        "a city park with a small basketball court",
    };
}

}  // namespace testsupport
