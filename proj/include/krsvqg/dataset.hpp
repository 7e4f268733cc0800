#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace krsvqg {

// A <head, relation, tail> commonsense fact.
struct KnowledgeTriplet {
    std::string head;
    std::string relation;
    std::string tail;

    auto operator<=>(const KnowledgeTriplet&) const = default;
};

// One dataset row: the image, its caption, the templated knowledge
// sentence, the question, the sampled answer, and the source triplet.
struct SampleRecord {
    std::string image_ref;
    std::string caption;
    std::string knowledge_sentence;
    std::string question;
    std::string answer;
    KnowledgeTriplet triplet;

    bool operator==(const SampleRecord&) const = default;
};

// Relations with a sentence template. Canonical spellings; the loader also
// accepts lowercase/spaced forms ("at location").
const std::set<std::string>& supported_relations();

// Lowercases, maps underscores to spaces, collapses runs of whitespace.
std::string normalize_concept(const std::string& s);

// Parses "relation<TAB>head<TAB>tail" lines: normalized, filtered to the
// given relations, deduplicated, and sorted for deterministic downstream
// ranking. Malformed lines are skipped with a warning naming the line.
std::vector<KnowledgeTriplet> load_triplets(const std::string& path,
                                            const std::set<std::string>& relation_filter,
                                            std::vector<std::string>* warnings = nullptr);

struct TripletMatch {
    KnowledgeTriplet triplet;
    std::string matched_concept;  // the head or tail that hit the caption
    int match_tokens = 0;
};

// Candidates whose head or tail occurs as a word-boundary n-gram of the
// caption, ranked longest match first, ties in triplet order.
std::vector<TripletMatch> match_triplets(const std::string& caption,
                                         const std::vector<KnowledgeTriplet>& triplets);

// Deterministic per-relation template, capitalized with a terminal period.
std::string triplet_to_sentence(const KnowledgeTriplet& t);

// Uniformly picks head or tail; pure function of (triplet, seed).
std::string sample_answer(const KnowledgeTriplet& t, std::uint64_t seed);

// The synthetic-question template used when no human question is supplied:
// the answer span in the knowledge sentence becomes a wh-gap.
std::string question_from_template(const std::string& knowledge_sentence,
                                   const std::string& answer);

bool record_satisfies_invariants(const SampleRecord& r);

struct CaptionEntry {
    std::string image_ref;
    std::string caption;
};

// "image_ref<TAB>caption" lines.
std::vector<CaptionEntry> load_captions(const std::string& path);

struct BuildSummary {
    int captions = 0;
    int records = 0;
    int skipped = 0;  // captions with no matching triplet
    int train = 0;
    int val = 0;
    std::map<std::string, int> relation_histogram;
};

// Runs the full selection pipeline over a caption corpus. Questions come
// from external annotations when provided, otherwise from the template.
std::vector<SampleRecord> build_records(
    const std::vector<CaptionEntry>& captions, const std::vector<KnowledgeTriplet>& triplets,
    std::uint64_t seed, const std::map<std::string, std::string>* external_questions = nullptr,
    BuildSummary* summary = nullptr);

// Seeded shuffle then 4:1 partition (val = floor(N/5)).
std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> split_dataset(
    const std::vector<SampleRecord>& records, std::uint64_t seed);

void write_records_jsonl(const std::vector<SampleRecord>& records, const std::string& path);
std::vector<SampleRecord> read_records_jsonl(const std::string& path);

}  // namespace krsvqg
