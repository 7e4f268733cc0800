#include "krsvqg/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "krsvqg/errors.hpp"
#include "krsvqg/rng.hpp"
#include "krsvqg/tokenizer.hpp"

namespace krsvqg {

namespace {

const std::map<std::string, std::string>& sentence_templates() {
    // {head} <template> {tail}
    static const std::map<std::string, std::string> templates = {
        {"UsedFor", "is used for"},
        {"AtLocation", "is at location"},
        {"HasProperty", "has the property of being"},
        {"CapableOf", "is capable of"},
        {"PartOf", "is part of"},
    };
    return templates;
}

// Accepts "AtLocation", "at location", "at_location", "atlocation".
std::optional<std::string> canonical_relation(const std::string& raw) {
    std::string squashed;
    for (unsigned char c : raw)
        if (!std::isspace(c) && c != '_') squashed.push_back(static_cast<char>(std::tolower(c)));
    for (const auto& [canonical, _] : sentence_templates()) {
        std::string key;
        for (unsigned char c : canonical) key.push_back(static_cast<char>(std::tolower(c)));
        if (key == squashed) return canonical;
    }
    return std::nullopt;
}

std::string capitalize(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// True when `needle`'s token sequence occurs contiguously in `haystack`.
bool tokens_contain(const std::vector<std::string>& haystack,
                    const std::vector<std::string>& needle) {
    if (needle.empty() || needle.size() > haystack.size()) return false;
    for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
        bool ok = true;
        for (std::size_t j = 0; j < needle.size(); ++j)
            if (haystack[i + j] != needle[j]) {
                ok = false;
                break;
            }
        if (ok) return true;
    }
    return false;
}

}  // namespace

const std::set<std::string>& supported_relations() {
    static const std::set<std::string> rels = [] {
        std::set<std::string> s;
        for (const auto& [k, _] : sentence_templates()) s.insert(k);
        return s;
    }();
    return rels;
}

std::string normalize_concept(const std::string& s) {
    std::string out;
    bool in_space = true;  // also trims leading whitespace
    for (unsigned char c : s) {
        if (std::isspace(c) || c == '_') {
            if (!in_space) out.push_back(' ');
            in_space = true;
        } else {
            out.push_back(static_cast<char>(std::tolower(c)));
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

std::vector<KnowledgeTriplet> load_triplets(const std::string& path,
                                            const std::set<std::string>& relation_filter,
                                            std::vector<std::string>* warnings) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read triplet file: " + path);

    std::set<KnowledgeTriplet> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        const auto tab1 = line.find('\t');
        const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
        std::string raw_relation, head, tail;
        if (tab2 != std::string::npos && line.find('\t', tab2 + 1) == std::string::npos) {
            raw_relation = line.substr(0, tab1);
            head = normalize_concept(line.substr(tab1 + 1, tab2 - tab1 - 1));
            tail = normalize_concept(line.substr(tab2 + 1));
        }
        if (raw_relation.empty() || head.empty() || tail.empty()) {
            if (warnings)
                warnings->push_back("line " + std::to_string(line_no) + ": malformed triplet, skipped");
            continue;
        }
        // Valid lines whose relation is outside the supported set are
        // filtered without a warning; dumps carry many other relations.
        const auto relation = canonical_relation(raw_relation);
        if (!relation) continue;
        if (!relation_filter.empty() && relation_filter.count(*relation) == 0) continue;
        seen.insert(KnowledgeTriplet{head, *relation, tail});
    }
    if (seen.empty()) throw std::runtime_error("no triplets after filtering: " + path);
    return {seen.begin(), seen.end()};  // set order = deterministic lexicographic order
}

std::vector<TripletMatch> match_triplets(const std::string& caption,
                                         const std::vector<KnowledgeTriplet>& triplets) {
    if (caption.empty()) throw std::invalid_argument("caption must be non-empty");
    const auto caption_tokens = normalize_tokens(caption);

    std::vector<TripletMatch> matches;
    for (const auto& t : triplets) {
        std::string best_concept;
        int best_tokens = 0;
        for (const std::string* candidate : {&t.head, &t.tail}) {
            const auto candidate_tokens = normalize_tokens(*candidate);
            if (tokens_contain(caption_tokens, candidate_tokens) &&
                static_cast<int>(candidate_tokens.size()) > best_tokens) {
                best_tokens = static_cast<int>(candidate_tokens.size());
                best_concept = *candidate;
            }
        }
        if (best_tokens > 0) matches.push_back(TripletMatch{t, best_concept, best_tokens});
    }
    std::stable_sort(matches.begin(), matches.end(), [](const TripletMatch& a,
                                                        const TripletMatch& b) {
        if (a.match_tokens != b.match_tokens) return a.match_tokens > b.match_tokens;
        return a.triplet < b.triplet;
    });
    return matches;
}

std::string triplet_to_sentence(const KnowledgeTriplet& t) {
    const auto& templates = sentence_templates();
    const auto it = templates.find(t.relation);
    if (it == templates.end())
        throw std::invalid_argument("unsupported relation: " + t.relation);
    return capitalize(t.head + " " + it->second + " " + t.tail + ".");
}

std::string sample_answer(const KnowledgeTriplet& t, std::uint64_t seed) {
    std::uint64_t h = fnv1a64(t.head);
    h = fnv1a64("\x1f" + t.relation + "\x1f" + t.tail, h);
    Rng rng(h ^ (seed * 0x9e3779b97f4a7c15ULL));
    return rng.bernoulli(0.5) ? t.head : t.tail;
}

std::string question_from_template(const std::string& knowledge_sentence,
                                   const std::string& answer) {
    std::string body = lower(knowledge_sentence);
    if (!body.empty() && body.back() == '.') body.pop_back();
    const auto pos = body.find(lower(answer));
    if (pos == std::string::npos) throw std::invalid_argument("answer not in knowledge sentence");
    body.replace(pos, answer.size(), "what");
    return capitalize(body + "?");
}

bool record_satisfies_invariants(const SampleRecord& r) {
    if (r.answer != r.triplet.head && r.answer != r.triplet.tail) return false;
    const std::string s = lower(r.knowledge_sentence);
    if (s.find(r.triplet.head) == std::string::npos ||
        s.find(r.triplet.tail) == std::string::npos)
        return false;
    const auto caption_tokens = normalize_tokens(r.caption);
    return tokens_contain(caption_tokens, normalize_tokens(r.triplet.head)) ||
           tokens_contain(caption_tokens, normalize_tokens(r.triplet.tail));
}

std::vector<CaptionEntry> load_captions(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read captions file: " + path);
    std::vector<CaptionEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw IoError("captions file line missing tab separator: " + path);
        entries.push_back(CaptionEntry{line.substr(0, tab), line.substr(tab + 1)});
    }
    return entries;
}

std::vector<SampleRecord> build_records(const std::vector<CaptionEntry>& captions,
                                        const std::vector<KnowledgeTriplet>& triplets,
                                        std::uint64_t seed,
                                        const std::map<std::string, std::string>* external_questions,
                                        BuildSummary* summary) {
    std::vector<SampleRecord> records;
    int skipped = 0;
    std::map<std::string, int> histogram;
    for (const auto& entry : captions) {
        const auto matches = match_triplets(entry.caption, triplets);
        if (matches.empty()) {
            ++skipped;
            continue;
        }
        const KnowledgeTriplet& t = matches.front().triplet;
        SampleRecord r;
        r.image_ref = entry.image_ref;
        r.caption = entry.caption;
        r.triplet = t;
        r.knowledge_sentence = triplet_to_sentence(t);
        r.answer = sample_answer(t, seed);
        if (external_questions && external_questions->count(entry.image_ref))
            r.question = external_questions->at(entry.image_ref);
        else
            r.question = question_from_template(r.knowledge_sentence, r.answer);
        ++histogram[t.relation];
        records.push_back(std::move(r));
    }
    if (summary) {
        summary->captions = static_cast<int>(captions.size());
        summary->records = static_cast<int>(records.size());
        summary->skipped = skipped;
        summary->relation_histogram = histogram;
    }
    return records;
}

std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> split_dataset(
    const std::vector<SampleRecord>& records, std::uint64_t seed) {
    if (records.size() < 5)
        throw std::invalid_argument("need at least 5 records for a 4:1 split");
    std::vector<SampleRecord> shuffled = records;
    Rng rng(seed);
    rng.shuffle(shuffled);
    const std::size_t val_size = shuffled.size() / 5;
    std::vector<SampleRecord> train(shuffled.begin(),
                                    shuffled.end() - static_cast<std::ptrdiff_t>(val_size));
    std::vector<SampleRecord> val(shuffled.end() - static_cast<std::ptrdiff_t>(val_size),
                                  shuffled.end());
    return {std::move(train), std::move(val)};
}

void write_records_jsonl(const std::vector<SampleRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write dataset file: " + path);
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["image"] = r.image_ref;
        j["caption"] = r.caption;
        j["knowledge_sentence"] = r.knowledge_sentence;
        j["question"] = r.question;
        j["answer"] = r.answer;
        j["triplet"] = {{"head", r.triplet.head},
                        {"relation", r.triplet.relation},
                        {"tail", r.triplet.tail}};
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("failed writing dataset file: " + path);
}

std::vector<SampleRecord> read_records_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read dataset file: " + path);
    std::vector<SampleRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw IoError("malformed dataset line " + std::to_string(line_no) + " in " + path +
                          ": " + e.what());
        }
        SampleRecord r;
        r.image_ref = j.value("image", "");
        r.caption = j.value("caption", "");
        r.knowledge_sentence = j.value("knowledge_sentence", "");
        r.question = j.value("question", "");
        r.answer = j.value("answer", "");
        if (j.contains("triplet")) {
            const auto& t = j["triplet"];
            r.triplet = {t.value("head", ""), t.value("relation", ""), t.value("tail", "")};
        }
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace krsvqg
