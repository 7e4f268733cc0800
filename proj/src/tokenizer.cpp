#include "krsvqg/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>

#include "krsvqg/errors.hpp"

namespace krsvqg {

namespace {

const char* kSpecialNames[] = {"<pad>", "<bos>", "<eos>", "<unk>"};

bool is_punct(unsigned char c) {
    return std::ispunct(c) != 0;
}

}  // namespace

std::vector<std::string> normalize_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            tokens.push_back(current);
            current.clear();
        }
    };
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            flush();
        } else if (is_punct(c)) {
            flush();
            tokens.emplace_back(1, static_cast<char>(c));
        } else {
            current.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return tokens;
}

void Vocabulary::push(const std::string& token) {
    token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, int min_freq) {
    if (corpus.empty()) throw std::invalid_argument("empty corpus");
    if (min_freq < 1) throw std::invalid_argument("min_freq must be positive");

    std::map<std::string, long> freq;  // ordered map gives the lexicographic tie-break
    for (const auto& line : corpus)
        for (const auto& tok : normalize_tokens(line)) ++freq[tok];

    std::vector<std::pair<std::string, long>> kept;
    for (const auto& [tok, n] : freq)
        if (n >= min_freq) kept.emplace_back(tok, n);
    std::stable_sort(kept.begin(), kept.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    Vocabulary v;
    for (const char* s : kSpecialNames) v.push(s);
    for (const auto& [tok, n] : kept) v.push(tok);
    return v;
}

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("id out of range");
    return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
    return token_to_id_.count(token) != 0;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write vocabulary file: " + path);
    for (const auto& tok : id_to_token_) out << tok << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read vocabulary file: " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (v.token_to_id_.count(line))
            throw IoError("duplicate token in vocabulary file: " + path);
        v.push(line);
    }
    for (int i = 0; i < 4; ++i) {
        if (v.size() <= i || v.id_to_token_[i] != kSpecialNames[i])
            throw IoError("vocabulary file missing special tokens: " + path);
    }
    return v;
}

TokenSequence encode(const std::string& text, const Vocabulary& vocab, int max_len) {
    if (max_len < 3) throw std::invalid_argument("max_len must be at least 3 (BOS+token+EOS)");

    const auto words = normalize_tokens(text);
    TokenSequence seq;
    seq.ids.reserve(static_cast<std::size_t>(max_len));
    seq.ids.push_back(kBosId);
    const std::size_t body_limit = static_cast<std::size_t>(max_len) - 2;
    for (std::size_t i = 0; i < words.size() && i < body_limit; ++i)
        seq.ids.push_back(vocab.id(words[i]));
    seq.ids.push_back(kEosId);
    seq.length = static_cast<int>(seq.ids.size());
    seq.ids.resize(static_cast<std::size_t>(max_len), kPadId);
    return seq;
}

std::string decode(const TokenSequence& seq, const Vocabulary& vocab) {
    std::string out;
    for (int id : seq.ids) {
        if (id < 0 || id >= vocab.size()) throw std::out_of_range("id out of range");
        if (id == kEosId) break;
        if (id == kBosId || id == kPadId) continue;
        if (!out.empty()) out.push_back(' ');
        out += vocab.token(id);
    }
    return out;
}

}  // namespace krsvqg
