#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace krsvqg {

// Special token ids are fixed so padding masks and checkpoints stay
// portable across vocabularies.
constexpr int kPadId = 0;
constexpr int kBosId = 1;
constexpr int kEosId = 2;
constexpr int kUnkId = 3;

// Lowercases and splits into word/punctuation tokens. This is the single
// normalization used by the vocabulary, the model inputs, and the metrics.
std::vector<std::string> normalize_tokens(const std::string& text);

class Vocabulary {
public:
    Vocabulary() = default;

    // Builds from corpus lines: specials first, then tokens with
    // frequency >= min_freq ordered by frequency desc, ties lexicographic.
    static Vocabulary build(const std::vector<std::string>& corpus, int min_freq = 1);

    int size() const { return static_cast<int>(id_to_token_.size()); }
    int id(const std::string& token) const;          // kUnkId when absent
    const std::string& token(int id) const;          // throws on out-of-range
    bool contains(const std::string& token) const;

    // One token per line, line number == id.
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;

    void push(const std::string& token);
};

struct TokenSequence {
    std::vector<int> ids;  // PAD-suffixed to a fixed length
    int length = 0;        // count of non-PAD ids

    bool operator==(const TokenSequence&) const = default;
};

// BOS + body + EOS, truncated to max_len with EOS retained, PAD-suffixed.
TokenSequence encode(const std::string& text, const Vocabulary& vocab, int max_len);

// Inverse of encode: joins tokens with spaces, skips BOS/PAD, stops at the
// first EOS.
std::string decode(const TokenSequence& seq, const Vocabulary& vocab);

}  // namespace krsvqg
