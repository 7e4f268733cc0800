#pragma once

#include <string>
#include <vector>

namespace krsvqg {

// One candidate against its reference set; tokens come from
// normalize_tokens so model output and references share a normalization.
struct EvalPair {
    std::vector<std::string> candidate;
    std::vector<std::vector<std::string>> references;
};

struct ScoreReport {
    double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;  // 0..100
    double meteor = 0;                                  // 0..1
    double rouge_l = 0;                                 // 0..1
    double cider = 0;                                   // 0..10
};

// Corpus-level unsmoothed BLEU-n: clipped n-gram precisions aggregated
// over the corpus, geometric mean, times the brevity penalty, times 100.
double bleu(const std::vector<EvalPair>& pairs, int n);

// Clipped n-gram matches of one pair (candidate counts capped at the best
// count over its references). Monotone in the reference set.
long bleu_clipped_matches(const EvalPair& pair, int n);

// Best-reference LCS F-measure (beta = 1.2), averaged over pairs.
double rouge_l(const std::vector<EvalPair>& pairs);

// Exact-match unigram variant: leftmost-greedy alignment, harmonic mean
// with alpha = 0.9, chunk penalty gamma (chunks/m)^beta with gamma = 0.5,
// beta = 3. Best reference per pair, averaged over pairs.
double meteor(const std::vector<EvalPair>& pairs);

// TF-IDF n-gram cosine (n = 1..4) with reference-corpus IDF, candidate
// counts clipped per reference, averaged over n and scaled by 10.
double cider(const std::vector<EvalPair>& pairs);

ScoreReport score_all(const std::vector<EvalPair>& pairs);

}  // namespace krsvqg
