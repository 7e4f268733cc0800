#include "krsvqg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>

#include "krsvqg/errors.hpp"

namespace krsvqg {

namespace {

using Tokens = std::vector<std::string>;
using NgramCounts = std::map<std::string, long>;

// n-grams keyed by joining tokens with an unlikely separator byte.
NgramCounts ngram_counts(const Tokens& tokens, int n) {
    NgramCounts counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (int j = 1; j < n; ++j) {
            key.push_back('\x1f');
            key += tokens[i + static_cast<std::size_t>(j)];
        }
        ++counts[key];
    }
    return counts;
}

void require_pairs(const std::vector<EvalPair>& pairs) {
    if (pairs.empty()) throw EvalError("empty candidate corpus");
    for (const auto& p : pairs)
        if (p.references.empty()) throw EvalError("every pair needs at least one reference");
}

long lcs_length(const Tokens& a, const Tokens& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<long> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            if (a[i - 1] == b[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

}  // namespace

long bleu_clipped_matches(const EvalPair& pair, int n) {
    NgramCounts max_ref_counts;
    for (const auto& ref : pair.references)
        for (const auto& [gram, count] : ngram_counts(ref, n))
            max_ref_counts[gram] = std::max(max_ref_counts[gram], count);
    long clipped = 0;
    for (const auto& [gram, count] : ngram_counts(pair.candidate, n)) {
        const auto it = max_ref_counts.find(gram);
        if (it != max_ref_counts.end()) clipped += std::min(count, it->second);
    }
    return clipped;
}

double bleu(const std::vector<EvalPair>& pairs, int n) {
    require_pairs(pairs);
    if (n < 1 || n > 4) throw std::invalid_argument("BLEU order must be 1..4");

    std::vector<long> clipped(static_cast<std::size_t>(n), 0);
    std::vector<long> total(static_cast<std::size_t>(n), 0);
    long candidate_len = 0;
    long reference_len = 0;

    for (const auto& pair : pairs) {
        const long c = static_cast<long>(pair.candidate.size());
        candidate_len += c;
        // Closest reference length; ties go to the shorter reference.
        long best = static_cast<long>(pair.references.front().size());
        for (const auto& ref : pair.references) {
            const long r = static_cast<long>(ref.size());
            if (std::abs(r - c) < std::abs(best - c) || (std::abs(r - c) == std::abs(best - c) && r < best))
                best = r;
        }
        reference_len += best;

        for (int k = 1; k <= n; ++k) {
            total[static_cast<std::size_t>(k - 1)] += std::max<long>(0, c - k + 1);
            clipped[static_cast<std::size_t>(k - 1)] += bleu_clipped_matches(pair, k);
        }
    }

    double log_precision_sum = 0;
    for (int k = 0; k < n; ++k) {
        if (total[static_cast<std::size_t>(k)] == 0 || clipped[static_cast<std::size_t>(k)] == 0)
            return 0.0;
        log_precision_sum += std::log(static_cast<double>(clipped[static_cast<std::size_t>(k)]) /
                                      static_cast<double>(total[static_cast<std::size_t>(k)]));
    }
    const double geo_mean = std::exp(log_precision_sum / n);
    double bp = 1.0;
    if (candidate_len == 0) return 0.0;
    if (candidate_len < reference_len)
        bp = std::exp(1.0 - static_cast<double>(reference_len) / static_cast<double>(candidate_len));
    return 100.0 * bp * geo_mean;
}

double rouge_l(const std::vector<EvalPair>& pairs) {
    require_pairs(pairs);
    constexpr double beta = 1.2;
    double sum = 0;
    for (const auto& pair : pairs) {
        double best = 0;
        if (!pair.candidate.empty()) {
            for (const auto& ref : pair.references) {
                if (ref.empty()) continue;
                const long l = lcs_length(pair.candidate, ref);
                if (l == 0) continue;
                const double recall = static_cast<double>(l) / static_cast<double>(ref.size());
                const double precision =
                    static_cast<double>(l) / static_cast<double>(pair.candidate.size());
                const double f = (1.0 + beta * beta) * recall * precision /
                                 (recall + beta * beta * precision);
                best = std::max(best, f);
            }
        }
        sum += best;
    }
    return sum / static_cast<double>(pairs.size());
}

namespace {

// Leftmost-greedy exact alignment; returns (matches, chunks).
std::pair<long, long> align_exact(const Tokens& cand, const Tokens& ref) {
    std::vector<bool> used(ref.size(), false);
    std::vector<std::ptrdiff_t> match_of(cand.size(), -1);
    long matches = 0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
        for (std::size_t j = 0; j < ref.size(); ++j) {
            if (!used[j] && ref[j] == cand[i]) {
                used[j] = true;
                match_of[i] = static_cast<std::ptrdiff_t>(j);
                ++matches;
                break;
            }
        }
    }
    long chunks = 0;
    std::ptrdiff_t prev_i = -2, prev_j = -2;
    for (std::size_t i = 0; i < cand.size(); ++i) {
        if (match_of[i] < 0) continue;
        const bool contiguous = static_cast<std::ptrdiff_t>(i) == prev_i + 1 &&
                                match_of[i] == prev_j + 1;
        if (!contiguous) ++chunks;
        prev_i = static_cast<std::ptrdiff_t>(i);
        prev_j = match_of[i];
    }
    return {matches, chunks};
}

}  // namespace

double meteor(const std::vector<EvalPair>& pairs) {
    require_pairs(pairs);
    constexpr double alpha = 0.9;
    constexpr double beta = 3.0;
    constexpr double gamma = 0.5;
    double sum = 0;
    for (const auto& pair : pairs) {
        double best = 0;
        for (const auto& ref : pair.references) {
            if (pair.candidate.empty() || ref.empty()) continue;
            const auto [m, chunks] = align_exact(pair.candidate, ref);
            if (m == 0) continue;
            const double precision =
                static_cast<double>(m) / static_cast<double>(pair.candidate.size());
            const double recall = static_cast<double>(m) / static_cast<double>(ref.size());
            const double f_mean =
                precision * recall / (alpha * precision + (1.0 - alpha) * recall);
            const double penalty =
                gamma * std::pow(static_cast<double>(chunks) / static_cast<double>(m), beta);
            best = std::max(best, f_mean * (1.0 - penalty));
        }
        sum += best;
    }
    return sum / static_cast<double>(pairs.size());
}

double cider(const std::vector<EvalPair>& pairs) {
    require_pairs(pairs);
    if (pairs.size() < 2) throw EvalError("corpus too small for IDF");
    constexpr int max_n = 4;
    const double corpus_size = static_cast<double>(pairs.size());

    double sum = 0;
    for (int n = 1; n <= max_n; ++n) {
        // Document frequency over the reference corpus: a pair counts once
        // per n-gram regardless of how many of its references contain it.
        NgramCounts df;
        for (const auto& pair : pairs) {
            std::set<std::string> grams;
            for (const auto& ref : pair.references)
                for (const auto& [gram, _] : ngram_counts(ref, n)) grams.insert(gram);
            for (const auto& gram : grams) ++df[gram];
        }
        auto idf = [&](const std::string& gram) {
            const auto it = df.find(gram);
            const double d = it == df.end() ? 1.0 : std::max(1.0, static_cast<double>(it->second));
            return std::log(corpus_size / d);
        };

        double level_sum = 0;
        for (const auto& pair : pairs) {
            const auto cand_counts = ngram_counts(pair.candidate, n);
            double pair_sum = 0;
            for (const auto& ref : pair.references) {
                const auto ref_counts = ngram_counts(ref, n);
                // Candidate counts clipped to the reference's counts.
                double dot = 0, cand_sq = 0, ref_sq = 0;
                for (const auto& [gram, count] : cand_counts) {
                    const auto it = ref_counts.find(gram);
                    const long ref_count = it == ref_counts.end() ? 0 : it->second;
                    const double w = idf(gram);
                    const double cand_w = static_cast<double>(std::min(count, ref_count)) * w;
                    cand_sq += cand_w * cand_w;
                    dot += cand_w * static_cast<double>(ref_count) * w;
                }
                for (const auto& [gram, count] : ref_counts) {
                    const double w = static_cast<double>(count) * idf(gram);
                    ref_sq += w * w;
                }
                if (cand_sq > 0 && ref_sq > 0)
                    pair_sum += dot / (std::sqrt(cand_sq) * std::sqrt(ref_sq));
            }
            level_sum += pair_sum / static_cast<double>(pair.references.size());
        }
        sum += level_sum / corpus_size;
    }
    return 10.0 * sum / max_n;
}

ScoreReport score_all(const std::vector<EvalPair>& pairs) {
    ScoreReport report;
    report.bleu1 = bleu(pairs, 1);
    report.bleu2 = bleu(pairs, 2);
    report.bleu3 = bleu(pairs, 3);
    report.bleu4 = bleu(pairs, 4);
    report.meteor = meteor(pairs);
    report.rouge_l = rouge_l(pairs);
    report.cider = cider(pairs);
    return report;
}

}  // namespace krsvqg
