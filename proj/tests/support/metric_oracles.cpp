#include "support/metric_oracles.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>

namespace oracles {

namespace {

using Tokens = std::vector<std::string>;
using Gram = std::vector<std::string>;

std::map<Gram, long> grams_of(const Tokens& tokens, int n) {
    std::map<Gram, long> out;
    for (long i = 0; i + n <= static_cast<long>(tokens.size()); ++i) {
        Gram g(tokens.begin() + i, tokens.begin() + i + n);
        out[g] += 1;
    }
    return out;
}

}  // namespace

double bleu(const std::vector<krsvqg::EvalPair>& pairs, int n) {
    long c_total = 0, r_total = 0;
    std::vector<long> match(static_cast<std::size_t>(n), 0), possible(static_cast<std::size_t>(n), 0);
    for (const auto& p : pairs) {
        const long c = static_cast<long>(p.candidate.size());
        c_total += c;
        long best_r = -1;
        for (const auto& ref : p.references) {
            const long r = static_cast<long>(ref.size());
            if (best_r < 0 || std::labs(r - c) < std::labs(best_r - c) ||
                (std::labs(r - c) == std::labs(best_r - c) && r < best_r))
                best_r = r;
        }
        r_total += best_r;
        for (int k = 1; k <= n; ++k) {
            const auto cand = grams_of(p.candidate, k);
            std::map<Gram, long> refmax;
            for (const auto& ref : p.references)
                for (const auto& [g, cnt] : grams_of(ref, k))
                    refmax[g] = std::max(refmax[g], cnt);
            for (const auto& [g, cnt] : cand) {
                possible[static_cast<std::size_t>(k - 1)] += cnt;
                if (refmax.count(g))
                    match[static_cast<std::size_t>(k - 1)] += std::min(cnt, refmax[g]);
            }
        }
    }
    double product = 1.0;
    for (int k = 0; k < n; ++k) {
        if (possible[static_cast<std::size_t>(k)] == 0) return 0.0;
        const double p_k = static_cast<double>(match[static_cast<std::size_t>(k)]) /
                           static_cast<double>(possible[static_cast<std::size_t>(k)]);
        if (p_k == 0.0) return 0.0;
        product *= std::pow(p_k, 1.0 / n);
    }
    const double bp =
        c_total >= r_total ? 1.0
                           : std::exp(1.0 - static_cast<double>(r_total) / static_cast<double>(c_total));
    return 100.0 * bp * product;
}

double rouge_l(const std::vector<krsvqg::EvalPair>& pairs) {
    const double beta = 1.2;
    double total = 0.0;
    for (const auto& p : pairs) {
        double best = 0.0;
        for (const auto& ref : p.references) {
            // Full DP table LCS.
            const std::size_t n = p.candidate.size(), m = ref.size();
            std::vector<std::vector<long>> dp(n + 1, std::vector<long>(m + 1, 0));
            for (std::size_t i = 1; i <= n; ++i)
                for (std::size_t j = 1; j <= m; ++j)
                    dp[i][j] = p.candidate[i - 1] == ref[j - 1]
                                   ? dp[i - 1][j - 1] + 1
                                   : std::max(dp[i - 1][j], dp[i][j - 1]);
            const double l = static_cast<double>(dp[n][m]);
            if (l == 0 || n == 0 || m == 0) continue;
            const double r = l / static_cast<double>(m);
            const double pr = l / static_cast<double>(n);
            best = std::max(best, (1 + beta * beta) * r * pr / (r + beta * beta * pr));
        }
        total += best;
    }
    return total / static_cast<double>(pairs.size());
}

double meteor(const std::vector<krsvqg::EvalPair>& pairs) {
    double total = 0.0;
    for (const auto& p : pairs) {
        double best = 0.0;
        for (const auto& ref : p.references) {
            // Leftmost-greedy one-to-one exact alignment.
            std::vector<bool> taken(ref.size(), false);
            std::vector<long> where(p.candidate.size(), -1);
            long m = 0;
            for (std::size_t i = 0; i < p.candidate.size(); ++i)
                for (std::size_t j = 0; j < ref.size(); ++j)
                    if (!taken[j] && p.candidate[i] == ref[j]) {
                        taken[j] = true;
                        where[i] = static_cast<long>(j);
                        ++m;
                        break;
                    }
            if (m == 0) continue;
            long chunks = 0;
            long pi = -5, pj = -5;
            for (std::size_t i = 0; i < p.candidate.size(); ++i) {
                if (where[i] < 0) continue;
                if (!(static_cast<long>(i) == pi + 1 && where[i] == pj + 1)) ++chunks;
                pi = static_cast<long>(i);
                pj = where[i];
            }
            const double prec = static_cast<double>(m) / static_cast<double>(p.candidate.size());
            const double rec = static_cast<double>(m) / static_cast<double>(ref.size());
            const double fmean = prec * rec / (0.9 * prec + 0.1 * rec);
            const double penalty =
                0.5 * std::pow(static_cast<double>(chunks) / static_cast<double>(m), 3.0);
            best = std::max(best, fmean * (1.0 - penalty));
        }
        total += best;
    }
    return total / static_cast<double>(pairs.size());
}

double cider(const std::vector<krsvqg::EvalPair>& pairs) {
    const double big_i = static_cast<double>(pairs.size());
    double score = 0.0;
    for (int n = 1; n <= 4; ++n) {
        std::map<Gram, double> df;
        for (const auto& p : pairs) {
            std::set<Gram> seen;
            for (const auto& ref : p.references)
                for (const auto& [g, cnt] : grams_of(ref, n)) seen.insert(g);
            for (const auto& g : seen) df[g] += 1.0;
        }

        double level = 0.0;
        for (const auto& p : pairs) {
            const auto cand = grams_of(p.candidate, n);
            double per_ref = 0.0;
            for (const auto& ref : p.references) {
                const auto rg = grams_of(ref, n);
                // Union of grams for the dot product and norms.
                std::set<Gram> all;
                for (const auto& [g, cnt] : cand) all.insert(g);
                for (const auto& [g, cnt] : rg) all.insert(g);
                double dot = 0, na = 0, nb = 0;
                for (const auto& g : all) {
                    const double w =
                        std::log(big_i / std::max(1.0, df.count(g) ? df.at(g) : 0.0));
                    const double cc = cand.count(g) ? static_cast<double>(cand.at(g)) : 0.0;
                    const double rc = rg.count(g) ? static_cast<double>(rg.at(g)) : 0.0;
                    const double clipped = std::min(cc, rc) * w;
                    const double rw = rc * w;
                    dot += clipped * rw;
                    na += clipped * clipped;
                    nb += rw * rw;
                }
                if (na > 0 && nb > 0) per_ref += dot / (std::sqrt(na) * std::sqrt(nb));
            }
            level += per_ref / static_cast<double>(p.references.size());
        }
        score += level / big_i;
    }
    return 10.0 * score / 4.0;
}

}  // namespace oracles
