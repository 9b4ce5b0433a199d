// Test-only reference implementations, independent of the library code
// paths they check. Kept deliberately naive.
#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace oracles {

// Direct evaluation of the softmax mixture, no max-subtraction. long double
// keeps exp(dot/tau) finite for unit vectors down to tau = 1e-3.
inline std::vector<double> naive_projection(const std::vector<std::vector<double>>& anchors,
                                            const std::vector<double>& query, double tau) {
    std::size_t n = anchors.size();
    std::size_t d = query.size();
    std::vector<long double> weights(n);
    long double denom = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        long double s = 0.0L;
        for (std::size_t k = 0; k < d; ++k) s += (long double)anchors[i][k] * (long double)query[k];
        weights[i] = std::exp(s / (long double)tau);
        denom += weights[i];
    }
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            out[k] += double((weights[i] / denom) * (long double)anchors[i][k]);
        }
    }
    return out;
}

inline double weight_entropy(const std::vector<double>& w) {
    double h = 0.0;
    for (double v : w) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

// Uniform-resampling reference: evenly spaced bin centers mapped onto the
// source index axis, ties rounded down, clamped.
inline std::vector<std::size_t> resample_reference(std::size_t n, std::size_t target) {
    std::vector<std::size_t> idx(target);
    for (std::size_t i = 0; i < target; ++i) {
        double pos = (i + 0.5) * double(n) / double(target) - 0.5;
        long r = long(std::ceil(pos - 0.5));
        if (r < 0) r = 0;
        if (r > long(n) - 1) r = long(n) - 1;
        idx[i] = std::size_t(r);
    }
    return idx;
}

// Mean token-level cross-entropy computed straight from raw logits.
inline double naive_lm_loss(const std::vector<std::vector<double>>& logits,
                            const std::vector<int>& targets) {
    double total = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        double denom = 0.0;
        for (double v : logits[i]) denom += std::exp(v);
        total += -std::log(std::exp(logits[i][targets[i]]) / denom);
    }
    return total / double(targets.size());
}

// Consensus n-gram scorer reference, written straight from the published
// tf-idf formulation (separate data layout from the shipped scorer).
struct NgramCounts {
    std::map<std::vector<std::string>, int> counts[4];
};

inline std::vector<std::string> split_words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

inline NgramCounts collect_ngrams(const std::string& sentence) {
    NgramCounts out;
    std::vector<std::string> words = split_words(sentence);
    for (int n = 1; n <= 4; ++n) {
        for (std::size_t i = 0; i + n <= words.size(); ++i) {
            std::vector<std::string> gram(words.begin() + i, words.begin() + i + n);
            out.counts[n - 1][gram] += 1;
        }
    }
    return out;
}

inline double reference_consensus_score(const std::vector<std::string>& candidates,
                                        const std::vector<std::vector<std::string>>& references,
                                        double sigma = 6.0) {
    std::size_t m = candidates.size();
    // document frequency over reference sets
    std::map<std::vector<std::string>, double> df;
    std::vector<std::vector<NgramCounts>> ref_counts(m);
    std::vector<std::vector<double>> ref_lengths(m);
    for (std::size_t i = 0; i < m; ++i) {
        std::set<std::vector<std::string>> seen;
        for (const auto& ref : references[i]) {
            ref_counts[i].push_back(collect_ngrams(ref));
            ref_lengths[i].push_back(double(split_words(ref).size()));
            for (int n = 0; n < 4; ++n) {
                for (const auto& [gram, cnt] : ref_counts[i].back().counts[n]) seen.insert(gram);
            }
        }
        for (const auto& gram : seen) df[gram] += 1.0;
    }
    double log_m = m <= 1 ? 1.0 : std::log(double(m));

    auto tfidf = [&](const NgramCounts& counts, int n, std::map<std::vector<std::string>, double>& vec,
                     double& norm) {
        norm = 0.0;
        for (const auto& [gram, cnt] : counts.counts[n]) {
            double idf = log_m - std::log(std::max(1.0, df.count(gram) ? df.at(gram) : 0.0));
            vec[gram] = double(cnt) * idf;
            norm += vec[gram] * vec[gram];
        }
        norm = std::sqrt(norm);
    };

    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        NgramCounts cand = collect_ngrams(candidates[i]);
        double cand_length = double(split_words(candidates[i]).size());
        double item = 0.0;
        for (std::size_t r = 0; r < ref_counts[i].size(); ++r) {
            const NgramCounts& refc = ref_counts[i][r];
            // one length delta per candidate/reference pair, applied to all n
            double delta = cand_length - ref_lengths[i][r];
            double penalty = std::exp(-delta * delta / (2.0 * sigma * sigma));
            double sim_sum = 0.0;
            for (int n = 0; n < 4; ++n) {
                std::map<std::vector<std::string>, double> cv, rv;
                double cnorm = 0.0, rnorm = 0.0;
                tfidf(cand, n, cv, cnorm);
                tfidf(refc, n, rv, rnorm);
                double simn = 0.0;
                for (const auto& [gram, cval] : cv) {
                    auto it = rv.find(gram);
                    if (it != rv.end()) simn += std::min(cval, it->second) * it->second;
                }
                if (cnorm > 0.0 && rnorm > 0.0) simn /= cnorm * rnorm;
                sim_sum += simn * penalty;
            }
            item += sim_sum / 4.0;
        }
        total += 10.0 * item / double(ref_counts[i].size());
    }
    return total / double(m);
}

}  // namespace oracles
