#include "topa/caption_metric.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "topa/error.hpp"

namespace topa {

namespace {

constexpr int kMaxN = 4;

// n-gram histogram per order; keys are space-joined token runs.
struct GramCounts {
    std::unordered_map<std::string, int> counts[kMaxN];
    double length = 0.0;  // unigram total, for the length penalty
};

GramCounts collect(const std::string& sentence) {
    GramCounts out;
    std::istringstream in(sentence);
    std::vector<std::string> words;
    std::string w;
    while (in >> w) words.push_back(w);
    out.length = double(words.size());
    for (int n = 1; n <= kMaxN; ++n) {
        for (std::size_t i = 0; i + n <= words.size(); ++i) {
            std::string key = words[i];
            for (int j = 1; j < n; ++j) key += " " + words[i + j];
            out.counts[n - 1][key] += 1;
        }
    }
    return out;
}

struct TfIdf {
    std::unordered_map<std::string, double> vec[kMaxN];
    double norm[kMaxN] = {0, 0, 0, 0};
};

TfIdf to_tfidf(const GramCounts& counts, const std::unordered_map<std::string, double>& df,
               double log_corpus) {
    TfIdf out;
    for (int n = 0; n < kMaxN; ++n) {
        for (const auto& [gram, tf] : counts.counts[n]) {
            auto it = df.find(gram);
            double d = it == df.end() ? 0.0 : it->second;
            double idf = log_corpus - std::log(std::max(1.0, d));
            double value = double(tf) * idf;
            out.vec[n][gram] = value;
            out.norm[n] += value * value;
        }
        out.norm[n] = std::sqrt(out.norm[n]);
    }
    return out;
}

}  // namespace

std::vector<double> ConsensusNgramScorer::item_scores(
    const std::vector<std::string>& candidates,
    const std::vector<std::vector<std::string>>& references) const {
    if (candidates.size() != references.size()) {
        throw Error(ErrorCode::MalformedRecord, "candidate/reference count mismatch");
    }
    const std::size_t m = candidates.size();
    if (m == 0) return {};
    for (const auto& refs : references) {
        if (refs.empty()) throw Error(ErrorCode::MalformedRecord, "item without references");
    }

    // Document frequency: number of items whose reference set contains the gram.
    std::unordered_map<std::string, double> df;
    std::vector<std::vector<GramCounts>> ref_counts(m);
    for (std::size_t i = 0; i < m; ++i) {
        std::unordered_set<std::string> seen;
        for (const auto& ref : references[i]) {
            ref_counts[i].push_back(collect(ref));
            for (int n = 0; n < kMaxN; ++n) {
                for (const auto& [gram, tf] : ref_counts[i].back().counts[n]) seen.insert(gram);
            }
        }
        for (const auto& gram : seen) df[gram] += 1.0;
    }
    const double log_corpus = m <= 1 ? 1.0 : std::log(double(m));

    std::vector<double> scores(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        GramCounts cand = collect(candidates[i]);
        TfIdf cv = to_tfidf(cand, df, log_corpus);
        double item = 0.0;
        for (std::size_t r = 0; r < ref_counts[i].size(); ++r) {
            const GramCounts& refc = ref_counts[i][r];
            TfIdf rv = to_tfidf(refc, df, log_corpus);
            double sim_sum = 0.0;
            for (int n = 0; n < kMaxN; ++n) {
                double sim = 0.0;
                for (const auto& [gram, cval] : cv.vec[n]) {
                    auto it = rv.vec[n].find(gram);
                    if (it != rv.vec[n].end()) sim += std::min(cval, it->second) * it->second;
                }
                if (cv.norm[n] > 0.0 && rv.norm[n] > 0.0) sim /= cv.norm[n] * rv.norm[n];
                double delta = cand.length - refc.length;
                sim *= std::exp(-delta * delta / (2.0 * sigma_ * sigma_));
                sim_sum += sim;
            }
            item += sim_sum / double(kMaxN);
        }
        scores[i] = 10.0 * item / double(ref_counts[i].size());
    }
    return scores;
}

double ConsensusNgramScorer::score(const std::vector<std::string>& candidates,
                                   const std::vector<std::vector<std::string>>& references) const {
    std::vector<double> scores = item_scores(candidates, references);
    if (scores.empty()) return 0.0;
    double total = 0.0;
    for (double s : scores) total += s;
    return total / double(scores.size());
}

}  // namespace topa
