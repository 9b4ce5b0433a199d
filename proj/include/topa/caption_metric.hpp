#pragma once

#include <string>
#include <vector>

namespace topa {

/// Corpus-level captioning scorer. Contract: identical candidate/reference
/// pairs score strictly higher than disjoint-vocabulary pairs on the same
/// corpus.
class CorpusScorer {
public:
    virtual ~CorpusScorer() = default;
    virtual double score(const std::vector<std::string>& candidates,
                         const std::vector<std::vector<std::string>>& references) const = 0;
    virtual std::string name() const = 0;
};

/// Consensus tf-idf n-gram scorer (n = 1..4): per-item cosine similarity of
/// clipped tf-idf n-gram vectors against each reference, Gaussian length
/// penalty, averaged over n and references, scaled by 10.
class ConsensusNgramScorer : public CorpusScorer {
public:
    explicit ConsensusNgramScorer(double sigma = 6.0) : sigma_(sigma) {}
    double score(const std::vector<std::string>& candidates,
                 const std::vector<std::vector<std::string>>& references) const override;
    std::string name() const override { return "consensus_ngram"; }

    /// Per-item scores (the corpus score is their mean).
    std::vector<double> item_scores(const std::vector<std::string>& candidates,
                                    const std::vector<std::vector<std::string>>& references) const;

private:
    double sigma_;
};

}  // namespace topa
