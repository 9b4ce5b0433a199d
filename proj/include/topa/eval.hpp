#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "topa/aligner.hpp"
#include "topa/backbone.hpp"
#include "topa/caption_metric.hpp"
#include "topa/encoder.hpp"
#include "topa/memory_projection.hpp"
#include "topa/tokenizer.hpp"

namespace topa {

struct EvalItem {
    std::string id;
    std::optional<SequenceRepresentation> features;  // absent for blind-only items
    std::string question;
    std::vector<std::string> options;
    std::optional<int> answer_index;  // absent for unlabeled items
};

enum class EvalMode { Selection, Logits };

const char* to_string(EvalMode mode);

struct ItemResult {
    std::string id;
    int predicted_index = 0;
    std::vector<double> option_scores;  // filled in logits mode (and fallbacks)
    bool fallback_used = false;
    std::optional<bool> correct;
};

struct EvalResult {
    std::vector<ItemResult> items;
    std::size_t n = 0;
    std::size_t n_labeled = 0;
    double accuracy = 0.0;       // exact correct/labeled
    bool accuracy_defined = false;
    double fallback_rate = 0.0;
    std::string mode_label;      // "selection" or "mean_token_logprob"
    nlohmann::json config;       // full run configuration for ablation tables
};

/// Scores one option: mean per-token log-probability of the option's tokens
/// conditioned on the video+question context (options never see each other).
double option_logprob(const Backbone& backbone, const Tokenizer& tokenizer,
                      const BackboneInput& context, const std::string& option);

/// Mean-token-logprob mode: argmax over independently scored options; ties
/// resolve to the lowest index.
std::pair<int, std::vector<double>> eval_logits(const EvalItem& item, const Backbone& backbone,
                                                const ProjectionLayer& projection,
                                                const Tokenizer& tokenizer, bool blind,
                                                std::size_t frames);

struct SelectionOutcome {
    int predicted_index = 0;
    bool fallback_used = false;            // parse failed -> logits mode
    std::vector<double> option_scores;     // present when fallback fired
    std::string completion_text;
};

/// Generation mode: greedy completion of the multi-choice prompt, option
/// letter parsed from the text; unparseable completions fall back to logits.
SelectionOutcome eval_selection(const EvalItem& item, const Backbone& backbone,
                                const ProjectionLayer& projection, const Tokenizer& tokenizer,
                                bool blind, std::size_t frames, std::size_t max_gen_tokens = 24);

/// Option letter from a completion: accepts "(X)", "X)", "X." or a bare
/// letter as the first alphabetic token. Returns -1 when unparseable.
int parse_option_letter(const std::string& completion, std::size_t option_count);

struct BenchmarkSpec {
    EvalMode mode = EvalMode::Logits;
    bool blind = false;
    bool projection_on = false;
    const SupportMemory* memory = nullptr;  // required when projection_on
    std::size_t frames = 10;
    std::size_t max_gen_tokens = 24;
    nlohmann::json config;  // fingerprint + knobs, copied into the result
};

EvalResult run_benchmark(const std::vector<EvalItem>& items, const Backbone& backbone,
                         const ProjectionLayer& projection, const Tokenizer& tokenizer,
                         const BenchmarkSpec& spec);

nlohmann::json to_json(const EvalResult& result);
void write_item_results_jsonl(const EvalResult& result, const std::string& path);

/// Benchmark input adapter: JSON Lines records
/// {id, feature_file, question, options:[...], answer_index?}.
/// Feature files resolve relative to base_dir; loading goes through the
/// instrumented feature reader. Blind runs never load them.
std::vector<EvalItem> load_benchmark_jsonl(const std::string& path, const std::string& base_dir,
                                           std::size_t expected_dimension, bool load_features);

struct CaptionItem {
    std::string id;
    SequenceRepresentation features;
    std::vector<std::string> references;
};

struct CaptionResult {
    std::vector<std::string> captions;  // aligned with items
    double corpus_score = 0.0;
    std::string scorer_name;
};

/// Greedy captioning with the summarization prompt; corpus metric from the
/// pluggable scorer.
CaptionResult eval_captioning(const std::vector<CaptionItem>& items, const Backbone& backbone,
                              const ProjectionLayer& projection, const Tokenizer& tokenizer,
                              const CorpusScorer& scorer, std::size_t frames,
                              std::size_t max_gen_tokens = 48);

}  // namespace topa
