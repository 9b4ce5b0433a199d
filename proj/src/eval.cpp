#include "topa/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "topa/error.hpp"
#include "topa/feature_file.hpp"

namespace topa {

namespace {

// Feature pipeline for one sighted item: resample to the frame budget and
// optionally bridge the modality gap through the support memory.
SequenceRepresentation prepare_features(const EvalItem& item, const BenchmarkSpec& spec) {
    if (!item.features.has_value()) {
        throw Error(ErrorCode::MissingMemory, "sighted evaluation on an item without features");
    }
    SequenceRepresentation seq = resample_sequence(*item.features, spec.frames);
    if (spec.projection_on) {
        if (spec.memory == nullptr) {
            throw Error(ErrorCode::MissingMemory, "projection=on requires a support memory");
        }
        seq = project_sequence(seq, *spec.memory);
    }
    return seq;
}

BackboneInput context_for_logits(const std::string& question, const ProjectionLayer& projection,
                                 const Tokenizer& tokenizer,
                                 const SequenceRepresentation* features) {
    RenderedPrompt prompt = PromptTemplateSet::open_qa_context(question);
    BackboneInput input;
    input.pre_tokens = tokenizer.encode(prompt.pre_video);
    input.post_tokens = tokenizer.encode(prompt.post_video);
    if (features != nullptr) input.features = projection.apply(*features);
    return input;
}

BackboneInput context_for_selection(const EvalItem& item, const ProjectionLayer& projection,
                                    const Tokenizer& tokenizer,
                                    const SequenceRepresentation* features) {
    RenderedPrompt prompt = PromptTemplateSet::multi_choice_context(item.question, item.options);
    BackboneInput input;
    input.pre_tokens = tokenizer.encode(prompt.pre_video);
    input.post_tokens = tokenizer.encode(prompt.post_video);
    if (features != nullptr) input.features = projection.apply(*features);
    return input;
}

std::pair<int, std::vector<double>> logits_over_options(const EvalItem& item,
                                                        const Backbone& backbone,
                                                        const ProjectionLayer& projection,
                                                        const Tokenizer& tokenizer,
                                                        const SequenceRepresentation* features) {
    BackboneInput context = context_for_logits(item.question, projection, tokenizer, features);
    std::vector<double> scores(item.options.size());
    for (std::size_t i = 0; i < item.options.size(); ++i) {
        scores[i] = option_logprob(backbone, tokenizer, context, item.options[i]);
    }
    int best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) best = static_cast<int>(i);  // ties keep the lowest index
    }
    return {best, scores};
}

}  // namespace

const char* to_string(EvalMode mode) {
    return mode == EvalMode::Selection ? "selection" : "mean_token_logprob";
}

double option_logprob(const Backbone& backbone, const Tokenizer& tokenizer,
                      const BackboneInput& context, const std::string& option) {
    std::vector<int> tokens = tokenizer.encode(option);
    if (tokens.empty()) {
        throw Error(ErrorCode::EmptyOption, "option with no tokens: '" + option + "'");
    }
    Matrix logits = backbone.score_targets(context, tokens);
    double total = 0.0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const double* row = logits.row(i);
        double max_val = row[0];
        for (std::size_t v = 1; v < logits.cols; ++v) max_val = std::max(max_val, row[v]);
        double denom = 0.0;
        for (std::size_t v = 0; v < logits.cols; ++v) denom += std::exp(row[v] - max_val);
        total += row[tokens[i]] - max_val - std::log(denom);
    }
    return total / double(tokens.size());
}

std::pair<int, std::vector<double>> eval_logits(const EvalItem& item, const Backbone& backbone,
                                                const ProjectionLayer& projection,
                                                const Tokenizer& tokenizer, bool blind,
                                                std::size_t frames) {
    if (item.options.size() < 2) {
        throw Error(ErrorCode::EmptyOption, "item '" + item.id + "' needs at least 2 options");
    }
    if (blind) {
        return logits_over_options(item, backbone, projection, tokenizer, nullptr);
    }
    if (!item.features.has_value()) {
        throw Error(ErrorCode::MissingMemory, "sighted evaluation on an item without features");
    }
    SequenceRepresentation seq = resample_sequence(*item.features, frames);
    return logits_over_options(item, backbone, projection, tokenizer, &seq);
}

int parse_option_letter(const std::string& completion, std::size_t option_count) {
    // first alphabetic run; a single letter counts, a longer word does not
    for (std::size_t i = 0; i < completion.size(); ++i) {
        char c = completion[i];
        if (!std::isalpha(static_cast<unsigned char>(c))) continue;
        std::size_t j = i;
        while (j < completion.size() && std::isalpha(static_cast<unsigned char>(completion[j]))) ++j;
        if (j - i == 1) {
            int index = option_index(c);
            if (index >= 0 && index < static_cast<int>(option_count)) return index;
        }
        // skip over prompt-echo words like "The correct choice is"
        static const char* linkers[] = {"The", "the", "correct", "choice", "is", "answer", "Answer"};
        std::string word = completion.substr(i, j - i);
        bool linker = false;
        for (const char* l : linkers) {
            if (word == l) {
                linker = true;
                break;
            }
        }
        if (!linker) return -1;
        i = j;
    }
    return -1;
}

SelectionOutcome eval_selection(const EvalItem& item, const Backbone& backbone,
                                const ProjectionLayer& projection, const Tokenizer& tokenizer,
                                bool blind, std::size_t frames, std::size_t max_gen_tokens) {
    if (item.options.size() < 2) {
        throw Error(ErrorCode::EmptyOption, "item '" + item.id + "' needs at least 2 options");
    }
    SelectionOutcome outcome;
    std::optional<SequenceRepresentation> seq;
    const SequenceRepresentation* features = nullptr;
    if (!blind) {
        if (!item.features.has_value()) {
            throw Error(ErrorCode::MissingMemory, "sighted evaluation on an item without features");
        }
        seq = resample_sequence(*item.features, frames);
        features = &*seq;
    }
    BackboneInput context = context_for_selection(item, projection, tokenizer, features);
    std::vector<int> generated = backbone.generate(context, max_gen_tokens, Tokenizer::kEosId);
    outcome.completion_text = tokenizer.decode(generated);
    int parsed = parse_option_letter(outcome.completion_text, item.options.size());
    if (parsed >= 0) {
        outcome.predicted_index = parsed;
        return outcome;
    }
    // unparseable (or overrun) completions fall back to logits mode
    outcome.fallback_used = true;
    auto [index, scores] =
        blind ? logits_over_options(item, backbone, projection, tokenizer, nullptr)
              : logits_over_options(item, backbone, projection, tokenizer, features);
    outcome.predicted_index = index;
    outcome.option_scores = std::move(scores);
    return outcome;
}

EvalResult run_benchmark(const std::vector<EvalItem>& items, const Backbone& backbone,
                         const ProjectionLayer& projection, const Tokenizer& tokenizer,
                         const BenchmarkSpec& spec) {
    if (spec.projection_on && spec.memory == nullptr) {
        throw Error(ErrorCode::MissingMemory, "projection=on requires a support memory");
    }
    EvalResult result;
    result.items.resize(items.size());
    result.mode_label = to_string(spec.mode);
    result.config = spec.config.is_null() ? nlohmann::json::object() : spec.config;
    result.config["mode"] = to_string(spec.mode);
    result.config["blind"] = spec.blind;
    result.config["projection"] = spec.projection_on ? "on" : "off";
    result.config["frames"] = spec.frames;

    std::exception_ptr first_error = nullptr;
#pragma omp parallel for schedule(dynamic) num_threads(kernels::threads())
    for (long long ii = 0; ii < static_cast<long long>(items.size()); ++ii) {
        try {
            std::size_t i = static_cast<std::size_t>(ii);
            // prepared copy: the frame budget and the modality-gap
            // projection are applied here, before prompting
            EvalItem item = items[i];
            if (!spec.blind) {
                item.features = prepare_features(items[i], spec);
            }
            ItemResult ir;
            ir.id = item.id;
            if (spec.mode == EvalMode::Logits) {
                auto [index, scores] =
                    eval_logits(item, backbone, projection, tokenizer, spec.blind, spec.frames);
                ir.predicted_index = index;
                ir.option_scores = std::move(scores);
            } else {
                SelectionOutcome outcome = eval_selection(
                    item, backbone, projection, tokenizer, spec.blind, spec.frames,
                    spec.max_gen_tokens);
                ir.predicted_index = outcome.predicted_index;
                ir.fallback_used = outcome.fallback_used;
                ir.option_scores = std::move(outcome.option_scores);
            }
            if (item.answer_index.has_value()) {
                ir.correct = ir.predicted_index == *item.answer_index;
            }
            result.items[i] = std::move(ir);
        } catch (...) {
#pragma omp critical
            if (!first_error) first_error = std::current_exception();
        }
    }
    if (first_error) std::rethrow_exception(first_error);

    std::size_t correct = 0;
    std::size_t fallbacks = 0;
    for (const auto& ir : result.items) {
        result.n += 1;
        if (ir.fallback_used) ++fallbacks;
        if (ir.correct.has_value()) {
            result.n_labeled += 1;
            if (*ir.correct) ++correct;
        }
    }
    if (result.n_labeled > 0) {
        result.accuracy = double(correct) / double(result.n_labeled);
        result.accuracy_defined = true;
    }
    result.fallback_rate = result.n > 0 ? double(fallbacks) / double(result.n) : 0.0;
    return result;
}

nlohmann::json to_json(const EvalResult& result) {
    return {{"config", result.config},
            {"mode", result.mode_label},
            {"accuracy", result.accuracy},
            {"accuracy_defined", result.accuracy_defined},
            {"n", result.n},
            {"n_labeled", result.n_labeled},
            {"fallback_rate", result.fallback_rate}};
}

void write_item_results_jsonl(const EvalResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    for (const auto& ir : result.items) {
        nlohmann::json j{{"id", ir.id},
                         {"predicted_index", ir.predicted_index},
                         {"fallback_used", ir.fallback_used}};
        if (!ir.option_scores.empty()) j["option_scores"] = ir.option_scores;
        if (ir.correct.has_value()) j["correct"] = *ir.correct;
        out << j.dump() << '\n';
    }
}

std::vector<EvalItem> load_benchmark_jsonl(const std::string& path, const std::string& base_dir,
                                           std::size_t expected_dimension, bool load_features) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    std::vector<EvalItem> items;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json record = nlohmann::json::parse(line);
        EvalItem item;
        item.id = record.value("id", "item" + std::to_string(items.size()));
        item.question = record.at("question").get<std::string>();
        item.options = record.at("options").get<std::vector<std::string>>();
        if (record.contains("answer_index")) item.answer_index = record["answer_index"].get<int>();
        if (load_features && record.contains("feature_file")) {
            std::string file = record["feature_file"].get<std::string>();
            FeatureFile features = read_feature_file(base_dir.empty() ? file : base_dir + "/" + file);
            std::vector<std::vector<double>> rows;
            rows.reserve(features.rows.size());
            for (const auto& r : features.rows) rows.emplace_back(r.begin(), r.end());
            item.features =
                encode_video_features(rows, expected_dimension, features.rows.size());
        }
        items.push_back(std::move(item));
    }
    return items;
}

CaptionResult eval_captioning(const std::vector<CaptionItem>& items, const Backbone& backbone,
                              const ProjectionLayer& projection, const Tokenizer& tokenizer,
                              const CorpusScorer& scorer, std::size_t frames,
                              std::size_t max_gen_tokens) {
    CaptionResult result;
    result.scorer_name = scorer.name();
    result.captions.resize(items.size());

    std::exception_ptr first_error = nullptr;
#pragma omp parallel for schedule(dynamic) num_threads(kernels::threads())
    for (long long ii = 0; ii < static_cast<long long>(items.size()); ++ii) {
        try {
            std::size_t i = static_cast<std::size_t>(ii);
            if (items[i].references.empty()) {
                throw Error(ErrorCode::MalformedRecord, "caption item without references");
            }
            RenderedPrompt prompt = PromptTemplateSet::summarization("");
            BackboneInput input;
            input.pre_tokens = tokenizer.encode(prompt.pre_video);
            input.post_tokens = tokenizer.encode(prompt.post_video);
            SequenceRepresentation seq = resample_sequence(items[i].features, frames);
            input.features = projection.apply(seq);
            std::vector<int> generated = backbone.generate(input, max_gen_tokens, Tokenizer::kEosId);
            result.captions[i] = tokenizer.decode(generated);
        } catch (...) {
#pragma omp critical
            if (!first_error) first_error = std::current_exception();
        }
    }
    if (first_error) std::rethrow_exception(first_error);

    std::vector<std::vector<std::string>> references;
    references.reserve(items.size());
    for (const auto& item : items) references.push_back(item.references);
    result.corpus_score = scorer.score(result.captions, references);
    return result;
}

}  // namespace topa
