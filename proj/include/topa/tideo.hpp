#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace topa {

enum class SourceTag {
    VideoTitle,
    VideoCaption,
    EgoScenario,
    ObjectLexicon,
    SyntheticFixture,
};

enum class QuestionType { What, Why, How, Other };

const char* to_string(SourceTag tag);
const char* to_string(QuestionType type);
SourceTag source_tag_from_string(const std::string& s);
QuestionType question_type_from_string(const std::string& s);

/// Provenance of the generation prompt: which seed pool the condition came
/// from and the sampled seed text itself.
struct ConditionRecord {
    SourceTag source_tag = SourceTag::VideoTitle;
    std::string seed_text;
};

struct TextualFrame {
    std::string caption;
    std::vector<std::string> object_captions;
};

/// A textual video: 5-15 ordered textual frames. Order is temporal.
struct Tideo {
    std::string id;
    std::vector<TextualFrame> frames;
    ConditionRecord condition;
    SourceTag source_tag = SourceTag::VideoTitle;
    nlohmann::json extra;  // unknown input fields, preserved on round-trip

    static constexpr std::size_t kMinFrames = 5;
    static constexpr std::size_t kMaxFrames = 15;
};

struct QAItem {
    std::string question;
    std::vector<std::string> options;  // 2-5 entries, pairwise distinct after normalization
    int answer_index = 0;
    QuestionType question_type = QuestionType::Other;
};

struct TideoAnnotation {
    std::string tideo_id;
    std::string dense_description;
    std::vector<QAItem> qa_items;
    nlohmann::json extra;
};

struct CorpusStats {
    std::uint64_t tideo_count = 0;
    std::uint64_t frame_count_total = 0;
    double mean_frames_per_tideo = 0.0;
    bool mean_defined = false;  // false for the empty corpus
    std::uint64_t qa_count = 0;
    std::map<QuestionType, std::uint64_t> question_type_histogram;
    std::map<SourceTag, std::uint64_t> condition_histogram;
};

/// Lowercased, whitespace-trimmed text; the normalization used for option
/// distinctness and dedup keys.
std::string normalize_text(const std::string& s);

/// Leading-interrogative heuristic used when the generator omits the type.
QuestionType infer_question_type(const std::string& question);

/// Validates a parsed record against the schema invariants. Rejects rather
/// than clipping out-of-range frame counts.
Tideo validate_tideo(const nlohmann::json& raw);

TideoAnnotation validate_annotation(const nlohmann::json& raw, const Tideo& tideo);

nlohmann::json to_json(const Tideo& tideo);
nlohmann::json to_json(const TideoAnnotation& annotation);

/// Single-pass accumulator; per-shard partials merge associatively.
class StatsAccumulator {
public:
    void add(const Tideo& tideo);
    void add(const TideoAnnotation& annotation);
    void merge(const StatsAccumulator& other);
    CorpusStats finish() const;

private:
    CorpusStats stats_;
};

/// Streams validated (Tideo, Annotation) pairs out of a corpus shard.
struct CorpusShard {
    std::vector<Tideo> tideos;
    std::vector<TideoAnnotation> annotations;  // aligned with tideos by tideo_id
};

CorpusShard load_corpus(const std::string& tideos_path, const std::string& annotations_path);
void save_corpus(const CorpusShard& shard, const std::string& tideos_path,
                 const std::string& annotations_path);

CorpusStats corpus_stats(const CorpusShard& shard);

nlohmann::json to_json(const CorpusStats& stats);

}  // namespace topa
