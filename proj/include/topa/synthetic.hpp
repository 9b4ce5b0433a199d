#pragma once

#include <optional>
#include <string>
#include <vector>

#include "topa/encoder.hpp"
#include "topa/eval.hpp"
#include "topa/tideo.hpp"

namespace topa {

/// Concept-scripted desk-scale corpus: every frame shows exactly one
/// concept, QA answers are fully determined by the frame concepts (content
/// questions) or their order (temporal questions).
struct SyntheticTaskSpec {
    std::vector<std::string> concepts;  // defaults to builtin_concepts(50)
    std::size_t tideo_count = 500;
    std::size_t min_frames = 5;
    std::size_t max_frames = 9;
    std::size_t options_per_qa = 4;
    bool temporal_questions = true;
    std::uint64_t rng_seed = 0;
};

std::vector<std::string> builtin_concepts(std::size_t n = 50);

enum class SyntheticQuestionKind { Content, TemporalFirst, TemporalLast };

/// The exact question texts used by the builder (stored without terminal
/// punctuation; the prompt template adds it).
const char* question_text(SyntheticQuestionKind kind);

CorpusShard build_synthetic_corpus(const SyntheticTaskSpec& spec);

/// The "real video" behind a synthetic tideo: per-frame image features of
/// the frame captions (image modality, carries the encoder's modality gap).
SequenceRepresentation synthetic_video(const Tideo& tideo, const EncoderPair& pair);

/// Eval items for tideos [begin, end); kind filters the QA items, nullopt
/// keeps all.
std::vector<EvalItem> build_synthetic_eval(const CorpusShard& corpus, std::size_t begin,
                                           std::size_t end, const EncoderPair& pair,
                                           std::optional<SyntheticQuestionKind> kind);

/// Finetuning-style dataset: image-modality sequences plus annotations.
void synthetic_video_dataset(const CorpusShard& corpus, const EncoderPair& pair,
                             std::vector<SequenceRepresentation>* videos,
                             std::vector<TideoAnnotation>* annotations);

/// All prompt-side texts of a corpus (template boilerplate, questions,
/// options, descriptions); input for Tokenizer::build before training.
std::vector<std::string> vocabulary_texts(const CorpusShard& corpus);

}  // namespace topa
