#include "topa/synthetic.hpp"

#include <algorithm>
#include <random>

#include "topa/error.hpp"
#include "topa/templates.hpp"

namespace topa {

namespace {

const char* kConcepts[] = {
    "apple",    "bridge",   "camera",  "drum",      "engine",   "fountain", "guitar",
    "hammer",   "island",   "jacket",  "kite",      "ladder",   "mirror",   "notebook",
    "orange",   "piano",    "quilt",   "rocket",    "saddle",   "telescope", "umbrella",
    "violin",   "wheel",    "xylophone", "yacht",   "zebra",    "anchor",   "basket",
    "candle",   "dolphin",  "easel",   "feather",   "glacier",  "helmet",   "igloo",
    "jug",      "kettle",   "lantern", "magnet",    "needle",   "owl",      "pencil",
    "quarry",   "ribbon",   "statue",  "tunnel",    "urn",      "vase",     "wagon",
    "yarn"};

QAItem make_qa(const std::string& question, std::vector<std::string> options, int answer) {
    QAItem item;
    item.question = question;
    item.options = std::move(options);
    item.answer_index = answer;
    item.question_type = infer_question_type(question);
    return item;
}

// Places `correct` at a random slot among `distractors`.
QAItem assemble_qa(const std::string& question, const std::string& correct,
                   std::vector<std::string> distractors, std::mt19937_64& rng) {
    std::vector<std::string> options = std::move(distractors);
    std::uniform_int_distribution<std::size_t> slot(0, options.size());
    std::size_t at = slot(rng);
    options.insert(options.begin() + static_cast<std::ptrdiff_t>(at), correct);
    return make_qa(question, std::move(options), static_cast<int>(at));
}

}  // namespace

std::vector<std::string> builtin_concepts(std::size_t n) {
    std::size_t available = std::size(kConcepts);
    if (n == 0 || n > available) {
        throw Error(ErrorCode::EmptyVocabulary,
                    "builtin concept list has " + std::to_string(available) + " entries");
    }
    return std::vector<std::string>(kConcepts, kConcepts + n);
}

const char* question_text(SyntheticQuestionKind kind) {
    switch (kind) {
        case SyntheticQuestionKind::Content: return "Which object appears in the video";
        case SyntheticQuestionKind::TemporalFirst: return "Which object appears first in the video";
        case SyntheticQuestionKind::TemporalLast: return "Which object appears last in the video";
    }
    return "";
}

CorpusShard build_synthetic_corpus(const SyntheticTaskSpec& spec) {
    std::vector<std::string> concepts =
        spec.concepts.empty() ? builtin_concepts() : spec.concepts;
    if (concepts.size() < spec.options_per_qa + 1) {
        throw Error(ErrorCode::EmptyVocabulary, "need more concepts than options per question");
    }
    if (spec.min_frames < Tideo::kMinFrames || spec.max_frames > Tideo::kMaxFrames ||
        spec.min_frames > spec.max_frames) {
        throw Error(ErrorCode::FrameCountOutOfRange, "synthetic frame bounds outside 5-15");
    }
    if (spec.min_frames < spec.options_per_qa) {
        throw Error(ErrorCode::FrameCountOutOfRange,
                    "temporal questions need at least options_per_qa frames");
    }

    std::mt19937_64 rng(spec.rng_seed);
    CorpusShard shard;
    for (std::size_t t = 0; t < spec.tideo_count; ++t) {
        std::uniform_int_distribution<std::size_t> frame_count(spec.min_frames, spec.max_frames);
        std::size_t n = frame_count(rng);

        // distinct concepts in random temporal order
        std::vector<std::size_t> pool(concepts.size());
        std::iota(pool.begin(), pool.end(), 0);
        std::shuffle(pool.begin(), pool.end(), rng);
        std::vector<std::size_t> scene(pool.begin(), pool.begin() + n);

        Tideo tideo;
        tideo.id = "syn-" + std::to_string(spec.rng_seed) + "-" + std::to_string(t);
        tideo.source_tag = SourceTag::SyntheticFixture;
        tideo.condition.source_tag = SourceTag::ObjectLexicon;
        tideo.condition.seed_text = concepts[scene[0]];
        std::string description = "The video shows the " + concepts[scene[0]];
        for (std::size_t i = 0; i < n; ++i) {
            TextualFrame frame;
            frame.caption = "a view of the " + concepts[scene[i]];
            frame.object_captions.push_back("the " + concepts[scene[i]] + " up close");
            tideo.frames.push_back(std::move(frame));
            if (i > 0) description += ", then the " + concepts[scene[i]];
        }

        TideoAnnotation annotation;
        annotation.tideo_id = tideo.id;
        annotation.dense_description = description;

        auto absent_distractors = [&](std::size_t count) {
            std::vector<std::string> picked;
            std::vector<std::size_t> absent(pool.begin() + n, pool.end());
            std::shuffle(absent.begin(), absent.end(), rng);
            for (std::size_t i = 0; i < count; ++i) picked.push_back(concepts[absent[i]]);
            return picked;
        };

        // content question: the one present option is the answer
        {
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            std::string correct = concepts[scene[pick(rng)]];
            annotation.qa_items.push_back(
                assemble_qa(question_text(SyntheticQuestionKind::Content), correct,
                            absent_distractors(spec.options_per_qa - 1), rng));
        }

        if (spec.temporal_questions) {
            // order questions: all options are present, order decides
            auto present_distractors = [&](std::size_t exclude) {
                std::vector<std::size_t> others;
                for (std::size_t i = 0; i < n; ++i) {
                    if (i != exclude) others.push_back(scene[i]);
                }
                std::shuffle(others.begin(), others.end(), rng);
                std::vector<std::string> picked;
                for (std::size_t i = 0; i < spec.options_per_qa - 1; ++i) {
                    picked.push_back(concepts[others[i]]);
                }
                return picked;
            };
            annotation.qa_items.push_back(
                assemble_qa(question_text(SyntheticQuestionKind::TemporalFirst),
                            concepts[scene[0]], present_distractors(0), rng));
            annotation.qa_items.push_back(
                assemble_qa(question_text(SyntheticQuestionKind::TemporalLast),
                            concepts[scene[n - 1]], present_distractors(n - 1), rng));
        }

        shard.tideos.push_back(std::move(tideo));
        shard.annotations.push_back(std::move(annotation));
    }
    return shard;
}

SequenceRepresentation synthetic_video(const Tideo& tideo, const EncoderPair& pair) {
    if (!pair.encode_image) {
        throw Error(ErrorCode::EncoderFailure, "encoder pair has no image side");
    }
    SequenceRepresentation seq;
    seq.modality = Modality::Image;
    for (const auto& frame : tideo.frames) {
        FrameFeature f;
        f.vector = pair.encode_image(frame.caption);
        normalize(f.vector);
        f.modality = Modality::Image;
        f.normalized = true;
        seq.frames.push_back(std::move(f));
    }
    return seq;
}

std::vector<EvalItem> build_synthetic_eval(const CorpusShard& corpus, std::size_t begin,
                                           std::size_t end, const EncoderPair& pair,
                                           std::optional<SyntheticQuestionKind> kind) {
    end = std::min(end, corpus.tideos.size());
    std::vector<EvalItem> items;
    for (std::size_t i = begin; i < end; ++i) {
        const Tideo& tideo = corpus.tideos[i];
        const TideoAnnotation& annotation = corpus.annotations[i];
        SequenceRepresentation video = synthetic_video(tideo, pair);
        for (std::size_t q = 0; q < annotation.qa_items.size(); ++q) {
            const QAItem& qa = annotation.qa_items[q];
            if (kind.has_value() && qa.question != question_text(*kind)) continue;
            EvalItem item;
            item.id = tideo.id + "#q" + std::to_string(q);
            item.features = video;
            item.question = qa.question;
            item.options = qa.options;
            item.answer_index = qa.answer_index;
            items.push_back(std::move(item));
        }
    }
    return items;
}

void synthetic_video_dataset(const CorpusShard& corpus, const EncoderPair& pair,
                             std::vector<SequenceRepresentation>* videos,
                             std::vector<TideoAnnotation>* annotations) {
    videos->clear();
    annotations->clear();
    for (std::size_t i = 0; i < corpus.tideos.size(); ++i) {
        videos->push_back(synthetic_video(corpus.tideos[i], pair));
        annotations->push_back(corpus.annotations[i]);
    }
}

std::vector<std::string> vocabulary_texts(const CorpusShard& corpus) {
    std::vector<std::string> texts;
    // template boilerplate, including all five option letters
    QAItem probe;
    probe.question = "q";
    probe.options = {"o1", "o2", "o3", "o4", "o5"};
    probe.answer_index = 0;
    texts.push_back(full_prompt_text(PromptTemplateSet::multi_choice(probe), ""));
    texts.push_back(full_prompt_text(PromptTemplateSet::open_qa(probe), ""));
    texts.push_back(full_prompt_text(PromptTemplateSet::summarization("d"), ""));
    for (const auto& annotation : corpus.annotations) {
        texts.push_back(annotation.dense_description);
        for (const auto& qa : annotation.qa_items) {
            texts.push_back(qa.question);
            for (const auto& option : qa.options) texts.push_back(option);
        }
    }
    return texts;
}

}  // namespace topa
