#include "topa/tideo.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "topa/error.hpp"

namespace topa {

namespace {

const char* kTideoKnownKeys[] = {"id", "source_tag", "condition", "frames"};
const char* kAnnotationKnownKeys[] = {"tideo_id", "dense_description", "qa"};

bool is_known(const std::string& key, const char* const* known, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (key == known[i]) return true;
    }
    return false;
}

std::string require_string(const nlohmann::json& obj, const char* key, const std::string& path) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) {
        throw Error(ErrorCode::MalformedRecord, "missing or non-string field at " + path + "/" + key);
    }
    return it->get<std::string>();
}

}  // namespace

const char* to_string(SourceTag tag) {
    switch (tag) {
        case SourceTag::VideoTitle: return "video_title";
        case SourceTag::VideoCaption: return "video_caption";
        case SourceTag::EgoScenario: return "ego_scenario";
        case SourceTag::ObjectLexicon: return "object_lexicon";
        case SourceTag::SyntheticFixture: return "synthetic_fixture";
    }
    return "video_title";
}

const char* to_string(QuestionType type) {
    switch (type) {
        case QuestionType::What: return "what";
        case QuestionType::Why: return "why";
        case QuestionType::How: return "how";
        case QuestionType::Other: return "other";
    }
    return "other";
}

SourceTag source_tag_from_string(const std::string& s) {
    if (s == "video_title") return SourceTag::VideoTitle;
    if (s == "video_caption") return SourceTag::VideoCaption;
    if (s == "ego_scenario") return SourceTag::EgoScenario;
    if (s == "object_lexicon") return SourceTag::ObjectLexicon;
    if (s == "synthetic_fixture") return SourceTag::SyntheticFixture;
    throw Error(ErrorCode::MalformedRecord, "unknown source_tag '" + s + "'");
}

QuestionType question_type_from_string(const std::string& s) {
    if (s == "what") return QuestionType::What;
    if (s == "why") return QuestionType::Why;
    if (s == "how") return QuestionType::How;
    if (s == "other") return QuestionType::Other;
    throw Error(ErrorCode::MalformedRecord, "unknown question_type '" + s + "'");
}

std::string normalize_text(const std::string& s) {
    std::size_t begin = 0;
    std::size_t end = s.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
    std::string out;
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(s[i]))));
    }
    return out;
}

QuestionType infer_question_type(const std::string& question) {
    std::string norm = normalize_text(question);
    auto starts_with = [&norm](const char* prefix) {
        return norm.rfind(prefix, 0) == 0;
    };
    if (starts_with("what") || starts_with("which")) return QuestionType::What;
    if (starts_with("why")) return QuestionType::Why;
    if (starts_with("how")) return QuestionType::How;
    return QuestionType::Other;
}

Tideo validate_tideo(const nlohmann::json& raw) {
    if (!raw.is_object()) {
        throw Error(ErrorCode::MalformedRecord, "record is not an object");
    }
    Tideo tideo;
    tideo.id = require_string(raw, "id", "");
    tideo.source_tag = source_tag_from_string(require_string(raw, "source_tag", ""));

    auto cond_it = raw.find("condition");
    if (cond_it == raw.end() || !cond_it->is_object()) {
        throw Error(ErrorCode::MalformedRecord, "missing field at /condition");
    }
    tideo.condition.source_tag = source_tag_from_string(require_string(*cond_it, "source_tag", "/condition"));
    tideo.condition.seed_text = require_string(*cond_it, "seed_text", "/condition");

    auto frames_it = raw.find("frames");
    if (frames_it == raw.end() || !frames_it->is_array()) {
        throw Error(ErrorCode::MalformedRecord, "missing field at /frames");
    }
    std::size_t n = frames_it->size();
    if (n < Tideo::kMinFrames || n > Tideo::kMaxFrames) {
        throw Error(ErrorCode::FrameCountOutOfRange,
                    "tideo '" + tideo.id + "' has " + std::to_string(n) + " frames (allowed 5-15)");
    }
    tideo.frames.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const nlohmann::json& f = (*frames_it)[i];
        std::string frame_path = "/frames/" + std::to_string(i);
        if (!f.is_object()) {
            throw Error(ErrorCode::MalformedRecord, "non-object frame at " + frame_path);
        }
        TextualFrame frame;
        frame.caption = require_string(f, "caption", frame_path);
        if (normalize_text(frame.caption).empty()) {
            throw Error(ErrorCode::EmptyCaption, "empty frame caption at frame " + std::to_string(i));
        }
        if (auto oc = f.find("object_captions"); oc != f.end()) {
            if (!oc->is_array()) {
                throw Error(ErrorCode::MalformedRecord, "non-array at " + frame_path + "/object_captions");
            }
            for (std::size_t j = 0; j < oc->size(); ++j) {
                const nlohmann::json& o = (*oc)[j];
                if (!o.is_string()) {
                    throw Error(ErrorCode::MalformedRecord,
                                "non-string at " + frame_path + "/object_captions/" + std::to_string(j));
                }
                std::string text = o.get<std::string>();
                if (normalize_text(text).empty()) {
                    throw Error(ErrorCode::EmptyCaption,
                                "empty object caption at frame " + std::to_string(i) + ", object " +
                                    std::to_string(j));
                }
                frame.object_captions.push_back(std::move(text));
            }
        }
        tideo.frames.push_back(std::move(frame));
    }

    for (auto it = raw.begin(); it != raw.end(); ++it) {
        if (!is_known(it.key(), kTideoKnownKeys, std::size(kTideoKnownKeys))) {
            tideo.extra[it.key()] = it.value();
        }
    }
    return tideo;
}

TideoAnnotation validate_annotation(const nlohmann::json& raw, const Tideo& tideo) {
    if (!raw.is_object()) {
        throw Error(ErrorCode::MalformedRecord, "record is not an object");
    }
    TideoAnnotation annotation;
    annotation.tideo_id = require_string(raw, "tideo_id", "");
    if (annotation.tideo_id != tideo.id) {
        throw Error(ErrorCode::IdMismatch,
                    "annotation for '" + annotation.tideo_id + "' joined against tideo '" + tideo.id + "'");
    }
    annotation.dense_description = require_string(raw, "dense_description", "");
    if (normalize_text(annotation.dense_description).empty()) {
        throw Error(ErrorCode::MalformedRecord, "empty dense_description for '" + tideo.id + "'");
    }

    auto qa_it = raw.find("qa");
    if (qa_it == raw.end() || !qa_it->is_array()) {
        throw Error(ErrorCode::MalformedRecord, "missing field at /qa");
    }
    for (std::size_t k = 0; k < qa_it->size(); ++k) {
        const nlohmann::json& q = (*qa_it)[k];
        std::string qa_path = "/qa/" + std::to_string(k);
        if (!q.is_object()) {
            throw Error(ErrorCode::MalformedRecord, "non-object at " + qa_path);
        }
        QAItem item;
        item.question = require_string(q, "question", qa_path);
        auto opt_it = q.find("options");
        if (opt_it == q.end() || !opt_it->is_array()) {
            throw Error(ErrorCode::MalformedRecord, "missing field at " + qa_path + "/options");
        }
        for (const auto& o : *opt_it) {
            if (!o.is_string()) {
                throw Error(ErrorCode::MalformedRecord, "non-string option at " + qa_path);
            }
            item.options.push_back(o.get<std::string>());
        }
        if (item.options.size() < 2 || item.options.size() > 5) {
            throw Error(ErrorCode::MalformedRecord,
                        qa_path + " has " + std::to_string(item.options.size()) + " options (allowed 2-5)");
        }
        std::set<std::string> normalized;
        for (const auto& o : item.options) {
            if (!normalized.insert(normalize_text(o)).second) {
                throw Error(ErrorCode::DuplicateOptions,
                            "duplicate option '" + o + "' at " + qa_path + " after normalization");
            }
        }
        auto ans_it = q.find("answer_index");
        if (ans_it == q.end() || !ans_it->is_number_integer()) {
            throw Error(ErrorCode::MalformedRecord, "missing field at " + qa_path + "/answer_index");
        }
        item.answer_index = ans_it->get<int>();
        if (item.answer_index < 0 || item.answer_index >= static_cast<int>(item.options.size())) {
            throw Error(ErrorCode::AnswerOutOfRange,
                        "answer_index " + std::to_string(item.answer_index) + " over " +
                            std::to_string(item.options.size()) + " options at " + qa_path);
        }
        if (auto t = q.find("question_type"); t != q.end() && t->is_string()) {
            item.question_type = question_type_from_string(t->get<std::string>());
        } else {
            item.question_type = infer_question_type(item.question);
        }
        annotation.qa_items.push_back(std::move(item));
    }

    for (auto it = raw.begin(); it != raw.end(); ++it) {
        if (!is_known(it.key(), kAnnotationKnownKeys, std::size(kAnnotationKnownKeys))) {
            annotation.extra[it.key()] = it.value();
        }
    }
    return annotation;
}

nlohmann::json to_json(const Tideo& tideo) {
    nlohmann::json out = tideo.extra.is_object() ? tideo.extra : nlohmann::json::object();
    out["id"] = tideo.id;
    out["source_tag"] = to_string(tideo.source_tag);
    out["condition"] = {{"source_tag", to_string(tideo.condition.source_tag)},
                        {"seed_text", tideo.condition.seed_text}};
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& frame : tideo.frames) {
        frames.push_back({{"caption", frame.caption}, {"object_captions", frame.object_captions}});
    }
    out["frames"] = std::move(frames);
    return out;
}

nlohmann::json to_json(const TideoAnnotation& annotation) {
    nlohmann::json out = annotation.extra.is_object() ? annotation.extra : nlohmann::json::object();
    out["tideo_id"] = annotation.tideo_id;
    out["dense_description"] = annotation.dense_description;
    nlohmann::json qa = nlohmann::json::array();
    for (const auto& item : annotation.qa_items) {
        qa.push_back({{"question", item.question},
                      {"options", item.options},
                      {"answer_index", item.answer_index},
                      {"question_type", to_string(item.question_type)}});
    }
    out["qa"] = std::move(qa);
    return out;
}

void StatsAccumulator::add(const Tideo& tideo) {
    stats_.tideo_count += 1;
    stats_.frame_count_total += tideo.frames.size();
    stats_.condition_histogram[tideo.source_tag] += 1;
}

void StatsAccumulator::add(const TideoAnnotation& annotation) {
    for (const auto& item : annotation.qa_items) {
        stats_.qa_count += 1;
        stats_.question_type_histogram[item.question_type] += 1;
    }
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
    stats_.tideo_count += other.stats_.tideo_count;
    stats_.frame_count_total += other.stats_.frame_count_total;
    stats_.qa_count += other.stats_.qa_count;
    for (const auto& [k, v] : other.stats_.question_type_histogram) {
        stats_.question_type_histogram[k] += v;
    }
    for (const auto& [k, v] : other.stats_.condition_histogram) {
        stats_.condition_histogram[k] += v;
    }
}

CorpusStats StatsAccumulator::finish() const {
    CorpusStats out = stats_;
    if (out.tideo_count > 0) {
        out.mean_frames_per_tideo =
            static_cast<double>(out.frame_count_total) / static_cast<double>(out.tideo_count);
        out.mean_defined = true;
    } else {
        out.mean_frames_per_tideo = 0.0;
        out.mean_defined = false;
    }
    return out;
}

CorpusShard load_corpus(const std::string& tideos_path, const std::string& annotations_path) {
    CorpusShard shard;
    std::ifstream tf(tideos_path);
    if (!tf) throw Error(ErrorCode::IoError, "cannot open " + tideos_path);
    std::unordered_map<std::string, std::size_t> index;
    std::string line;
    while (std::getline(tf, line)) {
        if (line.empty()) continue;
        Tideo tideo = validate_tideo(nlohmann::json::parse(line));
        index[tideo.id] = shard.tideos.size();
        shard.tideos.push_back(std::move(tideo));
    }

    std::ifstream af(annotations_path);
    if (!af) throw Error(ErrorCode::IoError, "cannot open " + annotations_path);
    shard.annotations.resize(shard.tideos.size());
    while (std::getline(af, line)) {
        if (line.empty()) continue;
        nlohmann::json raw = nlohmann::json::parse(line);
        std::string tideo_id = raw.value("tideo_id", "");
        auto it = index.find(tideo_id);
        if (it == index.end()) {
            throw Error(ErrorCode::IdMismatch, "annotation for unknown tideo '" + tideo_id + "'");
        }
        shard.annotations[it->second] = validate_annotation(raw, shard.tideos[it->second]);
    }
    return shard;
}

void save_corpus(const CorpusShard& shard, const std::string& tideos_path,
                 const std::string& annotations_path) {
    std::ofstream tf(tideos_path);
    if (!tf) throw Error(ErrorCode::IoError, "cannot write " + tideos_path);
    for (const auto& tideo : shard.tideos) {
        tf << to_json(tideo).dump() << '\n';
    }
    std::ofstream af(annotations_path);
    if (!af) throw Error(ErrorCode::IoError, "cannot write " + annotations_path);
    for (const auto& annotation : shard.annotations) {
        af << to_json(annotation).dump() << '\n';
    }
}

CorpusStats corpus_stats(const CorpusShard& shard) {
    StatsAccumulator acc;
    for (const auto& tideo : shard.tideos) acc.add(tideo);
    for (const auto& annotation : shard.annotations) acc.add(annotation);
    return acc.finish();
}

nlohmann::json to_json(const CorpusStats& stats) {
    nlohmann::json qhist = nlohmann::json::object();
    for (const auto& [k, v] : stats.question_type_histogram) qhist[to_string(k)] = v;
    nlohmann::json chist = nlohmann::json::object();
    for (const auto& [k, v] : stats.condition_histogram) chist[to_string(k)] = v;
    return {{"tideo_count", stats.tideo_count},
            {"frame_count_total", stats.frame_count_total},
            {"mean_frames_per_tideo", stats.mean_frames_per_tideo},
            {"mean_defined", stats.mean_defined},
            {"qa_count", stats.qa_count},
            {"question_type_histogram", qhist},
            {"condition_histogram", chist}};
}

}  // namespace topa
