#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <random>

#include "topa/error.hpp"
#include "topa/tideo.hpp"

using namespace topa;

namespace {

nlohmann::json frame_json(const std::string& caption,
                          const std::vector<std::string>& objects = {}) {
    return {{"caption", caption}, {"object_captions", objects}};
}

nlohmann::json tideo_json(int frame_count, const std::string& id = "t0") {
    nlohmann::json frames = nlohmann::json::array();
    for (int i = 0; i < frame_count; ++i) {
        frames.push_back(frame_json("frame caption " + std::to_string(i), {"object " + std::to_string(i)}));
    }
    return {{"id", id},
            {"source_tag", "video_title"},
            {"condition", {{"source_tag", "video_title"}, {"seed_text", "how to fix a bike"}}},
            {"frames", frames}};
}

nlohmann::json qa_json(const std::vector<std::string>& options, int answer) {
    return {{"question", "What happens first"}, {"options", options}, {"answer_index", answer}};
}

}  // namespace

TEST_CASE("validate_tideo accepts the 5 and 15 frame boundaries") {
    CHECK(validate_tideo(tideo_json(5)).frames.size() == 5);
    CHECK(validate_tideo(tideo_json(15)).frames.size() == 15);
}

TEST_CASE("validate_tideo rejects out-of-range frame counts instead of clipping") {
    for (int n : {0, 1, 4, 16, 30}) {
        try {
            validate_tideo(tideo_json(n));
            FAIL("expected FrameCountOutOfRange for n=" << n);
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::FrameCountOutOfRange);
        }
    }
}

TEST_CASE("validate_tideo pinpoints the empty caption frame") {
    nlohmann::json raw = tideo_json(15);
    raw["frames"][7]["caption"] = "   ";
    try {
        validate_tideo(raw);
        FAIL("expected EmptyCaption");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyCaption);
        CHECK(std::string(e.what()).find("frame 7") != std::string::npos);
    }
}

TEST_CASE("validate_tideo reports the missing-field path") {
    nlohmann::json raw = tideo_json(6);
    raw["frames"][2].erase("caption");
    try {
        validate_tideo(raw);
        FAIL("expected MalformedRecord");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MalformedRecord);
        CHECK(std::string(e.what()).find("/frames/2") != std::string::npos);
    }
}

TEST_CASE("validate_annotation boundary and error cases") {
    Tideo tideo = validate_tideo(tideo_json(5));

    nlohmann::json good = {{"tideo_id", "t0"},
                           {"dense_description", "a person fixes a bike"},
                           {"qa", nlohmann::json::array({qa_json({"a", "b", "c", "d", "e"}, 4)})}};
    TideoAnnotation annotation = validate_annotation(good, tideo);
    CHECK(annotation.qa_items.size() == 1);
    CHECK(annotation.qa_items[0].answer_index == 4);

    nlohmann::json out_of_range = good;
    out_of_range["qa"][0]["answer_index"] = 5;
    CHECK_THROWS_WITH_AS(validate_annotation(out_of_range, tideo),
                         doctest::Contains("AnswerOutOfRange"), Error);

    nlohmann::json dupes = good;
    dupes["qa"][0]["options"] = {"open door", "Open Door "};
    dupes["qa"][0]["answer_index"] = 0;
    try {
        validate_annotation(dupes, tideo);
        FAIL("expected DuplicateOptions");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DuplicateOptions);
    }

    nlohmann::json mismatch = good;
    mismatch["tideo_id"] = "other";
    try {
        validate_annotation(mismatch, tideo);
        FAIL("expected IdMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::IdMismatch);
    }
}

TEST_CASE("question type inferred from the leading interrogative") {
    CHECK(infer_question_type("What is shown?") == QuestionType::What);
    CHECK(infer_question_type("  which object appears first") == QuestionType::What);
    CHECK(infer_question_type("Why does the person stop") == QuestionType::Why);
    CHECK(infer_question_type("How is the bike fixed") == QuestionType::How);
    CHECK(infer_question_type("Does the video end indoors") == QuestionType::Other);
}

TEST_CASE("round-trip preserves every field and unknown keys") {
    nlohmann::json raw = tideo_json(7);
    raw["generator_note"] = "kept verbatim";
    Tideo tideo = validate_tideo(raw);
    nlohmann::json serialized = to_json(tideo);
    CHECK(serialized["generator_note"] == "kept verbatim");
    Tideo again = validate_tideo(serialized);
    CHECK(to_json(again) == serialized);
    CHECK(again.frames.size() == tideo.frames.size());
    for (std::size_t i = 0; i < again.frames.size(); ++i) {
        CHECK(again.frames[i].caption == tideo.frames[i].caption);
        CHECK(again.frames[i].object_captions == tideo.frames[i].object_captions);
    }
}

TEST_CASE("corpus stats: counts, mean, degenerate empty corpus") {
    CorpusShard shard;
    shard.tideos.push_back(validate_tideo(tideo_json(5, "a")));
    shard.tideos.push_back(validate_tideo(tideo_json(9, "b")));
    shard.annotations.resize(2);
    CorpusStats stats = corpus_stats(shard);
    CHECK(stats.tideo_count == 2);
    CHECK(stats.frame_count_total == 14);
    CHECK(stats.mean_frames_per_tideo == doctest::Approx(7.0).epsilon(1e-12));
    CHECK(stats.mean_defined);

    CorpusStats empty = corpus_stats(CorpusShard{});
    CHECK(empty.tideo_count == 0);
    CHECK(empty.mean_frames_per_tideo == 0.0);
    CHECK_FALSE(empty.mean_defined);
}

TEST_CASE("corpus stats are order-independent and partials merge") {
    std::mt19937 rng(7);
    std::vector<int> frame_counts;
    for (int i = 0; i < 40; ++i) frame_counts.push_back(5 + int(rng() % 11));

    auto build = [&](const std::vector<int>& order) {
        StatsAccumulator acc;
        for (std::size_t i = 0; i < order.size(); ++i) {
            acc.add(validate_tideo(tideo_json(order[i], "t" + std::to_string(i))));
        }
        return acc.finish();
    };
    std::vector<int> shuffled = frame_counts;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CorpusStats a = build(frame_counts);
    CorpusStats b = build(shuffled);
    CHECK(a.tideo_count == b.tideo_count);
    CHECK(a.frame_count_total == b.frame_count_total);
    CHECK(a.mean_frames_per_tideo == b.mean_frames_per_tideo);

    StatsAccumulator left, right, whole;
    for (int i = 0; i < 40; ++i) {
        Tideo tideo = validate_tideo(tideo_json(frame_counts[i], "t" + std::to_string(i)));
        (i < 20 ? left : right).add(tideo);
        whole.add(tideo);
    }
    left.merge(right);
    CorpusStats merged = left.finish();
    CorpusStats direct = whole.finish();
    CHECK(merged.tideo_count == direct.tideo_count);
    CHECK(merged.frame_count_total == direct.frame_count_total);
    CHECK(merged.mean_frames_per_tideo == direct.mean_frames_per_tideo);
}

TEST_CASE("mean_frames invariant holds on random corpora") {
    std::mt19937 rng(123);
    for (int trial = 0; trial < 20; ++trial) {
        StatsAccumulator acc;
        std::uint64_t total = 0;
        int count = 1 + int(rng() % 50);
        for (int i = 0; i < count; ++i) {
            int n = 5 + int(rng() % 11);
            total += std::uint64_t(n);
            acc.add(validate_tideo(tideo_json(n, "t" + std::to_string(i))));
        }
        CorpusStats stats = acc.finish();
        CHECK(std::abs(stats.mean_frames_per_tideo - double(total) / count) < 1e-9);
    }
}

TEST_CASE("save and reload a corpus shard from jsonl") {
    CorpusShard shard;
    for (int i = 0; i < 4; ++i) {
        shard.tideos.push_back(validate_tideo(tideo_json(5 + i, "t" + std::to_string(i))));
        nlohmann::json ann = {{"tideo_id", "t" + std::to_string(i)},
                              {"dense_description", "video " + std::to_string(i)},
                              {"qa", nlohmann::json::array({qa_json({"x", "y"}, 1)})}};
        shard.annotations.push_back(validate_annotation(ann, shard.tideos.back()));
    }
    std::string dir = "tideo_roundtrip_tmp";
    std::filesystem::create_directories(dir);
    save_corpus(shard, dir + "/tideos.jsonl", dir + "/annotations.jsonl");
    CorpusShard loaded = load_corpus(dir + "/tideos.jsonl", dir + "/annotations.jsonl");
    REQUIRE(loaded.tideos.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(to_json(loaded.tideos[i]) == to_json(shard.tideos[i]));
        CHECK(to_json(loaded.annotations[i]) == to_json(shard.annotations[i]));
    }
    std::filesystem::remove_all(dir);
}
