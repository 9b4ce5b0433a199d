#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "topa/aligner.hpp"
#include "topa/error.hpp"
#include "topa/synthetic.hpp"

using namespace topa;

namespace {

// Backbone double with scripted logits per target position.
class FixedLogitsBackbone : public Backbone {
public:
    FixedLogitsBackbone(std::size_t vocab, std::vector<std::vector<double>> rows)
        : vocab_(vocab), rows_(std::move(rows)) {}

    std::size_t vocab_size() const override { return vocab_; }
    std::size_t width() const override { return 4; }
    std::string descriptor() const override { return "fixed_logits"; }
    std::string base_weight_hash() const override { return "fixed"; }

    Matrix score_targets(const BackboneInput&, const std::vector<int>& targets,
                         std::unique_ptr<Trace>*) const override {
        Matrix logits(targets.size(), vocab_);
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const auto& row = rows_[std::min(i, rows_.size() - 1)];
            std::copy(row.begin(), row.end(), logits.row(i));
        }
        return logits;
    }

    std::vector<double> next_logits(const BackboneInput&,
                                    const std::vector<int>& generated) const override {
        return rows_[std::min(generated.size(), rows_.size() - 1)];
    }

private:
    std::size_t vocab_;
    std::vector<std::vector<double>> rows_;
};

AlignmentExample bare_example(std::vector<int> targets) {
    AlignmentExample example;
    example.pre_tokens = {2, 3};
    example.target_tokens = std::move(targets);
    example.task = TaskType::OpenQA;
    return example;
}

ProjectionLayer dummy_projection() { return ProjectionLayer::init(4, 4, 1); }

TinyTransformerConfig trainer_backbone_config(const CorpusShard& corpus,
                                              std::size_t adapter_len = 4) {
    TinyTransformerConfig cfg;
    cfg.layers = 2;
    cfg.width = 32;
    cfg.heads = 4;
    cfg.mlp_ratio = 2;
    cfg.max_seq = 128;
    cfg.adapter_length = adapter_len;
    cfg.seed = 7;
    cfg.vocabulary = Tokenizer::build(vocabulary_texts(corpus)).vocabulary();
    return cfg;
}

SyntheticTaskSpec small_task(std::size_t count, std::uint64_t seed = 5) {
    SyntheticTaskSpec spec;
    spec.concepts = builtin_concepts(12);
    spec.tideo_count = count;
    spec.min_frames = 5;
    spec.max_frames = 6;
    spec.options_per_qa = 4;
    spec.rng_seed = seed;
    return spec;
}

EncoderPair small_pair() {
    SyntheticEncoderSpec enc;
    enc.concept_vocabulary = builtin_concepts(12);
    enc.dimension = 16;
    enc.rng_seed = 9;
    enc.noise_scale = 0.02;
    enc.gap_offset = make_gap_offset(16, 0.7, 21);
    return make_synthetic_pair(enc);
}

}  // namespace

TEST_CASE("lm_loss is zero for a backbone that puts probability one on targets") {
    // logit 1000 on the target swamps everything else
    std::vector<std::vector<double>> rows(3, std::vector<double>(8, 0.0));
    rows[0][2] = 1000.0;
    rows[1][5] = 1000.0;
    rows[2][1] = 1000.0;
    FixedLogitsBackbone backbone(8, rows);
    double loss = lm_loss_value(bare_example({2, 5, 1}), backbone, dummy_projection());
    CHECK(loss == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("lm_loss over a uniform backbone equals ln(vocab)") {
    std::vector<std::vector<double>> rows(4, std::vector<double>(16, 0.25));
    FixedLogitsBackbone backbone(16, rows);
    double loss = lm_loss_value(bare_example({0, 7, 3, 15}), backbone, dummy_projection());
    CHECK(loss == doctest::Approx(std::log(16.0)).epsilon(1e-12));
    CHECK(loss == doctest::Approx(2.772588722239781).epsilon(1e-10));
}

TEST_CASE("lm_loss matches the hand cross-entropy oracle on the 2x2 toy") {
    // logits [[2,0],[0,2]], targets [0,1] -> loss = log(1+e^-2)
    std::vector<std::vector<double>> rows = {{2.0, 0.0}, {0.0, 2.0}};
    FixedLogitsBackbone backbone(2, rows);
    double loss = lm_loss_value(bare_example({0, 1}), backbone,
                                ProjectionLayer::init(4, 4, 1));
    CHECK(loss == doctest::Approx(0.1269280110429725).epsilon(1e-12));
    CHECK(loss == doctest::Approx(oracles::naive_lm_loss(rows, {0, 1})).epsilon(1e-12));
}

TEST_CASE("lm_loss gradients w.r.t. the projection match central differences") {
    TinyTransformerConfig cfg;
    cfg.layers = 2;
    cfg.width = 32;
    cfg.heads = 4;
    cfg.mlp_ratio = 2;
    cfg.max_seq = 64;
    cfg.adapter_length = 3;
    cfg.seed = 3;
    cfg.vocabulary = {"<unk>", "<eos>", "a", "b", "c", "d", "e", "f", "g", "h"};
    TinyTransformer backbone(cfg);
    for (auto& gates : backbone.adapter().gates) {
        for (auto& g : gates) g = 0.15;
    }

    const std::size_t d = 8;
    ProjectionLayer projection = ProjectionLayer::init(32, d, 5);

    AlignmentExample example;
    example.pre_tokens = {2, 3, 4};
    example.post_tokens = {5, 6};
    example.target_tokens = {7, 8, 9, 1};
    example.task = TaskType::OpenQA;
    example.features.modality = Modality::Text;
    std::mt19937_64 rng(11);
    std::normal_distribution<double> normal(0.0, 0.5);
    for (int i = 0; i < 3; ++i) {
        FrameFeature f;
        f.vector.resize(d);
        for (auto& v : f.vector) v = normal(rng);
        example.features.frames.push_back(f);
    }

    LossResult result = lm_loss(example, backbone, projection, true);
    CHECK(std::isfinite(result.loss));

    const double h = 1e-4;
    int checked = 0;
    for (int trial = 0; trial < 120; ++trial) {
        bool do_bias = trial % 8 == 7;
        std::size_t r = rng() % projection.weight.rows;
        std::size_t c = rng() % projection.weight.cols;
        ProjectionLayer plus = projection, minus = projection;
        double analytic;
        if (do_bias) {
            plus.bias[r] += h;
            minus.bias[r] -= h;
            analytic = result.projection.bias[r];
        } else {
            plus.weight.at(r, c) += h;
            minus.weight.at(r, c) -= h;
            analytic = result.projection.weight.at(r, c);
        }
        double lp = lm_loss(example, backbone, plus, false).loss;
        double lm = lm_loss(example, backbone, minus, false).loss;
        double fd = (lp - lm) / (2.0 * h);
        if (std::abs(fd) < 1e-12 && std::abs(analytic) < 1e-12) continue;
        double rel = std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-10});
        CHECK(rel < 1e-4);
        ++checked;
    }
    CHECK(checked >= 100);
}

TEST_CASE("loss is averaged over target positions only") {
    // Same target logits with a longer prefix/post: loss unchanged because
    // prefix positions carry no loss terms.
    std::vector<std::vector<double>> rows = {{1.0, -1.0, 0.5}, {0.0, 2.0, -0.5}};
    FixedLogitsBackbone backbone(3, rows);
    AlignmentExample short_example = bare_example({0, 1});
    AlignmentExample long_example = bare_example({0, 1});
    long_example.pre_tokens = {0, 1, 2, 0, 1, 2};
    long_example.post_tokens = {1, 1};
    double a = lm_loss_value(short_example, backbone, dummy_projection());
    double b = lm_loss_value(long_example, backbone, dummy_projection());
    CHECK(a == doctest::Approx(b).epsilon(1e-15));
    CHECK(a == doctest::Approx(oracles::naive_lm_loss(rows, {0, 1})).epsilon(1e-12));
}

TEST_CASE("task sampler reproduces the 1:1:2 mixture within two points") {
    TaskSampler sampler({1.0, 1.0, 2.0}, 99);
    std::size_t counts[3] = {0, 0, 0};
    const std::size_t draws = 10000;
    for (std::size_t i = 0; i < draws; ++i) counts[static_cast<int>(sampler.next())] += 1;
    CHECK(std::abs(double(counts[0]) / draws - 0.25) < 0.02);
    CHECK(std::abs(double(counts[1]) / draws - 0.25) < 0.02);
    CHECK(std::abs(double(counts[2]) / draws - 0.50) < 0.02);

    CHECK_THROWS_AS(TaskSampler({1.0, 0.0, 2.0}, 1), Error);
}

TEST_CASE("render_example produces the specified targets per task") {
    CorpusShard corpus = build_synthetic_corpus(small_task(3));
    EncoderPair pair = small_pair();
    Tokenizer tokenizer = Tokenizer::build(vocabulary_texts(corpus));

    const Tideo& tideo = corpus.tideos[0];
    TideoAnnotation annotation = corpus.annotations[0];
    annotation.qa_items[0].answer_index = 1;  // force letter B

    AlignmentExample mc = render_example(tideo, annotation, TaskType::MultiChoice, pair, 10,
                                         tokenizer, 0);
    CHECK(mc.target_tokens.back() == Tokenizer::kEosId);
    std::vector<int> body(mc.target_tokens.begin(), mc.target_tokens.end() - 1);
    CHECK(tokenizer.decode(body) == "The correct choice is (B).");
    CHECK(mc.features.size() == 10);

    AlignmentExample summ = render_example(tideo, annotation, TaskType::Summarization, pair, 10,
                                           tokenizer, 0);
    std::vector<int> summ_body(summ.target_tokens.begin(), summ.target_tokens.end() - 1);
    CHECK(tokenizer.decode(summ_body) == annotation.dense_description);

    AlignmentExample qa = render_example(tideo, annotation, TaskType::OpenQA, pair, 10,
                                         tokenizer, 0);
    std::vector<int> qa_body(qa.target_tokens.begin(), qa.target_tokens.end() - 1);
    CHECK(tokenizer.decode(qa_body) ==
          annotation.qa_items[0].options[static_cast<std::size_t>(
              annotation.qa_items[0].answer_index)]);

    TideoAnnotation broken = annotation;
    broken.qa_items[0].question = "  ";
    try {
        render_example(tideo, broken, TaskType::OpenQA, pair, 10, tokenizer, 0);
        FAIL("expected MissingAnnotationField");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MissingAnnotationField);
    }
}

TEST_CASE("zero-epoch training leaves the initialization untouched") {
    CorpusShard corpus = build_synthetic_corpus(small_task(4));
    EncoderPair pair = small_pair();
    TinyTransformer backbone(trainer_backbone_config(corpus));
    ProjectionLayer projection = ProjectionLayer::init(32, 16, 2);

    AdapterParams before = backbone.adapter();
    ProjectionLayer proj_before = projection;
    TrainerConfig config;
    config.epochs = 0;
    config.target_frames = 6;
    TrainingReport report = train(corpus, config, backbone, projection, pair);
    CHECK(report.total_steps == 0);
    for (std::size_t l = 0; l < before.prompts.size(); ++l) {
        CHECK(before.prompts[l].data == backbone.adapter().prompts[l].data);
        CHECK(before.gates[l] == backbone.adapter().gates[l]);
    }
    CHECK(proj_before.weight.data == projection.weight.data);
}

TEST_CASE("training is deterministic and keeps the frozen base intact") {
    CorpusShard corpus = build_synthetic_corpus(small_task(8));
    EncoderPair pair = small_pair();
    TrainerConfig config;
    config.epochs = 2;
    config.target_frames = 6;
    config.batch_size = 4;
    config.rng_seed = 77;
    config.base_lr = 4e-2;

    auto run = [&](std::vector<double>* gates_out) {
        TinyTransformer backbone(trainer_backbone_config(corpus));
        ProjectionLayer projection = ProjectionLayer::init(32, 16, 2);
        std::string hash_before = backbone.base_weight_hash();
        TrainingReport report = train(corpus, config, backbone, projection, pair);
        CHECK(backbone.base_weight_hash() == hash_before);
        CHECK(report.total_steps > 0);
        Checkpoint c = snapshot(backbone, projection, "fp", pair.descriptor, report.total_steps);
        if (gates_out) *gates_out = c.adapter.gates[0];
        return c;
    };
    Checkpoint a = run(nullptr);
    Checkpoint b = run(nullptr);
    for (std::size_t l = 0; l < a.adapter.prompts.size(); ++l) {
        CHECK(a.adapter.prompts[l].data == b.adapter.prompts[l].data);
        CHECK(a.adapter.gates[l] == b.adapter.gates[l]);
    }
    CHECK(a.projection.weight.data == b.projection.weight.data);
    CHECK(a.projection.bias == b.projection.bias);
}

TEST_CASE("smoothed training loss decreases over the first three epochs") {
    CorpusShard corpus = build_synthetic_corpus(small_task(48, 11));
    EncoderPair pair = small_pair();
    TinyTransformer backbone(trainer_backbone_config(corpus));
    ProjectionLayer projection = ProjectionLayer::init(32, 16, 2);

    TrainerConfig config;
    config.epochs = 3;
    config.target_frames = 6;
    config.batch_size = 4;
    config.base_lr = 0.16;
    config.rng_seed = 3;
    TrainingReport report = train(corpus, config, backbone, projection, pair);
    REQUIRE(report.epoch_mean_loss.size() == 3);
    CHECK(report.epoch_mean_loss[1] < report.epoch_mean_loss[0]);
    CHECK(report.epoch_mean_loss[2] < report.epoch_mean_loss[1]);
}

TEST_CASE("checkpoints round-trip byte-identically and guard the backbone") {
    CorpusShard corpus = build_synthetic_corpus(small_task(4));
    TinyTransformer backbone(trainer_backbone_config(corpus));
    ProjectionLayer projection = ProjectionLayer::init(32, 16, 13);
    backbone.adapter().gates[0][1] = 0.25;

    std::filesystem::create_directories("ckpt_tmp");
    Checkpoint original = snapshot(backbone, projection, "fingerprint123", "encoder-x", 42);
    save_checkpoint(original, "ckpt_tmp/a.ckpt");
    Checkpoint loaded = load_checkpoint("ckpt_tmp/a.ckpt");
    save_checkpoint(loaded, "ckpt_tmp/b.ckpt");

    std::ifstream fa("ckpt_tmp/a.ckpt", std::ios::binary);
    std::ifstream fb("ckpt_tmp/b.ckpt", std::ios::binary);
    std::string bytes_a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string bytes_b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(bytes_a == bytes_b);
    CHECK(loaded.step_count == 42);
    CHECK(loaded.encoder_descriptor == "encoder-x");

    TinyTransformer fresh(trainer_backbone_config(corpus));
    ProjectionLayer fresh_projection = ProjectionLayer::init(32, 16, 99);
    restore_checkpoint(loaded, fresh, fresh_projection);
    CHECK(fresh.adapter().gates[0][1] == doctest::Approx(0.25));
    CHECK(fresh_projection.weight.data == projection.weight.data);

    TinyTransformerConfig other_cfg = trainer_backbone_config(corpus, 6);
    TinyTransformer other(other_cfg);
    try {
        restore_checkpoint(loaded, other, fresh_projection);
        FAIL("expected FingerprintMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::FingerprintMismatch);
    }
    std::filesystem::remove_all("ckpt_tmp");
}

TEST_CASE("finetune subsets are deterministic and ratio=1 uses the full set") {
    CorpusShard corpus = build_synthetic_corpus(small_task(10));
    EncoderPair pair = small_pair();
    std::vector<SequenceRepresentation> videos;
    std::vector<TideoAnnotation> annotations;
    synthetic_video_dataset(corpus, pair, &videos, &annotations);

    TrainerConfig config;
    config.epochs = 1;
    config.target_frames = 6;
    config.batch_size = 4;
    config.rng_seed = 5;
    config.base_lr = 2e-2;

    auto run = [&](double ratio) {
        TinyTransformer backbone(trainer_backbone_config(corpus));
        ProjectionLayer projection = ProjectionLayer::init(32, 16, 2);
        TrainerConfig c = config;
        c.finetune_data_ratio = ratio;
        TrainingReport report = finetune(videos, annotations, c, backbone, projection);
        return std::make_pair(report, snapshot(backbone, projection, "fp", pair.descriptor, 0));
    };

    auto [report_full, ckpt_full] = run(1.0);
    std::size_t examples_full = 0;
    for (auto& s : report_full.steps) (void)s, ++examples_full;
    CHECK(report_full.total_steps == (10 + 3) / 4);  // ceil(10/4)

    auto [report_sub_a, ckpt_a] = run(0.3);
    auto [report_sub_b, ckpt_b] = run(0.3);
    CHECK(report_sub_a.total_steps == 1);  // 3 examples, batch 4 -> one flush
    for (std::size_t l = 0; l < ckpt_a.adapter.prompts.size(); ++l) {
        CHECK(ckpt_a.adapter.prompts[l].data == ckpt_b.adapter.prompts[l].data);
    }
    CHECK(ckpt_a.projection.weight.data == ckpt_b.projection.weight.data);
}
