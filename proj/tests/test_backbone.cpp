#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "topa/backbone.hpp"
#include "topa/error.hpp"
#include "topa/tokenizer.hpp"

using namespace topa;

namespace {

TinyTransformerConfig tiny_config(std::size_t adapter_len = 3, std::uint64_t seed = 11) {
    TinyTransformerConfig cfg;
    cfg.layers = 2;
    cfg.width = 32;
    cfg.heads = 4;
    cfg.mlp_ratio = 2;
    cfg.max_seq = 64;
    cfg.adapter_length = adapter_len;
    cfg.seed = seed;
    cfg.vocabulary = {"<unk>", "<eos>", "a", "b", "c", "d", "e", "f",
                      "g",     "h",     "i", "j", "k", "l", "m", "n"};
    return cfg;
}

BackboneInput make_input(std::size_t pre, std::size_t feat, std::size_t post, std::size_t width,
                         std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.5);
    BackboneInput input;
    for (std::size_t i = 0; i < pre; ++i) input.pre_tokens.push_back(2 + int(rng() % 14));
    input.features = Matrix(feat, width);
    for (auto& v : input.features.data) v = normal(rng);
    for (std::size_t i = 0; i < post; ++i) input.post_tokens.push_back(2 + int(rng() % 14));
    return input;
}

std::vector<int> make_targets(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<int> t;
    for (std::size_t i = 0; i < n; ++i) t.push_back(2 + int(rng() % 14));
    return t;
}

// Mean cross entropy straight off score_targets, plus the logit gradient.
double ce_loss(const Matrix& logits, const std::vector<int>& targets, Matrix* dlogits) {
    double total = 0.0;
    if (dlogits) *dlogits = Matrix(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* row = logits.row(i);
        double max_val = row[0];
        for (std::size_t v = 1; v < logits.cols; ++v) max_val = std::max(max_val, row[v]);
        double denom = 0.0;
        for (std::size_t v = 0; v < logits.cols; ++v) denom += std::exp(row[v] - max_val);
        total += -(row[targets[i]] - max_val - std::log(denom));
        if (dlogits) {
            double* d = dlogits->row(i);
            for (std::size_t v = 0; v < logits.cols; ++v) {
                d[v] = std::exp(row[v] - max_val) / denom / double(logits.rows);
            }
            d[targets[i]] -= 1.0 / double(logits.rows);
        }
    }
    return total / double(logits.rows);
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace

TEST_CASE("construction is deterministic; adapter does not enter the base hash") {
    TinyTransformer a(tiny_config());
    TinyTransformer b(tiny_config());
    CHECK(a.base_weight_hash() == b.base_weight_hash());

    BackboneInput input = make_input(3, 2, 2, 32, 5);
    std::vector<int> targets = make_targets(3, 7);
    Matrix la = a.score_targets(input, targets);
    Matrix lb = b.score_targets(input, targets);
    CHECK(la.data == lb.data);

    // mutating the trainable adapter must not move the frozen hash
    b.adapter().prompts[0].fill(3.0);
    b.adapter().gates[1][2] = 0.7;
    CHECK(a.base_weight_hash() == b.base_weight_hash());
}

TEST_CASE("zero-init gates make the adapter silent at initialization") {
    TinyTransformer a(tiny_config());
    TinyTransformer b(tiny_config());
    b.adapter().prompts[0].fill(9.0);  // gates are still zero
    b.adapter().prompts[1].fill(-4.0);

    BackboneInput input = make_input(4, 0, 3, 32, 9);
    std::vector<int> targets = make_targets(2, 3);
    CHECK(a.score_targets(input, targets).data == b.score_targets(input, targets).data);

    // opening a gate changes the output
    b.adapter().gates[0][0] = 0.5;
    CHECK(a.score_targets(input, targets).data != b.score_targets(input, targets).data);
}

TEST_CASE("causal masking: later tokens cannot influence earlier logits") {
    TinyTransformer model(tiny_config());
    BackboneInput input = make_input(3, 2, 2, 32, 21);
    std::vector<int> targets = {4, 5, 6, 7};
    Matrix base = model.score_targets(input, targets);

    std::vector<int> patched = targets;
    patched[3] = 12;  // change the last target token
    Matrix after = model.score_targets(input, patched);
    for (std::size_t i = 0; i < base.rows; ++i) {
        for (std::size_t v = 0; v < base.cols; ++v) {
            CHECK(base.at(i, v) == after.at(i, v));
        }
    }
}

TEST_CASE("score_targets rows agree with stepwise next_logits") {
    TinyTransformer model(tiny_config());
    model.adapter().gates[0][1] = 0.3;  // exercise the adapter path too
    BackboneInput input = make_input(3, 2, 1, 32, 33);
    std::vector<int> targets = make_targets(4, 17);

    Matrix rows = model.score_targets(input, targets);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        std::vector<int> generated(targets.begin(), targets.begin() + i);
        std::vector<double> step = model.next_logits(input, generated);
        for (std::size_t v = 0; v < step.size(); ++v) {
            CHECK(rows.at(i, v) == doctest::Approx(step[v]).epsilon(1e-12));
        }
    }
}

TEST_CASE("backward gradients w.r.t. feature rows match central differences") {
    TinyTransformer model(tiny_config());
    model.adapter().gates[0][0] = 0.2;
    model.adapter().gates[1][3] = -0.4;

    BackboneInput input = make_input(3, 3, 2, 32, 55);
    std::vector<int> targets = make_targets(3, 19);

    std::unique_ptr<Backbone::Trace> trace;
    Matrix logits = model.score_targets(input, targets, &trace);
    Matrix dlogits;
    ce_loss(logits, targets, &dlogits);
    auto back = model.backward(*trace, dlogits);

    const double h = 1e-5;
    std::mt19937_64 rng(99);
    int checked = 0;
    for (int trial = 0; trial < 60; ++trial) {
        std::size_t i = rng() % input.features.rows;
        std::size_t k = rng() % input.features.cols;
        BackboneInput plus = input, minus = input;
        plus.features.at(i, k) += h;
        minus.features.at(i, k) -= h;
        double lp = ce_loss(model.score_targets(plus, targets), targets, nullptr);
        double lm = ce_loss(model.score_targets(minus, targets), targets, nullptr);
        double fd = (lp - lm) / (2.0 * h);
        double an = back.features.at(i, k);
        if (std::abs(fd) < 1e-10 && std::abs(an) < 1e-10) continue;
        CHECK(rel_err(fd, an) < 1e-4);
        ++checked;
    }
    CHECK(checked > 30);
}

TEST_CASE("backward gradients w.r.t. adapter prompts and gates match central differences") {
    TinyTransformer model(tiny_config());
    // move gates off zero so prompt gradients are visible
    for (auto& gates : model.adapter().gates) {
        for (std::size_t hh = 0; hh < gates.size(); ++hh) gates[hh] = 0.1 + 0.05 * double(hh);
    }

    BackboneInput input = make_input(4, 2, 2, 32, 77);
    std::vector<int> targets = make_targets(3, 23);

    std::unique_ptr<Backbone::Trace> trace;
    Matrix logits = model.score_targets(input, targets, &trace);
    Matrix dlogits;
    ce_loss(logits, targets, &dlogits);
    auto back = model.backward(*trace, dlogits);

    const double h = 1e-5;
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 40; ++trial) {
        std::size_t l = rng() % 2;
        std::size_t i = rng() % model.adapter().prompts[l].rows;
        std::size_t k = rng() % model.adapter().prompts[l].cols;
        double saved = model.adapter().prompts[l].at(i, k);
        model.adapter().prompts[l].at(i, k) = saved + h;
        double lp = ce_loss(model.score_targets(input, targets), targets, nullptr);
        model.adapter().prompts[l].at(i, k) = saved - h;
        double lm = ce_loss(model.score_targets(input, targets), targets, nullptr);
        model.adapter().prompts[l].at(i, k) = saved;
        double fd = (lp - lm) / (2.0 * h);
        double an = back.adapter.prompts[l].at(i, k);
        if (std::abs(fd) < 1e-10 && std::abs(an) < 1e-10) continue;
        CHECK(rel_err(fd, an) < 1e-4);
    }

    for (std::size_t l = 0; l < 2; ++l) {
        for (std::size_t hh = 0; hh < 4; ++hh) {
            double saved = model.adapter().gates[l][hh];
            model.adapter().gates[l][hh] = saved + h;
            double lp = ce_loss(model.score_targets(input, targets), targets, nullptr);
            model.adapter().gates[l][hh] = saved - h;
            double lm = ce_loss(model.score_targets(input, targets), targets, nullptr);
            model.adapter().gates[l][hh] = saved;
            double fd = (lp - lm) / (2.0 * h);
            double an = back.adapter.gates[l][hh];
            if (std::abs(fd) < 1e-10 && std::abs(an) < 1e-10) continue;
            CHECK(rel_err(fd, an) < 1e-4);
        }
    }
}

TEST_CASE("generate is greedy, stops at eos, respects the cap") {
    TinyTransformer model(tiny_config());
    BackboneInput input = make_input(3, 0, 2, 32, 41);
    std::vector<int> out = model.generate(input, 8, Tokenizer::kEosId);
    CHECK(out.size() <= 8);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::vector<int> generated(out.begin(), out.begin() + i);
        std::vector<double> logits = model.next_logits(input, generated);
        int best = 0;
        for (std::size_t v = 1; v < logits.size(); ++v) {
            if (logits[v] > logits[best]) best = int(v);
        }
        CHECK(out[i] == best);
    }
}

TEST_CASE("input guards: bad token ids, width mismatch, oversize sequence") {
    TinyTransformer model(tiny_config());
    BackboneInput input = make_input(2, 1, 1, 32, 3);

    BackboneInput bad_tok = input;
    bad_tok.pre_tokens[0] = 99;
    CHECK_THROWS_AS(model.score_targets(bad_tok, {2}), Error);

    BackboneInput bad_width = input;
    bad_width.features = Matrix(1, 16);
    CHECK_THROWS_AS(model.score_targets(bad_width, {2}), Error);

    BackboneInput huge = input;
    huge.pre_tokens.assign(100, 2);
    CHECK_THROWS_AS(model.score_targets(huge, {2}), Error);
}

TEST_CASE("descriptor round-trips through config parsing") {
    TinyTransformerConfig cfg = tiny_config(5, 123);
    std::string descriptor = cfg.to_descriptor();
    TinyTransformerConfig back = TinyTransformerConfig::from_descriptor(descriptor);
    CHECK(back.layers == cfg.layers);
    CHECK(back.width == cfg.width);
    CHECK(back.adapter_length == cfg.adapter_length);
    CHECK(back.seed == cfg.seed);
    CHECK(back.vocabulary == cfg.vocabulary);
    TinyTransformer a((TinyTransformerConfig(cfg)));
    TinyTransformer b(back);
    CHECK(a.base_weight_hash() == b.base_weight_hash());
}

TEST_CASE("tokenizer: split, ids, decode, determinism") {
    Tokenizer tok = Tokenizer::build({"What is shown? The apple.", "a (B) choice: yes!"});
    CHECK(tok.token_id("<unk>") == Tokenizer::kUnkId);
    CHECK(tok.token_id("<eos>") == Tokenizer::kEosId);
    CHECK(tok.token_id("apple") != Tokenizer::kUnkId);
    CHECK(tok.token_id("notinvocab") == Tokenizer::kUnkId);

    auto pieces = Tokenizer::split("The correct choice is (B).");
    CHECK(pieces == std::vector<std::string>{"The", "correct", "choice", "is", "(", "B", ")", "."});

    Tokenizer again = Tokenizer::build({"a (B) choice: yes!", "What is shown? The apple."});
    CHECK(tok.vocabulary() == again.vocabulary());

    std::vector<int> ids = tok.encode("The apple");
    std::string text = tok.decode(ids);
    CHECK(text == "The apple");
}
