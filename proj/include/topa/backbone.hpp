#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "topa/linalg.hpp"

namespace topa {

/// Backbone context: instruction tokens, then the contiguous feature block
/// (already projected to the backbone width), then condition tokens.
struct BackboneInput {
    std::vector<int> pre_tokens;
    Matrix features;  // F x width; zero rows for blind evaluation
    std::vector<int> post_tokens;

    std::size_t context_length() const { return pre_tokens.size() + features.rows + post_tokens.size(); }
};

/// Frozen autoregressive language backbone as seen by the aligner and the
/// evaluation harness.
class Backbone {
public:
    virtual ~Backbone() = default;

    virtual std::size_t vocab_size() const = 0;
    virtual std::size_t width() const = 0;
    virtual std::string descriptor() const = 0;

    /// Hash over the frozen base weights; must not change across training.
    virtual std::string base_weight_hash() const = 0;

    struct Trace {
        virtual ~Trace() = default;
    };

    /// Returns |targets| rows of next-token logits, one per target position
    /// (row i predicts targets[i]). Pass `trace` to retain activations for
    /// a later backward() call.
    virtual Matrix score_targets(const BackboneInput& input, const std::vector<int>& targets,
                                 std::unique_ptr<Trace>* trace) const = 0;

    Matrix score_targets(const BackboneInput& input, const std::vector<int>& targets) const {
        return score_targets(input, targets, nullptr);
    }

    /// Logits for the token following [context][generated].
    virtual std::vector<double> next_logits(const BackboneInput& input,
                                            const std::vector<int>& generated) const = 0;

    /// Greedy decoding; stops at eos_id or after max_new tokens.
    std::vector<int> generate(const BackboneInput& input, std::size_t max_new, int eos_id) const;
};

/// Trainable adapter state: per-layer prompt embeddings attended through
/// zero-initialized tanh gates (one gate per head per layer).
struct AdapterParams {
    std::vector<Matrix> prompts;             // layers x (adapter_length x width)
    std::vector<std::vector<double>> gates;  // layers x heads

    void fill(double v);
    void axpy(double alpha, const AdapterParams& other);  // this += alpha * other
    std::size_t parameter_count() const;
};

using AdapterGrads = AdapterParams;  // same shape, gradient-valued

struct TinyTransformerConfig {
    std::size_t layers = 2;
    std::size_t width = 64;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
    std::size_t max_seq = 192;
    std::size_t adapter_length = 10;
    std::uint64_t seed = 1;
    std::vector<std::string> vocabulary;

    std::string to_descriptor() const;
    static TinyTransformerConfig from_descriptor(const std::string& descriptor);
};

/// Deterministic pre-LN causal transformer. Base weights are generated from
/// the config seed and stay frozen; only the adapter trains. Real
/// pre-trained backbones plug in behind the Backbone interface.
class TinyTransformer : public Backbone {
public:
    explicit TinyTransformer(TinyTransformerConfig config);

    std::size_t vocab_size() const override;
    std::size_t width() const override { return config_.width; }
    std::string descriptor() const override { return config_.to_descriptor(); }
    std::string base_weight_hash() const override;

    Matrix score_targets(const BackboneInput& input, const std::vector<int>& targets,
                         std::unique_ptr<Trace>* trace) const override;
    using Backbone::score_targets;

    std::vector<double> next_logits(const BackboneInput& input,
                                    const std::vector<int>& generated) const override;

    struct BackwardResult {
        Matrix features;        // d(loss)/d(feature rows), F x width
        AdapterGrads adapter;   // d(loss)/d(adapter)
    };

    /// dtarget_logits: |targets| x vocab gradient of the loss w.r.t. the
    /// logits returned by score_targets.
    BackwardResult backward(const Trace& trace, const Matrix& dtarget_logits) const;

    AdapterParams& adapter() { return adapter_; }
    const AdapterParams& adapter() const { return adapter_; }
    const TinyTransformerConfig& config() const { return config_; }

    AdapterParams zero_adapter_like() const;

private:
    struct LayerWeights {
        std::vector<double> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
        Matrix wq, wk, wv, wo;  // width x width
        Matrix w1;              // width x mlp
        Matrix w2;              // mlp x width
    };

    struct TraceImpl;

    Matrix compose_input(const BackboneInput& input, const std::vector<int>& targets) const;
    Matrix forward_hidden(const Matrix& input, TraceImpl* trace) const;

    TinyTransformerConfig config_;
    Matrix token_embedding_;     // vocab x width
    Matrix position_embedding_;  // max_seq x width
    std::vector<LayerWeights> layers_;
    std::vector<double> lnf_gain_, lnf_bias_;
    Matrix w_out_;  // vocab x width
    AdapterParams adapter_;
    std::string base_hash_;
};

}  // namespace topa
