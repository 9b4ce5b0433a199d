#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "topa/backbone.hpp"
#include "topa/encoder.hpp"
#include "topa/templates.hpp"
#include "topa/tideo.hpp"
#include "topa/tokenizer.hpp"

namespace topa {

/// Linear map from encoder space (d) into the backbone width; the only
/// trainable parameter besides the adapter.
struct ProjectionLayer {
    Matrix weight;             // width x d
    std::vector<double> bias;  // width

    static ProjectionLayer init(std::size_t width, std::size_t input_dim, std::uint64_t seed);

    std::size_t input_dim() const { return weight.cols; }
    std::size_t output_dim() const { return weight.rows; }

    /// Projects every frame of the sequence; rows match the frame order.
    Matrix apply(const SequenceRepresentation& seq) const;
};

struct ProjectionGrads {
    Matrix weight;
    std::vector<double> bias;
};

/// One rendered training example. The loss is defined over target_tokens
/// only; prefix/feature positions carry no loss by construction.
struct AlignmentExample {
    SequenceRepresentation features;
    std::vector<int> pre_tokens;
    std::vector<int> post_tokens;
    std::vector<int> target_tokens;  // ends with the eos token
    TaskType task = TaskType::Summarization;
};

/// Renders tideo + annotation into an example for the given task.
/// qa_index selects the QA item for the two QA tasks.
AlignmentExample render_example(const Tideo& tideo, const TideoAnnotation& annotation,
                                TaskType task, const EncoderPair& pair,
                                std::size_t target_frames, const Tokenizer& tokenizer,
                                std::size_t qa_index = 0);

struct LossResult {
    double loss = 0.0;
    AdapterGrads adapter;
    ProjectionGrads projection;
};

/// Mean next-token cross entropy over the target tokens with gradients for
/// the trainable parameters (adapter + projection). Pass compute_grads =
/// false for evaluation-only loss.
LossResult lm_loss(const AlignmentExample& example, TinyTransformer& backbone,
                   const ProjectionLayer& projection, bool compute_grads = true);

/// Loss value against any Backbone implementation (no gradients).
double lm_loss_value(const AlignmentExample& example, const Backbone& backbone,
                     const ProjectionLayer& projection);

struct TrainerConfig {
    std::size_t target_frames = 10;
    std::array<double, 3> task_ratio{1.0, 1.0, 2.0};  // summarization : open_qa : multi_choice
    double base_lr = 5e-3;
    double weight_decay = 0.1;
    std::size_t warmup_epochs = 1;
    std::size_t epochs = 3;
    std::size_t batch_size = 8;
    std::size_t grad_accum = 1;
    std::uint64_t rng_seed = 0;
    std::size_t adapter_length = 50;
    double finetune_data_ratio = 1.0;

    std::size_t effective_batch() const { return batch_size * grad_accum; }
    /// Appendix-style rule: actual lr = base_lr * effective_batch / 256.
    double peak_lr() const { return base_lr * double(effective_batch()) / 256.0; }
};

/// Samples task indices 0..2 from the configured ratio.
class TaskSampler {
public:
    TaskSampler(const std::array<double, 3>& ratio, std::uint64_t seed);
    TaskType next();

private:
    std::array<double, 3> cumulative_;
    std::mt19937_64 rng_;
};

struct StepLog {
    std::size_t epoch = 0;
    std::size_t step = 0;
    TaskType task = TaskType::Summarization;
    double loss = 0.0;
    double lr = 0.0;
};

struct TrainingReport {
    std::vector<StepLog> steps;
    std::vector<double> epoch_mean_loss;
    std::size_t total_steps = 0;
};

void write_report_jsonl(const TrainingReport& report, const std::string& path);

struct Checkpoint {
    std::string config_fingerprint;
    std::string backbone_descriptor;
    std::string encoder_descriptor;
    std::uint64_t step_count = 0;
    AdapterParams adapter;
    ProjectionLayer projection;
};

Checkpoint snapshot(const TinyTransformer& backbone, const ProjectionLayer& projection,
                    const std::string& config_fingerprint, const std::string& encoder_descriptor,
                    std::uint64_t step_count);

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Installs checkpoint tensors into the backbone adapter + projection.
void restore_checkpoint(const Checkpoint& checkpoint, TinyTransformer& backbone,
                        ProjectionLayer& projection);

/// Text-only pre-alignment on a validated corpus. Mutates the backbone
/// adapter and the projection in place; the frozen base is untouched.
/// Throws DivergenceDetected with the last epoch-end state restored when
/// the loss goes non-finite.
TrainingReport train(const CorpusShard& corpus, const TrainerConfig& config,
                     TinyTransformer& backbone, ProjectionLayer& projection,
                     const EncoderPair& pair);

/// Supervised finetuning on real (image-modality) feature sequences; the
/// memory projection is not applied. Optimizer state starts fresh.
TrainingReport finetune(const std::vector<SequenceRepresentation>& videos,
                        const std::vector<TideoAnnotation>& annotations,
                        const TrainerConfig& config, TinyTransformer& backbone,
                        ProjectionLayer& projection);

}  // namespace topa
