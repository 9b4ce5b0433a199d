#include "topa/aligner.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "topa/error.hpp"

namespace topa {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// AdamW with decoupled weight decay; decay applies to matrices (adapter
// prompts, projection weight), not to gates or the projection bias.
struct AdamW {
    AdapterParams m_adapter, v_adapter;
    Matrix m_weight, v_weight;
    std::vector<double> m_bias, v_bias;
    std::size_t t = 0;

    AdamW(const TinyTransformer& backbone, const ProjectionLayer& projection) {
        m_adapter = backbone.zero_adapter_like();
        v_adapter = backbone.zero_adapter_like();
        m_weight = Matrix(projection.weight.rows, projection.weight.cols);
        v_weight = Matrix(projection.weight.rows, projection.weight.cols);
        m_bias.assign(projection.bias.size(), 0.0);
        v_bias.assign(projection.bias.size(), 0.0);
    }

    void update(double& w, double g, double& m, double& v, double lr, double wd,
                double bias1, double bias2) {
        m = kBeta1 * m + (1.0 - kBeta1) * g;
        v = kBeta2 * v + (1.0 - kBeta2) * g * g;
        double mhat = m / bias1;
        double vhat = v / bias2;
        w -= lr * (mhat / (std::sqrt(vhat) + kAdamEps) + wd * w);
    }

    void step(double lr, double weight_decay, TinyTransformer& backbone,
              ProjectionLayer& projection, const AdapterGrads& ga, const ProjectionGrads& gp) {
        ++t;
        double bias1 = 1.0 - std::pow(kBeta1, double(t));
        double bias2 = 1.0 - std::pow(kBeta2, double(t));
        AdapterParams& adapter = backbone.adapter();
        for (std::size_t l = 0; l < adapter.prompts.size(); ++l) {
            for (std::size_t i = 0; i < adapter.prompts[l].data.size(); ++i) {
                update(adapter.prompts[l].data[i], ga.prompts[l].data[i],
                       m_adapter.prompts[l].data[i], v_adapter.prompts[l].data[i], lr,
                       weight_decay, bias1, bias2);
            }
            for (std::size_t h = 0; h < adapter.gates[l].size(); ++h) {
                update(adapter.gates[l][h], ga.gates[l][h], m_adapter.gates[l][h],
                       v_adapter.gates[l][h], lr, 0.0, bias1, bias2);
            }
        }
        for (std::size_t i = 0; i < projection.weight.data.size(); ++i) {
            update(projection.weight.data[i], gp.weight.data[i], m_weight.data[i],
                   v_weight.data[i], lr, weight_decay, bias1, bias2);
        }
        for (std::size_t i = 0; i < projection.bias.size(); ++i) {
            update(projection.bias[i], gp.bias[i], m_bias[i], v_bias[i], lr, 0.0, bias1, bias2);
        }
    }
};

void accumulate(AdapterGrads& acc, const AdapterGrads& g) {
    for (std::size_t l = 0; l < acc.prompts.size(); ++l) {
        for (std::size_t i = 0; i < acc.prompts[l].data.size(); ++i) {
            acc.prompts[l].data[i] += g.prompts[l].data[i];
        }
        for (std::size_t h = 0; h < acc.gates[l].size(); ++h) acc.gates[l][h] += g.gates[l][h];
    }
}

void accumulate(ProjectionGrads& acc, const ProjectionGrads& g) {
    for (std::size_t i = 0; i < acc.weight.data.size(); ++i) acc.weight.data[i] += g.weight.data[i];
    for (std::size_t i = 0; i < acc.bias.size(); ++i) acc.bias[i] += g.bias[i];
}

void scale(AdapterGrads& g, double s) {
    for (auto& p : g.prompts) {
        for (auto& v : p.data) v *= s;
    }
    for (auto& gate : g.gates) {
        for (auto& v : gate) v *= s;
    }
}

void scale(ProjectionGrads& g, double s) {
    for (auto& v : g.weight.data) v *= s;
    for (auto& v : g.bias) v *= s;
}

AdapterGrads zero_adapter_grads(const TinyTransformer& backbone) {
    AdapterParams z = backbone.zero_adapter_like();
    AdapterGrads g;
    g.prompts = std::move(z.prompts);
    g.gates = std::move(z.gates);
    return g;
}

ProjectionGrads zero_projection_grads(const ProjectionLayer& projection) {
    ProjectionGrads g;
    g.weight = Matrix(projection.weight.rows, projection.weight.cols);
    g.bias.assign(projection.bias.size(), 0.0);
    return g;
}

struct Schedule {
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 0;
    double peak = 0.0;

    double lr(std::size_t step) const {  // step is 0-based
        if (total_steps == 0) return peak;
        if (warmup_steps > 0 && step < warmup_steps) {
            return peak * double(step + 1) / double(warmup_steps);
        }
        if (total_steps <= warmup_steps) return peak;
        double progress = double(step - warmup_steps) / double(total_steps - warmup_steps);
        return peak * 0.5 * (1.0 + std::cos(M_PI * progress));
    }
};

RenderedPrompt render_prompt_for(const TideoAnnotation& annotation, TaskType task,
                                 std::size_t qa_index) {
    switch (task) {
        case TaskType::Summarization:
            if (normalize_text(annotation.dense_description).empty()) {
                throw Error(ErrorCode::MissingAnnotationField,
                            "dense_description missing for '" + annotation.tideo_id + "'");
            }
            return PromptTemplateSet::summarization(annotation.dense_description);
        case TaskType::OpenQA:
        case TaskType::MultiChoice: {
            if (annotation.qa_items.empty() || qa_index >= annotation.qa_items.size()) {
                throw Error(ErrorCode::MissingAnnotationField,
                            "no QA item " + std::to_string(qa_index) + " for '" +
                                annotation.tideo_id + "'");
            }
            const QAItem& item = annotation.qa_items[qa_index];
            if (normalize_text(item.question).empty()) {
                throw Error(ErrorCode::MissingAnnotationField,
                            "empty question for '" + annotation.tideo_id + "'");
            }
            return task == TaskType::OpenQA ? PromptTemplateSet::open_qa(item)
                                            : PromptTemplateSet::multi_choice(item);
        }
    }
    throw Error(ErrorCode::MissingAnnotationField, "unknown task");
}

AlignmentExample finish_example(SequenceRepresentation features, const RenderedPrompt& prompt,
                                const Tokenizer& tokenizer) {
    AlignmentExample example;
    example.features = std::move(features);
    example.task = prompt.task;
    example.pre_tokens = tokenizer.encode(prompt.pre_video);
    example.post_tokens = tokenizer.encode(prompt.post_video);
    example.target_tokens = tokenizer.encode(prompt.target);
    if (example.target_tokens.empty()) {
        throw Error(ErrorCode::MissingAnnotationField, "empty target text");
    }
    example.target_tokens.push_back(Tokenizer::kEosId);
    return example;
}

Matrix features_to_matrix(const SequenceRepresentation& seq) {
    Matrix m(seq.frames.size(), seq.dimension());
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
        std::copy(seq.frames[i].vector.begin(), seq.frames[i].vector.end(), m.row(i));
    }
    return m;
}

struct LossCore {
    double loss = 0.0;
    Matrix dlogits;  // |t| x V, d(loss)/d(logits)
};

LossCore cross_entropy(const Matrix& logits, const std::vector<int>& targets, bool want_grads) {
    LossCore out;
    const std::size_t t_len = targets.size();
    const std::size_t vocab = logits.cols;
    if (want_grads) out.dlogits = Matrix(t_len, vocab);
    double total = 0.0;
    for (std::size_t i = 0; i < t_len; ++i) {
        const double* row = logits.row(i);
        double max_val = row[0];
        for (std::size_t v = 1; v < vocab; ++v) max_val = std::max(max_val, row[v]);
        double denom = 0.0;
        for (std::size_t v = 0; v < vocab; ++v) denom += std::exp(row[v] - max_val);
        double log_denom = std::log(denom);
        int target = targets[i];
        double nll = -(row[target] - max_val - log_denom);
        if (!std::isfinite(nll)) {
            throw Error(ErrorCode::NonFiniteLoss,
                        "non-finite loss at target position " + std::to_string(i));
        }
        total += nll;
        if (want_grads) {
            double* d = out.dlogits.row(i);
            for (std::size_t v = 0; v < vocab; ++v) {
                double p = std::exp(row[v] - max_val) / denom;
                d[v] = p / double(t_len);
            }
            d[target] -= 1.0 / double(t_len);
        }
    }
    out.loss = total / double(t_len);
    return out;
}

}  // namespace

ProjectionLayer ProjectionLayer::init(std::size_t width, std::size_t input_dim,
                                      std::uint64_t seed) {
    ProjectionLayer p;
    p.weight = Matrix(width, input_dim);
    p.bias.assign(width, 0.0);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(input_dim)));
    for (auto& v : p.weight.data) v = normal(rng);
    return p;
}

Matrix ProjectionLayer::apply(const SequenceRepresentation& seq) const {
    if (!seq.frames.empty() && seq.dimension() != weight.cols) {
        throw Error(ErrorCode::DimensionMismatch,
                    "projection expects width " + std::to_string(weight.cols) + ", got " +
                        std::to_string(seq.dimension()));
    }
    Matrix out(seq.frames.size(), weight.rows);
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
        const auto& f = seq.frames[i].vector;
        double* y = out.row(i);
        for (std::size_t e = 0; e < weight.rows; ++e) {
            y[e] = bias[e] + dot(weight.row(e), f.data(), weight.cols);
        }
    }
    return out;
}

AlignmentExample render_example(const Tideo& tideo, const TideoAnnotation& annotation,
                                TaskType task, const EncoderPair& pair,
                                std::size_t target_frames, const Tokenizer& tokenizer,
                                std::size_t qa_index) {
    if (annotation.tideo_id != tideo.id) {
        throw Error(ErrorCode::IdMismatch,
                    "annotation '" + annotation.tideo_id + "' vs tideo '" + tideo.id + "'");
    }
    RenderedPrompt prompt = render_prompt_for(annotation, task, qa_index);
    return finish_example(encode_tideo(tideo, pair, target_frames), prompt, tokenizer);
}

LossResult lm_loss(const AlignmentExample& example, TinyTransformer& backbone,
                   const ProjectionLayer& projection, bool compute_grads) {
    BackboneInput input;
    input.pre_tokens = example.pre_tokens;
    input.post_tokens = example.post_tokens;
    input.features = projection.apply(example.features);

    std::unique_ptr<Backbone::Trace> trace;
    Matrix logits =
        backbone.score_targets(input, example.target_tokens, compute_grads ? &trace : nullptr);
    LossCore core = cross_entropy(logits, example.target_tokens, compute_grads);

    LossResult result;
    result.loss = core.loss;
    if (!compute_grads) return result;

    TinyTransformer::BackwardResult back = backbone.backward(*trace, core.dlogits);
    result.adapter = std::move(back.adapter);
    result.projection = zero_projection_grads(projection);
    // Chain through the projection: y_i = W f_i + b.
    for (std::size_t i = 0; i < back.features.rows; ++i) {
        const double* dy = back.features.row(i);
        const auto& f = example.features.frames[i].vector;
        for (std::size_t e = 0; e < projection.weight.rows; ++e) {
            double* wrow = result.projection.weight.row(e);
            for (std::size_t k = 0; k < projection.weight.cols; ++k) {
                wrow[k] += dy[e] * f[k];
            }
            result.projection.bias[e] += dy[e];
        }
    }
    return result;
}

double lm_loss_value(const AlignmentExample& example, const Backbone& backbone,
                     const ProjectionLayer& projection) {
    BackboneInput input;
    input.pre_tokens = example.pre_tokens;
    input.post_tokens = example.post_tokens;
    input.features = projection.apply(example.features);
    Matrix logits = backbone.score_targets(input, example.target_tokens);
    return cross_entropy(logits, example.target_tokens, false).loss;
}

TaskSampler::TaskSampler(const std::array<double, 3>& ratio, std::uint64_t seed) : rng_(seed) {
    double total = ratio[0] + ratio[1] + ratio[2];
    if (!(ratio[0] > 0.0 && ratio[1] > 0.0 && ratio[2] > 0.0)) {
        throw Error(ErrorCode::ConfigError, "task ratio components must be positive");
    }
    cumulative_[0] = ratio[0] / total;
    cumulative_[1] = cumulative_[0] + ratio[1] / total;
    cumulative_[2] = 1.0;
}

TaskType TaskSampler::next() {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    double u = uniform(rng_);
    if (u < cumulative_[0]) return TaskType::Summarization;
    if (u < cumulative_[1]) return TaskType::OpenQA;
    return TaskType::MultiChoice;
}

void write_report_jsonl(const TrainingReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    for (const auto& s : report.steps) {
        out << nlohmann::json{{"epoch", s.epoch},
                              {"step", s.step},
                              {"task", to_string(s.task)},
                              {"loss", s.loss},
                              {"lr", s.lr}}
                   .dump()
            << '\n';
    }
    for (std::size_t e = 0; e < report.epoch_mean_loss.size(); ++e) {
        out << nlohmann::json{{"epoch", e}, {"mean_loss", report.epoch_mean_loss[e]}}.dump()
            << '\n';
    }
}

Checkpoint snapshot(const TinyTransformer& backbone, const ProjectionLayer& projection,
                    const std::string& config_fingerprint, const std::string& encoder_descriptor,
                    std::uint64_t step_count) {
    Checkpoint c;
    c.config_fingerprint = config_fingerprint;
    c.backbone_descriptor = backbone.descriptor();
    c.encoder_descriptor = encoder_descriptor;
    c.step_count = step_count;
    c.adapter = backbone.adapter();
    c.projection = projection;
    return c;
}

namespace {

constexpr char kCheckpointMagic[8] = {'T', 'O', 'P', 'A', 'C', 'K', 'P', 'T'};

void write_matrix(std::ofstream& out, const Matrix& m) {
    std::uint64_t rows = m.rows, cols = m.cols;
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(double)));
}

Matrix read_matrix(std::ifstream& in) {
    std::uint64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    return m;
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    nlohmann::json header{{"config_fingerprint", checkpoint.config_fingerprint},
                          {"backbone_descriptor", checkpoint.backbone_descriptor},
                          {"encoder_descriptor", checkpoint.encoder_descriptor},
                          {"step_count", checkpoint.step_count},
                          {"layers", checkpoint.adapter.prompts.size()}};
    std::string header_str = header.dump();
    std::uint32_t len = static_cast<std::uint32_t>(header_str.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header_str.data(), len);

    for (const auto& prompt : checkpoint.adapter.prompts) write_matrix(out, prompt);
    for (const auto& gates : checkpoint.adapter.gates) {
        Matrix g(1, gates.size());
        std::copy(gates.begin(), gates.end(), g.data.begin());
        write_matrix(out, g);
    }
    write_matrix(out, checkpoint.projection.weight);
    Matrix bias(1, checkpoint.projection.bias.size());
    std::copy(checkpoint.projection.bias.begin(), checkpoint.projection.bias.end(),
              bias.data.begin());
    write_matrix(out, bias);
    if (!out) throw Error(ErrorCode::IoError, "short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw Error(ErrorCode::IoError, path + " is not a checkpoint");
    }
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string header_str(len, '\0');
    in.read(header_str.data(), len);
    nlohmann::json header = nlohmann::json::parse(header_str);

    Checkpoint c;
    c.config_fingerprint = header.at("config_fingerprint").get<std::string>();
    c.backbone_descriptor = header.at("backbone_descriptor").get<std::string>();
    c.encoder_descriptor = header.at("encoder_descriptor").get<std::string>();
    c.step_count = header.at("step_count").get<std::uint64_t>();
    std::size_t layers = header.at("layers").get<std::size_t>();

    for (std::size_t l = 0; l < layers; ++l) c.adapter.prompts.push_back(read_matrix(in));
    for (std::size_t l = 0; l < layers; ++l) {
        Matrix g = read_matrix(in);
        c.adapter.gates.emplace_back(g.data.begin(), g.data.end());
    }
    c.projection.weight = read_matrix(in);
    Matrix bias = read_matrix(in);
    c.projection.bias.assign(bias.data.begin(), bias.data.end());
    if (!in) throw Error(ErrorCode::IoError, "truncated checkpoint " + path);
    return c;
}

void restore_checkpoint(const Checkpoint& checkpoint, TinyTransformer& backbone,
                        ProjectionLayer& projection) {
    if (checkpoint.backbone_descriptor != backbone.descriptor()) {
        throw Error(ErrorCode::FingerprintMismatch,
                    "checkpoint was trained against a different backbone");
    }
    backbone.adapter() = checkpoint.adapter;
    projection = checkpoint.projection;
}

namespace {

struct TrainLoop {
    const TrainerConfig& config;
    TinyTransformer& backbone;
    ProjectionLayer& projection;
    TrainingReport report;
    AdamW optimizer;
    Schedule schedule;
    std::size_t global_step = 0;

    TrainLoop(const TrainerConfig& cfg, TinyTransformer& bb, ProjectionLayer& proj,
              std::size_t examples_per_epoch)
        : config(cfg), backbone(bb), projection(proj), optimizer(bb, proj) {
        std::size_t steps_per_epoch =
            (examples_per_epoch + cfg.effective_batch() - 1) / std::max<std::size_t>(1, cfg.effective_batch());
        schedule.warmup_steps = cfg.warmup_epochs * steps_per_epoch;
        schedule.total_steps = cfg.epochs * steps_per_epoch;
        schedule.peak = cfg.peak_lr();
    }

    // Runs one epoch over `count` examples produced by `make_example(i)`.
    template <typename MakeExample>
    double run_epoch(std::size_t epoch, std::size_t count, MakeExample&& make_example) {
        AdapterGrads grad_a = zero_adapter_grads(backbone);
        ProjectionGrads grad_p = zero_projection_grads(projection);
        std::size_t in_batch = 0;
        double epoch_loss = 0.0;
        std::size_t epoch_examples = 0;

        auto flush = [&](double mean_loss_for_log, TaskType task) {
            if (in_batch == 0) return;
            scale(grad_a, 1.0 / double(in_batch));
            scale(grad_p, 1.0 / double(in_batch));
            double lr = schedule.lr(global_step);
            optimizer.step(lr, config.weight_decay, backbone, projection, grad_a, grad_p);
            report.steps.push_back({epoch, global_step, task, mean_loss_for_log, lr});
            ++global_step;
            grad_a = zero_adapter_grads(backbone);
            grad_p = zero_projection_grads(projection);
            in_batch = 0;
        };

        double batch_loss = 0.0;
        TaskType last_task = TaskType::Summarization;
        for (std::size_t i = 0; i < count; ++i) {
            AlignmentExample example = make_example(i);
            last_task = example.task;
            LossResult result = lm_loss(example, backbone, projection, true);
            if (!std::isfinite(result.loss)) {
                throw Error(ErrorCode::DivergenceDetected, "non-finite loss");
            }
            accumulate(grad_a, result.adapter);
            accumulate(grad_p, result.projection);
            batch_loss += result.loss;
            epoch_loss += result.loss;
            ++epoch_examples;
            ++in_batch;
            if (in_batch == config.effective_batch()) {
                flush(batch_loss / double(in_batch), last_task);
                batch_loss = 0.0;
            }
        }
        if (in_batch > 0) flush(batch_loss / double(in_batch), last_task);
        return epoch_examples > 0 ? epoch_loss / double(epoch_examples) : 0.0;
    }
};

}  // namespace

TrainingReport train(const CorpusShard& corpus, const TrainerConfig& config,
                     TinyTransformer& backbone, ProjectionLayer& projection,
                     const EncoderPair& pair) {
    if (corpus.tideos.empty()) {
        throw Error(ErrorCode::EmptyCaptionStream, "empty training corpus");
    }
    Tokenizer tokenizer(backbone.config().vocabulary);
    std::string base_hash = backbone.base_weight_hash();

    TrainLoop loop(config, backbone, projection, corpus.tideos.size());
    std::mt19937_64 rng(config.rng_seed);
    TaskSampler sampler(config.task_ratio, config.rng_seed ^ 0x7461736bull);

    AdapterParams good_adapter = backbone.adapter();
    ProjectionLayer good_projection = projection;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<std::size_t> order(corpus.tideos.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        try {
            double mean = loop.run_epoch(epoch, order.size(), [&](std::size_t i) {
                std::size_t idx = order[i];
                const Tideo& tideo = corpus.tideos[idx];
                const TideoAnnotation& annotation = corpus.annotations[idx];
                TaskType task = sampler.next();
                std::size_t qa_index = 0;
                if (task != TaskType::Summarization && annotation.qa_items.size() > 1) {
                    std::uniform_int_distribution<std::size_t> pick(0, annotation.qa_items.size() - 1);
                    qa_index = pick(rng);
                }
                return render_example(tideo, annotation, task, pair, config.target_frames,
                                      tokenizer, qa_index);
            });
            loop.report.epoch_mean_loss.push_back(mean);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::DivergenceDetected || e.code() == ErrorCode::NonFiniteLoss) {
                backbone.adapter() = good_adapter;
                projection = good_projection;
                throw Error(ErrorCode::DivergenceDetected,
                            "training diverged in epoch " + std::to_string(epoch) +
                                "; last good epoch state restored");
            }
            throw;
        }
        good_adapter = backbone.adapter();
        good_projection = projection;
    }

    if (backbone.base_weight_hash() != base_hash) {
        throw Error(ErrorCode::DivergenceDetected, "frozen contract violated: base weights changed");
    }
    loop.report.total_steps = loop.global_step;
    return loop.report;
}

TrainingReport finetune(const std::vector<SequenceRepresentation>& videos,
                        const std::vector<TideoAnnotation>& annotations,
                        const TrainerConfig& config, TinyTransformer& backbone,
                        ProjectionLayer& projection) {
    if (videos.empty() || videos.size() != annotations.size()) {
        throw Error(ErrorCode::EmptyCaptionStream, "finetuning set empty or misaligned");
    }
    Tokenizer tokenizer(backbone.config().vocabulary);
    std::string base_hash = backbone.base_weight_hash();

    // Deterministic data-ratio subset for the sweep experiments.
    std::vector<std::size_t> pool(videos.size());
    std::iota(pool.begin(), pool.end(), 0);
    std::mt19937_64 subset_rng(config.rng_seed ^ 0x5375627365ull);
    std::shuffle(pool.begin(), pool.end(), subset_rng);
    std::size_t keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(config.finetune_data_ratio * double(pool.size()))));
    keep = std::min(keep, pool.size());
    pool.resize(keep);
    std::sort(pool.begin(), pool.end());

    TrainLoop loop(config, backbone, projection, pool.size());
    std::mt19937_64 rng(config.rng_seed);
    TaskSampler sampler(config.task_ratio, config.rng_seed ^ 0x7461736bull);

    AdapterParams good_adapter = backbone.adapter();
    ProjectionLayer good_projection = projection;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<std::size_t> order = pool;
        std::shuffle(order.begin(), order.end(), rng);
        try {
            double mean = loop.run_epoch(epoch, order.size(), [&](std::size_t i) {
                std::size_t idx = order[i];
                const TideoAnnotation& annotation = annotations[idx];
                TaskType task = sampler.next();
                std::size_t qa_index = 0;
                if (task != TaskType::Summarization && annotation.qa_items.size() > 1) {
                    std::uniform_int_distribution<std::size_t> pick(0, annotation.qa_items.size() - 1);
                    qa_index = pick(rng);
                }
                RenderedPrompt prompt = render_prompt_for(annotation, task, qa_index);
                return finish_example(resample_sequence(videos[idx], config.target_frames), prompt,
                                      tokenizer);
            });
            loop.report.epoch_mean_loss.push_back(mean);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::DivergenceDetected || e.code() == ErrorCode::NonFiniteLoss) {
                backbone.adapter() = good_adapter;
                projection = good_projection;
                throw Error(ErrorCode::DivergenceDetected,
                            "finetuning diverged in epoch " + std::to_string(epoch) +
                                "; last good epoch state restored");
            }
            throw;
        }
        good_adapter = backbone.adapter();
        good_projection = projection;
    }

    if (backbone.base_weight_hash() != base_hash) {
        throw Error(ErrorCode::DivergenceDetected, "frozen contract violated: base weights changed");
    }
    loop.report.total_steps = loop.global_step;
    return loop.report;
}

}  // namespace topa
