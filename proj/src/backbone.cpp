#include "topa/backbone.hpp"

#include <cmath>
#include <random>

#include "json.hpp"
#include "topa/digest.hpp"
#include "topa/error.hpp"

namespace topa {

namespace {

constexpr double kLnEps = 1e-5;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
    double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

// y = gain * (x - mu) / sigma + bias, per row. Caches x_hat and inv_sigma.
void layer_norm_forward(const Matrix& x, const std::vector<double>& gain,
                        const std::vector<double>& bias, Matrix& y, Matrix& x_hat,
                        std::vector<double>& inv_sigma) {
    std::size_t d = x.cols;
    y = Matrix(x.rows, d);
    x_hat = Matrix(x.rows, d);
    inv_sigma.assign(x.rows, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double mean = 0.0;
        for (std::size_t k = 0; k < d; ++k) mean += xi[k];
        mean /= double(d);
        double var = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            double c = xi[k] - mean;
            var += c * c;
        }
        var /= double(d);
        double inv = 1.0 / std::sqrt(var + kLnEps);
        inv_sigma[i] = inv;
        double* yi = y.row(i);
        double* hi = x_hat.row(i);
        for (std::size_t k = 0; k < d; ++k) {
            hi[k] = (xi[k] - mean) * inv;
            yi[k] = gain[k] * hi[k] + bias[k];
        }
    }
}

// dx for layer norm given dy, cached x_hat and inv_sigma.
void layer_norm_backward(const Matrix& dy, const Matrix& x_hat,
                         const std::vector<double>& inv_sigma, const std::vector<double>& gain,
                         Matrix& dx) {
    std::size_t d = dy.cols;
    dx = Matrix(dy.rows, d);
    for (std::size_t i = 0; i < dy.rows; ++i) {
        const double* dyi = dy.row(i);
        const double* hi = x_hat.row(i);
        double g_mean = 0.0, gh_mean = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            double g = dyi[k] * gain[k];
            g_mean += g;
            gh_mean += g * hi[k];
        }
        g_mean /= double(d);
        gh_mean /= double(d);
        double* dxi = dx.row(i);
        for (std::size_t k = 0; k < d; ++k) {
            double g = dyi[k] * gain[k];
            dxi[k] = (g - g_mean - hi[k] * gh_mean) * inv_sigma[i];
        }
    }
}

// Row-wise softmax over columns 0..i (causal); zero beyond the diagonal.
void causal_softmax(Matrix& scores) {
    for (std::size_t i = 0; i < scores.rows; ++i) {
        double* row = scores.row(i);
        std::size_t limit = std::min(i + 1, scores.cols);
        double max_val = row[0];
        for (std::size_t j = 1; j < limit; ++j) max_val = std::max(max_val, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < limit; ++j) {
            row[j] = std::exp(row[j] - max_val);
            denom += row[j];
        }
        for (std::size_t j = 0; j < limit; ++j) row[j] /= denom;
        for (std::size_t j = limit; j < scores.cols; ++j) row[j] = 0.0;
    }
}

void full_softmax_rows(Matrix& scores) {
    for (std::size_t i = 0; i < scores.rows; ++i) {
        double* row = scores.row(i);
        double max_val = row[0];
        for (std::size_t j = 1; j < scores.cols; ++j) max_val = std::max(max_val, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < scores.cols; ++j) {
            row[j] = std::exp(row[j] - max_val);
            denom += row[j];
        }
        for (std::size_t j = 0; j < scores.cols; ++j) row[j] /= denom;
    }
}

// ds = p .* (dp - sum(p .* dp)) per row; in-place over dp.
void softmax_backward_rows(const Matrix& probs, Matrix& dprobs) {
    for (std::size_t i = 0; i < probs.rows; ++i) {
        const double* p = probs.row(i);
        double* dp = dprobs.row(i);
        double inner = 0.0;
        for (std::size_t j = 0; j < probs.cols; ++j) inner += p[j] * dp[j];
        for (std::size_t j = 0; j < probs.cols; ++j) dp[j] = p[j] * (dp[j] - inner);
    }
}

Matrix slice_head(const Matrix& m, std::size_t head, std::size_t head_dim) {
    Matrix out(m.rows, head_dim);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* src = m.row(i) + head * head_dim;
        std::copy(src, src + head_dim, out.row(i));
    }
    return out;
}

void add_head(Matrix& dst, const Matrix& part, std::size_t head, std::size_t head_dim) {
    for (std::size_t i = 0; i < part.rows; ++i) {
        double* out = dst.row(i) + head * head_dim;
        const double* src = part.row(i);
        for (std::size_t k = 0; k < head_dim; ++k) out[k] += src[k];
    }
}

void fill_normal(Matrix& m, std::mt19937_64& rng, double sigma) {
    std::normal_distribution<double> normal(0.0, sigma);
    for (auto& v : m.data) v = normal(rng);
}

void hash_tensor(std::string& buffer, const Matrix& m) {
    buffer.append(reinterpret_cast<const char*>(m.data.data()), m.data.size() * sizeof(double));
}

void hash_tensor(std::string& buffer, const std::vector<double>& v) {
    buffer.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

}  // namespace

std::vector<int> Backbone::generate(const BackboneInput& input, std::size_t max_new,
                                    int eos_id) const {
    std::vector<int> out;
    for (std::size_t step = 0; step < max_new; ++step) {
        std::vector<double> logits = next_logits(input, out);
        int best = 0;
        for (std::size_t v = 1; v < logits.size(); ++v) {
            if (logits[v] > logits[best]) best = static_cast<int>(v);
        }
        out.push_back(best);
        if (best == eos_id) break;
    }
    return out;
}

void AdapterParams::fill(double v) {
    for (auto& p : prompts) p.fill(v);
    for (auto& g : gates) std::fill(g.begin(), g.end(), v);
}

void AdapterParams::axpy(double alpha, const AdapterParams& other) {
    for (std::size_t l = 0; l < prompts.size(); ++l) {
        for (std::size_t i = 0; i < prompts[l].data.size(); ++i) {
            prompts[l].data[i] += alpha * other.prompts[l].data[i];
        }
        for (std::size_t h = 0; h < gates[l].size(); ++h) gates[l][h] += alpha * other.gates[l][h];
    }
}

std::size_t AdapterParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : prompts) n += p.data.size();
    for (const auto& g : gates) n += g.size();
    return n;
}

std::string TinyTransformerConfig::to_descriptor() const {
    nlohmann::json j{{"kind", "tiny_transformer"},
                     {"layers", layers},
                     {"width", width},
                     {"heads", heads},
                     {"mlp_ratio", mlp_ratio},
                     {"max_seq", max_seq},
                     {"adapter_length", adapter_length},
                     {"seed", seed},
                     {"vocabulary", vocabulary}};
    return j.dump();
}

TinyTransformerConfig TinyTransformerConfig::from_descriptor(const std::string& descriptor) {
    nlohmann::json j = nlohmann::json::parse(descriptor);
    TinyTransformerConfig cfg;
    cfg.layers = j.at("layers").get<std::size_t>();
    cfg.width = j.at("width").get<std::size_t>();
    cfg.heads = j.at("heads").get<std::size_t>();
    cfg.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    cfg.max_seq = j.at("max_seq").get<std::size_t>();
    cfg.adapter_length = j.at("adapter_length").get<std::size_t>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    return cfg;
}

struct TinyTransformer::TraceImpl : Backbone::Trace {
    std::size_t pre_len = 0;
    std::size_t feature_len = 0;
    std::size_t post_len = 0;
    std::size_t target_len = 0;

    Matrix input;  // T x E
    struct LayerTrace {
        Matrix x_hat1;
        std::vector<double> inv_sigma1;
        Matrix q, k, v;                     // T x E
        std::vector<Matrix> attn_probs;     // per head, T x T
        std::vector<Matrix> adapter_probs;  // per head, T x A
        Matrix kp, vp;                      // A x E
        Matrix x_hat2;
        std::vector<double> inv_sigma2;
        Matrix pre_act;  // T x M
    };
    std::vector<LayerTrace> layers;
    Matrix x_hat_final;
    std::vector<double> inv_sigma_final;
};

TinyTransformer::TinyTransformer(TinyTransformerConfig config) : config_(std::move(config)) {
    if (config_.width % config_.heads != 0) {
        throw Error(ErrorCode::ConfigError, "backbone width must be divisible by heads");
    }
    if (config_.vocabulary.size() < 2) {
        throw Error(ErrorCode::ConfigError, "backbone vocabulary must have at least 2 tokens");
    }
    const std::size_t e = config_.width;
    const std::size_t m = config_.width * config_.mlp_ratio;
    const std::size_t v = config_.vocabulary.size();
    std::mt19937_64 rng(config_.seed);

    double attn_sigma = 1.0 / std::sqrt(double(e));
    token_embedding_ = Matrix(v, e);
    fill_normal(token_embedding_, rng, 0.1);
    position_embedding_ = Matrix(config_.max_seq, e);
    fill_normal(position_embedding_, rng, 0.1);

    layers_.resize(config_.layers);
    for (auto& layer : layers_) {
        layer.ln1_gain.assign(e, 1.0);
        layer.ln1_bias.assign(e, 0.0);
        layer.ln2_gain.assign(e, 1.0);
        layer.ln2_bias.assign(e, 0.0);
        layer.wq = Matrix(e, e);
        layer.wk = Matrix(e, e);
        layer.wv = Matrix(e, e);
        layer.wo = Matrix(e, e);
        fill_normal(layer.wq, rng, attn_sigma);
        fill_normal(layer.wk, rng, attn_sigma);
        fill_normal(layer.wv, rng, attn_sigma);
        fill_normal(layer.wo, rng, attn_sigma);
        layer.w1 = Matrix(e, m);
        layer.w2 = Matrix(m, e);
        fill_normal(layer.w1, rng, attn_sigma);
        fill_normal(layer.w2, rng, 1.0 / std::sqrt(double(m)));
    }
    lnf_gain_.assign(e, 1.0);
    lnf_bias_.assign(e, 0.0);
    w_out_ = Matrix(v, e);
    fill_normal(w_out_, rng, attn_sigma);

    // Trainable adapter: small prompt init, zero gates, so the initial model
    // behaves exactly like the frozen base.
    adapter_.prompts.resize(config_.layers);
    adapter_.gates.resize(config_.layers);
    for (std::size_t l = 0; l < config_.layers; ++l) {
        adapter_.prompts[l] = Matrix(config_.adapter_length, e);
        fill_normal(adapter_.prompts[l], rng, 0.1);
        adapter_.gates[l].assign(config_.heads, 0.0);
    }

    base_hash_ = base_weight_hash();
}

std::size_t TinyTransformer::vocab_size() const { return config_.vocabulary.size(); }

std::string TinyTransformer::base_weight_hash() const {
    std::string buffer;
    hash_tensor(buffer, token_embedding_);
    hash_tensor(buffer, position_embedding_);
    for (const auto& layer : layers_) {
        hash_tensor(buffer, layer.ln1_gain);
        hash_tensor(buffer, layer.ln1_bias);
        hash_tensor(buffer, layer.wq);
        hash_tensor(buffer, layer.wk);
        hash_tensor(buffer, layer.wv);
        hash_tensor(buffer, layer.wo);
        hash_tensor(buffer, layer.ln2_gain);
        hash_tensor(buffer, layer.ln2_bias);
        hash_tensor(buffer, layer.w1);
        hash_tensor(buffer, layer.w2);
    }
    hash_tensor(buffer, lnf_gain_);
    hash_tensor(buffer, lnf_bias_);
    hash_tensor(buffer, w_out_);
    return sha256_hex(buffer);
}

AdapterParams TinyTransformer::zero_adapter_like() const {
    AdapterParams grads;
    grads.prompts.resize(config_.layers);
    grads.gates.resize(config_.layers);
    for (std::size_t l = 0; l < config_.layers; ++l) {
        grads.prompts[l] = Matrix(config_.adapter_length, config_.width);
        grads.gates[l].assign(config_.heads, 0.0);
    }
    return grads;
}

Matrix TinyTransformer::compose_input(const BackboneInput& input,
                                      const std::vector<int>& targets) const {
    const std::size_t e = config_.width;
    const Matrix& features = input.features;
    const std::size_t total = input.context_length() + targets.size();
    if (total == 0) {
        throw Error(ErrorCode::MalformedRecord, "empty backbone input");
    }
    if (total > config_.max_seq) {
        throw Error(ErrorCode::MalformedRecord,
                    "sequence length " + std::to_string(total) + " exceeds max_seq " +
                        std::to_string(config_.max_seq));
    }
    if (features.rows > 0 && features.cols != e) {
        throw Error(ErrorCode::DimensionMismatch, "feature rows must match backbone width");
    }
    Matrix x(total, e);
    std::size_t pos = 0;
    auto put_token = [&](int id) {
        if (id < 0 || id >= static_cast<int>(vocab_size())) {
            throw Error(ErrorCode::MalformedRecord, "token id out of range: " + std::to_string(id));
        }
        const double* tok = token_embedding_.row(static_cast<std::size_t>(id));
        const double* pe = position_embedding_.row(pos);
        double* out = x.row(pos);
        for (std::size_t k = 0; k < e; ++k) out[k] = tok[k] + pe[k];
        ++pos;
    };
    for (int id : input.pre_tokens) put_token(id);
    for (std::size_t i = 0; i < features.rows; ++i) {
        const double* f = features.row(i);
        const double* pe = position_embedding_.row(pos);
        double* out = x.row(pos);
        for (std::size_t k = 0; k < e; ++k) out[k] = f[k] + pe[k];
        ++pos;
    }
    for (int id : input.post_tokens) put_token(id);
    for (int id : targets) put_token(id);
    return x;
}

Matrix TinyTransformer::forward_hidden(const Matrix& input, TraceImpl* trace) const {
    const std::size_t e = config_.width;
    const std::size_t heads = config_.heads;
    const std::size_t head_dim = e / heads;
    const std::size_t adapter_len = config_.adapter_length;
    const double scale = 1.0 / std::sqrt(double(head_dim));

    Matrix x = input;
    if (trace) {
        trace->input = input;
        trace->layers.resize(config_.layers);
    }

    for (std::size_t l = 0; l < config_.layers; ++l) {
        const LayerWeights& w = layers_[l];
        TraceImpl::LayerTrace* lt = trace ? &trace->layers[l] : nullptr;

        Matrix x_hat, normed;
        std::vector<double> inv_sigma;
        layer_norm_forward(x, w.ln1_gain, w.ln1_bias, normed, x_hat, inv_sigma);

        Matrix q, k, v;
        kernels::matmul(normed, w.wq, q);
        kernels::matmul(normed, w.wk, k);
        kernels::matmul(normed, w.wv, v);

        Matrix kp, vp;
        bool use_adapter = adapter_len > 0;
        if (use_adapter) {
            kernels::matmul(adapter_.prompts[l], w.wk, kp);
            kernels::matmul(adapter_.prompts[l], w.wv, vp);
        }

        Matrix ctx(x.rows, e);
        std::vector<Matrix> head_probs(heads);
        std::vector<Matrix> head_adapter_probs(use_adapter ? heads : 0);
        for (std::size_t h = 0; h < heads; ++h) {
            Matrix qh = slice_head(q, h, head_dim);
            Matrix kh = slice_head(k, h, head_dim);
            Matrix vh = slice_head(v, h, head_dim);

            Matrix scores;
            kernels::matmul_nt(qh, kh, scores);
            for (auto& s : scores.data) s *= scale;
            causal_softmax(scores);

            Matrix ctx_h;
            kernels::matmul(scores, vh, ctx_h);

            if (use_adapter) {
                Matrix kph = slice_head(kp, h, head_dim);
                Matrix vph = slice_head(vp, h, head_dim);
                Matrix ascores;
                kernels::matmul_nt(qh, kph, ascores);
                for (auto& s : ascores.data) s *= scale;
                full_softmax_rows(ascores);
                Matrix actx;
                kernels::matmul(ascores, vph, actx);
                double gate = std::tanh(adapter_.gates[l][h]);
                for (std::size_t i = 0; i < ctx_h.data.size(); ++i) {
                    ctx_h.data[i] += gate * actx.data[i];
                }
                head_adapter_probs[h] = std::move(ascores);
            }
            add_head(ctx, ctx_h, h, head_dim);
            head_probs[h] = std::move(scores);
        }

        Matrix attn_out;
        kernels::matmul(ctx, w.wo, attn_out);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += attn_out.data[i];

        if (lt) {
            lt->x_hat1 = std::move(x_hat);
            lt->inv_sigma1 = std::move(inv_sigma);
            lt->q = std::move(q);
            lt->k = std::move(k);
            lt->v = std::move(v);
            lt->attn_probs = std::move(head_probs);
            lt->adapter_probs = std::move(head_adapter_probs);
            lt->kp = std::move(kp);
            lt->vp = std::move(vp);
        }

        Matrix x_hat2, normed2;
        std::vector<double> inv_sigma2;
        layer_norm_forward(x, w.ln2_gain, w.ln2_bias, normed2, x_hat2, inv_sigma2);

        Matrix pre_act;
        kernels::matmul(normed2, w.w1, pre_act);
        Matrix hidden = pre_act;
        for (auto& hval : hidden.data) hval = gelu(hval);
        Matrix mlp_out;
        kernels::matmul(hidden, w.w2, mlp_out);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += mlp_out.data[i];

        if (lt) {
            lt->x_hat2 = std::move(x_hat2);
            lt->inv_sigma2 = std::move(inv_sigma2);
            lt->pre_act = std::move(pre_act);
        }
    }

    Matrix final_hidden, x_hat_final;
    std::vector<double> inv_sigma_final;
    layer_norm_forward(x, lnf_gain_, lnf_bias_, final_hidden, x_hat_final, inv_sigma_final);
    if (trace) {
        trace->x_hat_final = std::move(x_hat_final);
        trace->inv_sigma_final = std::move(inv_sigma_final);
    }
    return final_hidden;
}

Matrix TinyTransformer::score_targets(const BackboneInput& input, const std::vector<int>& targets,
                                      std::unique_ptr<Trace>* trace) const {
    if (input.context_length() == 0) {
        throw Error(ErrorCode::MalformedRecord, "need a non-empty context before the targets");
    }
    std::unique_ptr<TraceImpl> impl;
    if (trace) impl = std::make_unique<TraceImpl>();
    Matrix composed = compose_input(input, targets);
    Matrix hidden = forward_hidden(composed, impl.get());

    const std::size_t context = input.context_length();
    Matrix rows(targets.size(), config_.width);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double* src = hidden.row(context + i - 1);
        std::copy(src, src + config_.width, rows.row(i));
    }
    Matrix logits;
    kernels::matmul_nt(rows, w_out_, logits);

    if (trace) {
        impl->pre_len = input.pre_tokens.size();
        impl->feature_len = input.features.rows;
        impl->post_len = input.post_tokens.size();
        impl->target_len = targets.size();
        *trace = std::move(impl);
    }
    return logits;
}

std::vector<double> TinyTransformer::next_logits(const BackboneInput& input,
                                                 const std::vector<int>& generated) const {
    Matrix composed = compose_input(input, generated);
    Matrix hidden = forward_hidden(composed, nullptr);
    Matrix last(1, config_.width);
    const double* src = hidden.row(hidden.rows - 1);
    std::copy(src, src + config_.width, last.row(0));
    Matrix logits;
    kernels::matmul_nt(last, w_out_, logits);
    return std::vector<double>(logits.data.begin(), logits.data.end());
}

TinyTransformer::BackwardResult TinyTransformer::backward(const Trace& trace,
                                                          const Matrix& dtarget_logits) const {
    const auto& t = dynamic_cast<const TraceImpl&>(trace);
    const std::size_t e = config_.width;
    const std::size_t heads = config_.heads;
    const std::size_t head_dim = e / heads;
    const std::size_t total = t.input.rows;
    const std::size_t context = t.pre_len + t.feature_len + t.post_len;
    const double scale = 1.0 / std::sqrt(double(head_dim));
    const bool use_adapter = config_.adapter_length > 0;

    BackwardResult result;
    result.adapter = zero_adapter_like();

    // Scatter target-logit gradients back onto their hidden rows.
    Matrix dlogits_rows;
    kernels::matmul(dtarget_logits, w_out_, dlogits_rows);  // |t| x E
    Matrix d_final(total, e);
    for (std::size_t i = 0; i < t.target_len; ++i) {
        const double* src = dlogits_rows.row(i);
        double* dst = d_final.row(context + i - 1);
        for (std::size_t k = 0; k < e; ++k) dst[k] += src[k];
    }

    Matrix dx;
    layer_norm_backward(d_final, t.x_hat_final, t.inv_sigma_final, lnf_gain_, dx);

    for (std::size_t li = config_.layers; li-- > 0;) {
        const LayerWeights& w = layers_[li];
        const TraceImpl::LayerTrace& lt = t.layers[li];

        // MLP branch
        Matrix dhidden;
        kernels::matmul_nt(dx, w.w2, dhidden);  // T x M
        for (std::size_t i = 0; i < dhidden.data.size(); ++i) {
            dhidden.data[i] *= gelu_grad(lt.pre_act.data[i]);
        }
        Matrix dnormed2;
        kernels::matmul_nt(dhidden, w.w1, dnormed2);  // T x E
        Matrix dx_ln2;
        layer_norm_backward(dnormed2, lt.x_hat2, lt.inv_sigma2, w.ln2_gain, dx_ln2);
        for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dx_ln2.data[i];

        // Attention branch
        Matrix dctx;
        kernels::matmul_nt(dx, w.wo, dctx);  // T x E

        Matrix dq(total, e), dk(total, e), dv(total, e);
        Matrix dkp, dvp;
        if (use_adapter) {
            dkp = Matrix(config_.adapter_length, e);
            dvp = Matrix(config_.adapter_length, e);
        }
        for (std::size_t h = 0; h < heads; ++h) {
            Matrix dctx_h = slice_head(dctx, h, head_dim);
            Matrix qh = slice_head(lt.q, h, head_dim);
            Matrix kh = slice_head(lt.k, h, head_dim);
            Matrix vh = slice_head(lt.v, h, head_dim);
            const Matrix& probs = lt.attn_probs[h];

            Matrix dprobs;
            kernels::matmul_nt(dctx_h, vh, dprobs);  // T x T
            softmax_backward_rows(probs, dprobs);
            Matrix dqh(total, head_dim);
            Matrix dkh(total, head_dim);
            for (std::size_t i = 0; i < total; ++i) {
                for (std::size_t j = 0; j <= i; ++j) {
                    double ds = dprobs.at(i, j) * scale;
                    for (std::size_t kk = 0; kk < head_dim; ++kk) {
                        dqh.at(i, kk) += ds * kh.at(j, kk);
                        dkh.at(j, kk) += ds * qh.at(i, kk);
                    }
                }
            }
            Matrix dvh;
            kernels::matmul_tn(probs, dctx_h, dvh);  // T x dh

            if (use_adapter) {
                const Matrix& aprobs = lt.adapter_probs[h];
                Matrix kph = slice_head(lt.kp, h, head_dim);
                Matrix vph = slice_head(lt.vp, h, head_dim);
                double gate = std::tanh(adapter_.gates[li][h]);

                Matrix actx;
                kernels::matmul(aprobs, vph, actx);
                double dgate_mix = 0.0;
                for (std::size_t i = 0; i < actx.data.size(); ++i) {
                    dgate_mix += dctx_h.data[i] * actx.data[i];
                }
                result.adapter.gates[li][h] += dgate_mix * (1.0 - gate * gate);

                Matrix daprobs;
                kernels::matmul_nt(dctx_h, vph, daprobs);  // T x A
                for (auto& val : daprobs.data) val *= gate;
                softmax_backward_rows(aprobs, daprobs);

                Matrix dqh_a;
                kernels::matmul(daprobs, kph, dqh_a);  // T x dh
                for (std::size_t i = 0; i < dqh.data.size(); ++i) {
                    dqh.data[i] += dqh_a.data[i] * scale;
                }
                Matrix dkph;
                kernels::matmul_tn(daprobs, qh, dkph);  // A x dh
                for (auto& val : dkph.data) val *= scale;
                Matrix dvph;
                kernels::matmul_tn(aprobs, dctx_h, dvph);  // A x dh
                for (auto& val : dvph.data) val *= gate;
                add_head(dkp, dkph, h, head_dim);
                add_head(dvp, dvph, h, head_dim);
            }

            add_head(dq, dqh, h, head_dim);
            add_head(dk, dkh, h, head_dim);
            add_head(dv, dvh, h, head_dim);
        }

        if (use_adapter) {
            Matrix dprompt_k, dprompt_v;
            kernels::matmul_nt(dkp, w.wk, dprompt_k);  // A x E
            kernels::matmul_nt(dvp, w.wv, dprompt_v);
            Matrix& dprompt = result.adapter.prompts[li];
            for (std::size_t i = 0; i < dprompt.data.size(); ++i) {
                dprompt.data[i] += dprompt_k.data[i] + dprompt_v.data[i];
            }
        }

        Matrix dnormed(total, e);
        Matrix tmp;
        kernels::matmul_nt(dq, w.wq, tmp);
        for (std::size_t i = 0; i < tmp.data.size(); ++i) dnormed.data[i] += tmp.data[i];
        kernels::matmul_nt(dk, w.wk, tmp);
        for (std::size_t i = 0; i < tmp.data.size(); ++i) dnormed.data[i] += tmp.data[i];
        kernels::matmul_nt(dv, w.wv, tmp);
        for (std::size_t i = 0; i < tmp.data.size(); ++i) dnormed.data[i] += tmp.data[i];

        Matrix dx_ln1;
        layer_norm_backward(dnormed, lt.x_hat1, lt.inv_sigma1, w.ln1_gain, dx_ln1);
        for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dx_ln1.data[i];
    }

    result.features = Matrix(t.feature_len, e);
    for (std::size_t i = 0; i < t.feature_len; ++i) {
        const double* src = dx.row(t.pre_len + i);
        std::copy(src, src + e, result.features.row(i));
    }
    return result;
}

}  // namespace topa
