#include "topa/memory_projection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <unordered_set>

#include "json.hpp"
#include "topa/error.hpp"
#include "topa/feature_file.hpp"

namespace topa {

SupportMemory build_memory(const std::vector<std::string>& captions, const EncoderPair& pair,
                           std::size_t max_size, double temperature, std::uint64_t seed) {
    if (captions.empty()) {
        throw Error(ErrorCode::EmptyCaptionStream, "no captions to build the memory from");
    }
    if (temperature <= 0.0) {
        throw Error(ErrorCode::NonPositiveTemperature, "temperature must be > 0");
    }
    if (max_size == 0) {
        throw Error(ErrorCode::EmptyCaptionStream, "max_size must be >= 1");
    }

    // Dedup by normalized caption, then reservoir-sample the survivors.
    std::vector<std::string> kept;
    std::unordered_set<std::string> seen;
    std::mt19937_64 rng(seed);
    std::size_t stream_pos = 0;
    for (const auto& caption : captions) {
        std::string key = normalize_text(caption);
        if (key.empty() || !seen.insert(key).second) continue;
        if (kept.size() < max_size) {
            kept.push_back(caption);
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, stream_pos);
            std::size_t j = pick(rng);
            if (j < max_size) kept[j] = caption;
        }
        ++stream_pos;
    }
    if (kept.empty()) {
        throw Error(ErrorCode::EmptyCaptionStream, "all captions empty after normalization");
    }

    SupportMemory memory;
    memory.temperature = temperature;
    memory.normalized = true;
    memory.encoder_descriptor = pair.descriptor;
    memory.anchors = Matrix(kept.size(), pair.dimension);
    memory.anchor_provenance = kept;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        std::vector<double> v = pair.encode_text(kept[i]);
        if (v.size() != pair.dimension) {
            throw Error(ErrorCode::EncoderFailure, "encoder emitted wrong width for anchor " + kept[i]);
        }
        normalize(v);
        std::copy(v.begin(), v.end(), memory.anchors.row(i));
    }
    return memory;
}

std::vector<double> projection_weights(const std::vector<double>& image_feature,
                                       const SupportMemory& memory) {
    const std::size_t n = memory.anchors.rows;
    const std::size_t d = memory.anchors.cols;
    if (n == 0) throw Error(ErrorCode::MissingMemory, "empty support memory");
    if (memory.temperature <= 0.0) {
        throw Error(ErrorCode::NonPositiveTemperature, "temperature must be > 0");
    }
    if (image_feature.size() != d) {
        throw Error(ErrorCode::DimensionMismatch,
                    "query width " + std::to_string(image_feature.size()) + " != memory width " +
                        std::to_string(d));
    }

    std::vector<double> query = image_feature;
    normalize(query);

    std::vector<double> logits(n);
    for (std::size_t i = 0; i < n; ++i) {
        logits[i] = dot(memory.anchors.row(i), query.data(), d) / memory.temperature;
    }
    double max_logit = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double& v : logits) {
        v = std::exp(v - max_logit);
        denom += v;
    }
    for (double& v : logits) v /= denom;
    return logits;
}

FrameFeature project(const FrameFeature& image_feature, const SupportMemory& memory,
                     bool post_normalize) {
    std::vector<double> weights = projection_weights(image_feature.vector, memory);
    const std::size_t d = memory.anchors.cols;
    FrameFeature out;
    out.vector.assign(d, 0.0);
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double* anchor = memory.anchors.row(i);
        for (std::size_t k = 0; k < d; ++k) out.vector[k] += weights[i] * anchor[k];
    }
    if (post_normalize) normalize(out.vector);
    out.modality = Modality::Projected;
    out.normalized = post_normalize;
    return out;
}

SequenceRepresentation project_sequence_serial(const SequenceRepresentation& video,
                                               const SupportMemory& memory, bool post_normalize) {
    SequenceRepresentation out;
    out.modality = Modality::Projected;
    out.frames.resize(video.frames.size());
    for (std::size_t i = 0; i < video.frames.size(); ++i) {
        out.frames[i] = project(video.frames[i], memory, post_normalize);
    }
    return out;
}

SequenceRepresentation project_sequence(const SequenceRepresentation& video,
                                        const SupportMemory& memory, bool post_normalize) {
    if (kernels::threads() == 1) {
        return project_sequence_serial(video, memory, post_normalize);
    }
    SequenceRepresentation out;
    out.modality = Modality::Projected;
    out.frames.resize(video.frames.size());
#pragma omp parallel for schedule(static) num_threads(kernels::threads())
    for (long long i = 0; i < static_cast<long long>(video.frames.size()); ++i) {
        out.frames[static_cast<std::size_t>(i)] =
            project(video.frames[static_cast<std::size_t>(i)], memory, post_normalize);
    }
    return out;
}

std::vector<AnchorWeight> projection_diagnostics(const FrameFeature& image_feature,
                                                 const SupportMemory& memory, std::size_t top_k) {
    const std::size_t n = memory.anchors.rows;
    if (top_k < 1 || top_k > n) {
        throw Error(ErrorCode::MissingMemory,
                    "top_k " + std::to_string(top_k) + " out of range for memory of size " +
                        std::to_string(n));
    }
    std::vector<double> weights = projection_weights(image_feature.vector, memory);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&weights](std::size_t a, std::size_t b) {
        if (weights[a] != weights[b]) return weights[a] > weights[b];
        return a < b;
    });
    std::vector<AnchorWeight> out;
    out.reserve(top_k);
    for (std::size_t r = 0; r < top_k; ++r) {
        std::size_t i = order[r];
        out.push_back({i, i < memory.anchor_provenance.size() ? memory.anchor_provenance[i] : "",
                       weights[i]});
    }
    return out;
}

void save_memory(const SupportMemory& memory, const std::string& feature_path,
                 const std::string& provenance_path) {
    FeatureFile file;
    file.dimension = static_cast<std::uint32_t>(memory.anchors.cols);
    file.descriptor = memory.encoder_descriptor;
    file.metadata_json = nlohmann::json{{"kind", "support_memory"},
                                        {"temperature", memory.temperature},
                                        {"normalized", memory.normalized}}
                             .dump();
    file.rows.reserve(memory.anchors.rows);
    for (std::size_t i = 0; i < memory.anchors.rows; ++i) {
        std::vector<float> row(memory.anchors.cols);
        for (std::size_t k = 0; k < memory.anchors.cols; ++k) {
            row[k] = static_cast<float>(memory.anchors.at(i, k));
        }
        file.rows.push_back(std::move(row));
    }
    write_feature_file(feature_path, file);

    std::ofstream prov(provenance_path);
    if (!prov) throw Error(ErrorCode::IoError, "cannot write " + provenance_path);
    for (std::size_t i = 0; i < memory.anchor_provenance.size(); ++i) {
        prov << nlohmann::json{{"row", i}, {"caption", memory.anchor_provenance[i]}}.dump() << '\n';
    }
}

SupportMemory load_memory(const std::string& feature_path, const std::string& provenance_path) {
    FeatureFile file = read_feature_file(feature_path);
    nlohmann::json meta = nlohmann::json::parse(
        file.metadata_json.empty() ? std::string("{}") : file.metadata_json);
    SupportMemory memory;
    memory.temperature = meta.value("temperature", 0.01);
    memory.normalized = meta.value("normalized", true);
    memory.encoder_descriptor = file.descriptor;
    memory.anchors = Matrix(file.rows.size(), file.dimension);
    for (std::size_t i = 0; i < file.rows.size(); ++i) {
        for (std::size_t k = 0; k < file.dimension; ++k) {
            memory.anchors.at(i, k) = static_cast<double>(file.rows[i][k]);
        }
    }
    memory.anchor_provenance.resize(file.rows.size());
    std::ifstream prov(provenance_path);
    if (prov) {
        std::string line;
        while (std::getline(prov, line)) {
            if (line.empty()) continue;
            nlohmann::json record = nlohmann::json::parse(line);
            std::size_t row = record.at("row").get<std::size_t>();
            if (row < memory.anchor_provenance.size()) {
                memory.anchor_provenance[row] = record.at("caption").get<std::string>();
            }
        }
    }
    return memory;
}

}  // namespace topa
