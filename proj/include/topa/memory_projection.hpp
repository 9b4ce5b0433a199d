#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "topa/encoder.hpp"
#include "topa/linalg.hpp"

namespace topa {

/// Bank of N unit-normalized text-feature anchors used to express an image
/// feature as a softmax-weighted convex combination of text features.
struct SupportMemory {
    Matrix anchors;  // N x d, unit rows when normalized
    double temperature = 0.01;
    std::vector<std::string> anchor_provenance;  // source caption per anchor
    bool normalized = true;
    std::string encoder_descriptor;
};

/// Encodes up to max_size deduplicated captions. Dedup key is the
/// normalized caption text; reservoir sampling (fixed seed) bounds the bank
/// when the deduplicated stream exceeds max_size.
SupportMemory build_memory(const std::vector<std::string>& captions, const EncoderPair& pair,
                           std::size_t max_size, double temperature, std::uint64_t seed = 0);

/// Softmax-weighted mixture weights over the anchors for one query,
/// computed with max-subtraction. Queries are unit-normalized before the
/// dot product.
std::vector<double> projection_weights(const std::vector<double>& image_feature,
                                       const SupportMemory& memory);

/// Training-free cross-modal projection: output = sum_i w_i * m_i. The
/// mixed output is a convex combination and is left unnormalized unless
/// post_normalize is set.
FrameFeature project(const FrameFeature& image_feature, const SupportMemory& memory,
                     bool post_normalize = false);

/// Element-wise projection of an image-modality sequence; order preserved.
/// Parallelizes over frames (bit-identical to the serial path).
SequenceRepresentation project_sequence(const SequenceRepresentation& video,
                                        const SupportMemory& memory, bool post_normalize = false);

/// Serial reference for project_sequence, kept for testing/benchmarks.
SequenceRepresentation project_sequence_serial(const SequenceRepresentation& video,
                                               const SupportMemory& memory,
                                               bool post_normalize = false);

struct AnchorWeight {
    std::size_t anchor_index = 0;
    std::string provenance;
    double weight = 0.0;
};

/// Top-k anchors by descending weight; ties broken by ascending index.
std::vector<AnchorWeight> projection_diagnostics(const FrameFeature& image_feature,
                                                 const SupportMemory& memory, std::size_t top_k);

void save_memory(const SupportMemory& memory, const std::string& feature_path,
                 const std::string& provenance_path);
SupportMemory load_memory(const std::string& feature_path, const std::string& provenance_path);

}  // namespace topa
