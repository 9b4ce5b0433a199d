#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "topa/tideo.hpp"

namespace topa {

enum class Modality { Text, Image, Projected };

const char* to_string(Modality m);

struct FrameFeature {
    std::vector<double> vector;
    Modality modality = Modality::Text;
    bool normalized = false;
};

/// Ordered per-frame features of one video; homogeneous modality and width.
struct SequenceRepresentation {
    std::vector<FrameFeature> frames;
    Modality modality = Modality::Text;

    std::size_t size() const { return frames.size(); }
    std::size_t dimension() const { return frames.empty() ? 0 : frames.front().vector.size(); }
};

/// Aligned text/image encoder pair. Encoders emit unit-normalized vectors of
/// the shared width. The image side may be absent for adapters that only
/// ingest pre-extracted feature files.
struct EncoderPair {
    std::size_t dimension = 0;
    std::string descriptor;
    std::function<std::vector<double>(const std::string&)> encode_text;
    std::function<std::vector<double>(const std::string&)> encode_image;
};

/// Synthetic stand-in for an aligned encoder pair with a controllable
/// modality gap: image(c) = normalize(base(c) + gap_offset + noise_c),
/// text(c) = normalize(base(c)).
struct SyntheticEncoderSpec {
    std::vector<std::string> concept_vocabulary;
    std::size_t dimension = 32;
    std::vector<double> gap_offset;  // constant displacement, dimension-d (empty = zero)
    double noise_scale = 0.0;
    std::uint64_t rng_seed = 0;
};

/// Builds a deterministic gap vector of the given magnitude.
std::vector<double> make_gap_offset(std::size_t dimension, double magnitude, std::uint64_t seed);

/// Rejects specs whose gap/noise collapse concept separations (the nearest
/// text embedding of image(c) must be text(c) for every concept).
EncoderPair make_synthetic_pair(const SyntheticEncoderSpec& spec);

/// Uniform resampling of n source frames onto target positions: evenly
/// spaced real positions (i + 0.5) * n / target - 0.5, rounded half-down.
std::vector<std::size_t> uniform_indices(std::size_t n, std::size_t target);

/// f^t_i: unit-normalized mean of the frame caption's and object captions'
/// text features (each constituent unit-normalized before the mean).
FrameFeature encode_textual_frame(const TextualFrame& frame, const EncoderPair& pair);

SequenceRepresentation encode_tideo(const Tideo& tideo, const EncoderPair& pair,
                                    std::size_t target_frames);

/// Ingests pre-extracted per-frame image features, resamples, normalizes.
SequenceRepresentation encode_video_features(const std::vector<std::vector<double>>& features,
                                             std::size_t expected_dimension,
                                             std::size_t target_frames);

/// Resamples an already-encoded sequence (used by the frame-count ablation).
SequenceRepresentation resample_sequence(const SequenceRepresentation& seq,
                                         std::size_t target_frames);

}  // namespace topa
