#include "topa/encoder.hpp"

#include <cctype>
#include <cmath>
#include <memory>
#include <random>
#include <unordered_map>

#include "topa/error.hpp"
#include "topa/linalg.hpp"

namespace topa {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::vector<double> gaussian_vector(std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(d);
    for (auto& x : v) x = normal(rng);
    return v;
}

// Word-boundary, case-insensitive containment of `word` in `text`.
bool contains_word(const std::string& text, const std::string& word) {
    if (word.empty()) return false;
    auto lower = [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); };
    std::string t;
    t.reserve(text.size());
    for (char c : text) t.push_back(lower(c));
    std::string w;
    w.reserve(word.size());
    for (char c : word) w.push_back(lower(c));
    std::size_t pos = 0;
    while ((pos = t.find(w, pos)) != std::string::npos) {
        bool left_ok = pos == 0 || !std::isalnum(static_cast<unsigned char>(t[pos - 1]));
        std::size_t end = pos + w.size();
        bool right_ok = end >= t.size() || !std::isalnum(static_cast<unsigned char>(t[end]));
        if (left_ok && right_ok) return true;
        ++pos;
    }
    return false;
}

struct SyntheticEncoderState {
    SyntheticEncoderSpec spec;
    std::vector<std::vector<double>> text_embeddings;   // normalized base(c)
    std::vector<std::vector<double>> image_embeddings;  // normalized base(c)+gap+noise
};

std::vector<double> hashed_fallback(const std::string& s, std::size_t d, std::uint64_t seed) {
    std::vector<double> v = gaussian_vector(d, splitmix64(seed ^ fnv1a(normalize_text(s))));
    normalize(v);
    return v;
}

int match_concept(const SyntheticEncoderState& state, const std::string& s) {
    for (std::size_t i = 0; i < state.spec.concept_vocabulary.size(); ++i) {
        if (contains_word(s, state.spec.concept_vocabulary[i])) return static_cast<int>(i);
    }
    return -1;
}

}  // namespace

const char* to_string(Modality m) {
    switch (m) {
        case Modality::Text: return "text";
        case Modality::Image: return "image";
        case Modality::Projected: return "projected";
    }
    return "text";
}

std::vector<double> make_gap_offset(std::size_t dimension, double magnitude, std::uint64_t seed) {
    std::vector<double> gap = gaussian_vector(dimension, splitmix64(seed ^ 0x6761705full));
    normalize(gap);
    for (double& v : gap) v *= magnitude;
    return gap;
}

EncoderPair make_synthetic_pair(const SyntheticEncoderSpec& spec) {
    if (spec.concept_vocabulary.empty()) {
        throw Error(ErrorCode::EmptyVocabulary, "synthetic encoder needs at least one concept");
    }
    if (!spec.gap_offset.empty() && spec.gap_offset.size() != spec.dimension) {
        throw Error(ErrorCode::DimensionMismatch, "gap_offset width != encoder dimension");
    }

    auto state = std::make_shared<SyntheticEncoderState>();
    state->spec = spec;
    std::vector<double> gap = spec.gap_offset.empty() ? std::vector<double>(spec.dimension, 0.0)
                                                      : spec.gap_offset;
    for (std::size_t i = 0; i < spec.concept_vocabulary.size(); ++i) {
        std::vector<double> base = gaussian_vector(spec.dimension, splitmix64(spec.rng_seed + i));
        std::vector<double> text = base;
        normalize(text);
        std::vector<double> noise(spec.dimension, 0.0);
        if (spec.noise_scale > 0.0) {
            noise = gaussian_vector(spec.dimension, splitmix64(spec.rng_seed ^ (0x100000 + i)));
            for (double& v : noise) v *= spec.noise_scale;
        }
        std::vector<double> image = base;
        for (std::size_t k = 0; k < spec.dimension; ++k) image[k] += gap[k] + noise[k];
        normalize(image);
        state->text_embeddings.push_back(std::move(text));
        state->image_embeddings.push_back(std::move(image));
    }

    // Reject specs where the gap/noise collapse concept separations: the
    // nearest text embedding of image(c) over the vocabulary must be text(c).
    for (std::size_t c = 0; c < state->image_embeddings.size(); ++c) {
        const auto& img = state->image_embeddings[c];
        std::size_t best = 0;
        double best_sim = -2.0;
        for (std::size_t k = 0; k < state->text_embeddings.size(); ++k) {
            double sim = dot(img.data(), state->text_embeddings[k].data(), spec.dimension);
            if (sim > best_sim) {
                best_sim = sim;
                best = k;
            }
        }
        if (best != c) {
            throw Error(ErrorCode::EncoderFailure,
                        "synthetic spec rejected: image('" + spec.concept_vocabulary[c] +
                            "') is nearest to text('" + spec.concept_vocabulary[best] +
                            "'); reduce noise_scale or gap magnitude");
        }
    }

    EncoderPair pair;
    pair.dimension = spec.dimension;
    char descriptor[160];
    std::snprintf(descriptor, sizeof(descriptor), "synthetic:v=%zu:d=%zu:seed=%llu:noise=%.4f:gap=%.4f",
                  spec.concept_vocabulary.size(), spec.dimension,
                  static_cast<unsigned long long>(spec.rng_seed), spec.noise_scale,
                  l2_norm(gap.data(), gap.size()));
    pair.descriptor = descriptor;
    std::uint64_t seed = spec.rng_seed;
    pair.encode_text = [state, seed](const std::string& s) {
        int c = match_concept(*state, s);
        if (c >= 0) return state->text_embeddings[static_cast<std::size_t>(c)];
        return hashed_fallback(s, state->spec.dimension, seed);
    };
    pair.encode_image = [state, seed](const std::string& s) {
        int c = match_concept(*state, s);
        if (c >= 0) return state->image_embeddings[static_cast<std::size_t>(c)];
        return hashed_fallback(s, state->spec.dimension, seed ^ 0x696d67ull);
    };
    return pair;
}

std::vector<std::size_t> uniform_indices(std::size_t n, std::size_t target) {
    assert(n >= 1 && target >= 1);
    std::vector<std::size_t> out(target);
    for (std::size_t i = 0; i < target; ++i) {
        double pos = (static_cast<double>(i) + 0.5) * static_cast<double>(n) /
                         static_cast<double>(target) -
                     0.5;
        double idx = std::ceil(pos - 0.5);  // round half-down
        if (idx < 0.0) idx = 0.0;
        if (idx > static_cast<double>(n - 1)) idx = static_cast<double>(n - 1);
        out[i] = static_cast<std::size_t>(idx);
    }
    return out;
}

FrameFeature encode_textual_frame(const TextualFrame& frame, const EncoderPair& pair) {
    if (!pair.encode_text) {
        throw Error(ErrorCode::EncoderFailure, "pair has no text encoder");
    }
    std::vector<double> mean(pair.dimension, 0.0);
    std::size_t count = 0;
    auto accumulate = [&](const std::string& text) {
        std::vector<double> v = pair.encode_text(text);
        if (v.size() != pair.dimension) {
            throw Error(ErrorCode::EncoderFailure,
                        "text encoder emitted wrong width for \"" + text.substr(0, 40) + "\"");
        }
        normalize(v);
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += v[k];
        ++count;
    };
    accumulate(frame.caption);
    for (const auto& oc : frame.object_captions) accumulate(oc);
    for (double& v : mean) v /= static_cast<double>(count);
    normalize(mean);
    FrameFeature out;
    out.vector = std::move(mean);
    out.modality = Modality::Text;
    out.normalized = true;
    return out;
}

SequenceRepresentation encode_tideo(const Tideo& tideo, const EncoderPair& pair,
                                    std::size_t target_frames) {
    SequenceRepresentation seq;
    seq.modality = Modality::Text;
    std::vector<std::size_t> idx = uniform_indices(tideo.frames.size(), target_frames);
    seq.frames.reserve(idx.size());
    std::unordered_map<std::size_t, FrameFeature> cache;
    for (std::size_t i : idx) {
        auto it = cache.find(i);
        if (it == cache.end()) {
            it = cache.emplace(i, encode_textual_frame(tideo.frames[i], pair)).first;
        }
        seq.frames.push_back(it->second);
    }
    return seq;
}

SequenceRepresentation encode_video_features(const std::vector<std::vector<double>>& features,
                                             std::size_t expected_dimension,
                                             std::size_t target_frames) {
    if (features.empty()) {
        throw Error(ErrorCode::DimensionMismatch, "no input features");
    }
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (features[i].size() != expected_dimension) {
            throw Error(ErrorCode::DimensionMismatch,
                        "feature " + std::to_string(i) + " has width " +
                            std::to_string(features[i].size()) + ", expected " +
                            std::to_string(expected_dimension));
        }
    }
    SequenceRepresentation seq;
    seq.modality = Modality::Image;
    std::vector<std::size_t> idx = uniform_indices(features.size(), target_frames);
    seq.frames.reserve(idx.size());
    for (std::size_t i : idx) {
        FrameFeature f;
        f.vector = features[i];
        normalize(f.vector);
        f.modality = Modality::Image;
        f.normalized = true;
        seq.frames.push_back(std::move(f));
    }
    return seq;
}

SequenceRepresentation resample_sequence(const SequenceRepresentation& seq,
                                         std::size_t target_frames) {
    SequenceRepresentation out;
    out.modality = seq.modality;
    std::vector<std::size_t> idx = uniform_indices(seq.frames.size(), target_frames);
    out.frames.reserve(idx.size());
    for (std::size_t i : idx) out.frames.push_back(seq.frames[i]);
    return out;
}

}  // namespace topa
