#pragma once

#include "mmcda/encoders.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mmcda {

/// Inclusive frame span [start, end].
struct MomentBoundary {
    Index start = 0;
    Index end = 0;

    Index length() const { return end - start + 1; }
    bool contains(Index t) const { return t >= start && t <= end; }
    friend bool operator==(const MomentBoundary&, const MomentBoundary&) = default;
};

struct Sample {
    std::string id;
    FeatureSequence video;     // T x raw_dim
    std::vector<int> query;    // token ids
    std::optional<MomentBoundary> boundary;

    friend bool operator==(const Sample&, const Sample&) = default;
};

enum class Domain { source, target };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

struct DomainDataset {
    Domain domain = Domain::source;
    std::uint64_t seed = 0;
    Index dim = 0;
    Index vocab_size = 0;
    std::vector<Sample> samples;

    bool fully_annotated() const;
    friend bool operator==(const DomainDataset&, const DomainDataset&) = default;
};

/// Samples stripped of their boundaries. Training on the target domain only
/// ever receives this view.
struct UnlabeledSample {
    const FeatureSequence* video;
    const std::vector<int>* query;
};
using UnlabeledView = std::vector<UnlabeledSample>;
UnlabeledView strip_labels(const DomainDataset& dataset);

struct DomainProfile {
    Index count = 200;
    Index t_min = 24, t_max = 32;                   // video length range
    double moment_min = 0.25, moment_max = 0.5;     // moment length as a fraction of T
    Index n_min = 5, n_max = 8;                     // query length range
};

/// Target features are mapped x -> R (s * x) + t.
struct ShiftSpec {
    double translation = 0.0;     // |t_j| for every dimension, random sign
    double rotation_deg = 0.0;    // rotation in a random 2-plane
    double scale_spread = 0.0;    // s_j uniform in [1 - spread, 1 + spread]
};

struct GenConfig {
    DomainProfile source;
    DomainProfile target;
    Index raw_dim = 16;
    Index event_dim = 8;
    Index events = 12;
    Index tokens_per_event = 3;
    Index filler_tokens = 4;
    double event_token_prob = 0.7;
    double noise = 0.1;
    double signal_scale = 1.0;  // multiplies the event images before noise
    ShiftSpec shift;
    std::uint64_t seed = 0;

    Index vocab_size() const { return events * tokens_per_event + filler_tokens; }
    void validate() const;
};

/// Preset sized after one benchmark family: "activity", "charades" or "tacos".
DomainProfile profile_preset(const std::string& name);

struct GeneratedPair {
    DomainDataset source;
    DomainDataset target;
};

/// Deterministic in `config` (including its seed).
GeneratedPair generate(const GenConfig& config);

/// manifest.json plus headerless little-endian float32 feature files.
void save_dataset(const DomainDataset& dataset, const std::filesystem::path& directory);
DomainDataset load_dataset(const std::filesystem::path& directory);

}  // namespace mmcda
