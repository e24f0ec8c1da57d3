#pragma once

#include "mmcda/model.hpp"
#include "mmcda/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>

namespace mmcda {

struct InferenceConfig {
    std::optional<double> threshold;  // falls back to the dataset profile default
    std::vector<Index> top_n{1, 5};
    std::vector<double> iou_thresholds{0.3, 0.5, 0.7};
};

/// Everything a CLI run can be configured with. Each section and key is
/// optional in JSON; missing values keep the defaults below, unknown keys are
/// a ConfigError.
struct RunConfig {
    ModelConfig model;
    TrainConfig pretrain = default_training();  // stage 1 (loss weights unused)
    TrainConfig train = default_training();     // stage 2
    GenConfig generate = default_generate();
    std::string source_profile = "activity";
    std::string target_profile = "charades";
    InferenceConfig inference;

    /// activity -> charades presets, translation shift 3, signal scale 0.5.
    static GenConfig default_generate();
    /// TrainConfig defaults with moment pooling of the source frames.
    static TrainConfig default_training();

    /// Overwrite seeds everywhere a run draws randomness.
    void set_seed(std::uint64_t seed);
    void validate() const;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
};

/// Parse a comma separated list such as "0.3,0.5,0.7".
std::vector<double> parse_real_list(const std::string& text);
std::vector<Index> parse_count_list(const std::string& text);

}  // namespace mmcda
