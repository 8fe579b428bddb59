#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "domalign/synthetic.hpp"
#include "domalign/toytrain.hpp"

namespace domalign {

/// Where toy-adapt gets its images: the synthetic generator, or directories
/// of images with sidecar label maps (source and eval sides).
struct DataConfig {
    SyntheticDomainSpec synthetic;
    std::optional<std::string> source_dir;
    std::optional<std::string> target_dir;
    std::optional<std::string> eval_dir;
    std::string label_suffix = "_label.png";

    bool from_directories() const { return source_dir.has_value(); }
    void validate() const;
};

struct ToyAdaptConfig {
    PipelineConfig pipeline;
    DataConfig data;

    void validate() const;
};

// Serialization writes every field. Parsing starts from the defaults,
// overrides the keys present and rejects unknown keys with ConfigError.
nlohmann::json to_json(const GammaSolveConfig& c);
nlohmann::json to_json(const BilateralParams& p);
nlohmann::json to_json(const PerturbConfig& c);
nlohmann::json to_json(const PipelineConfig& c);
nlohmann::json to_json(const SyntheticDomainSpec& s);
nlohmann::json to_json(const DataConfig& d);
nlohmann::json to_json(const ToyAdaptConfig& c);

GammaSolveConfig gamma_config_from_json(const nlohmann::json& j, GammaSolveConfig base = {});
BilateralParams bilateral_from_json(const nlohmann::json& j, BilateralParams base = {});
PerturbConfig perturb_config_from_json(const nlohmann::json& j, PerturbConfig base = {});
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig base = {});
SyntheticDomainSpec synthetic_spec_from_json(const nlohmann::json& j, SyntheticDomainSpec base = {});
DataConfig data_config_from_json(const nlohmann::json& j, DataConfig base = {});
ToyAdaptConfig toy_adapt_config_from_json(const nlohmann::json& j);

ToyAdaptConfig load_toy_adapt_config(const std::filesystem::path& path);

/// Builds the training set the config describes.
TrainingData load_training_data(const DataConfig& d);

}  // namespace domalign
