#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradweave/model.hpp"
#include "gradweave/synthgen.hpp"
#include "gradweave/trainer.hpp"

namespace gradweave {

// One experiment end to end: benchmark generation, training, deployment
// optimization, evaluation. Model input extents always follow the benchmark
// and the class count follows the training split, so neither is configured
// here.
struct ExperimentConfig {
    BenchmarkSpec benchmark = default_benchmark_spec();
    std::array<int, 3> trunk_channels{16, 32, 64};
    int embed_dim = 64;
    int aux_channels = 16;
    TrainConfig train;
    TTOConfig tto;
    int target_domain = 3;  // -1 trains on every domain
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
    std::string out = "runs/exp";

    // Architecture fields plus benchmark extents; num_classes stays at the
    // placeholder 1 until a training split fixes it.
    ModelConfig model() const;
    void validate() const;
};

// Strict parse: unknown keys rejected, type and constraint errors name the
// offending key with its dotted path. Absent keys keep their defaults.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

// Fully resolved config. The paper_defaults entry lists the dotted keys
// whose current value still matches a default taken from the reference
// hyperparameter set, so overrides are visible at a glance.
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);

// An empty or whitespace-only file reads as {} (all defaults).
ExperimentConfig load_experiment_config(const std::string& path);
void save_experiment_config(const std::string& path, const ExperimentConfig& cfg);

const char* design_token(Design d);  // "a".."d"
Design design_from_token(const std::string& token);

}  // namespace gradweave
