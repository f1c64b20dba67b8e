#pragma once

#include <string>

#include <json.hpp>

#include "gradweave/model.hpp"

namespace gradweave {

// A checkpoint is a directory: manifest.json (model config + caller metadata)
// plus params.gwt holding the 16 parameter tensors in layout order. Reload is
// bit-exact.
struct Checkpoint {
    ModelConfig config;
    ModelParams params;
    nlohmann::json extra;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::string& dir, const ModelConfig& cfg, const ModelParams& params,
                     const nlohmann::json& extra);
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace gradweave
