#include "gradweave/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "gradweave/tensor_io.hpp"

namespace gradweave {

namespace fs = std::filesystem;
using nlohmann::json;

json model_config_to_json(const ModelConfig& cfg) {
    return json{{"height", cfg.height},
                {"width", cfg.width},
                {"trunk_channels", cfg.trunk_channels},
                {"embed_dim", cfg.embed_dim},
                {"num_classes", cfg.num_classes},
                {"aux_channels", cfg.aux_channels}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.height = j.at("height").get<int>();
    cfg.width = j.at("width").get<int>();
    auto ch = j.at("trunk_channels").get<std::vector<int>>();
    if (ch.size() != 3)
        throw std::invalid_argument("model config: trunk_channels must have 3 entries");
    std::copy(ch.begin(), ch.end(), cfg.trunk_channels.begin());
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.aux_channels = j.at("aux_channels").get<int>();
    cfg.validate();
    return cfg;
}

void save_checkpoint(const std::string& dir, const ModelConfig& cfg, const ModelParams& params,
                     const json& extra) {
    fs::create_directories(dir);
    std::vector<Tensor> records;
    records.reserve(16);
    for (const auto& t : params.trunk) records.push_back(t);
    for (const auto& t : params.primary) records.push_back(t);
    for (const auto& t : params.aux) records.push_back(t);
    write_tensor_file((fs::path(dir) / "params.gwt").string(), records);

    json manifest{{"format", "gw-checkpoint"},
                  {"version", 1},
                  {"model", model_config_to_json(cfg)},
                  {"tensor_file", "params.gwt"},
                  {"tensor_names", kParamNames},
                  {"extra", extra}};
    std::ofstream os(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot write manifest in " + dir);
    os << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: missing manifest.json in " + dir);
    json manifest = json::parse(is);
    if (manifest.at("format").get<std::string>() != "gw-checkpoint")
        throw std::runtime_error("checkpoint: unrecognized manifest format in " + dir);

    Checkpoint ckpt;
    ckpt.config = model_config_from_json(manifest.at("model"));
    ckpt.extra = manifest.value("extra", json::object());

    auto file = manifest.at("tensor_file").get<std::string>();
    auto records = read_tensor_file((fs::path(dir) / file).string());
    if (records.size() != 16)
        throw std::runtime_error("checkpoint: expected 16 tensors, found " +
                                 std::to_string(records.size()));
    const auto shapes = param_shapes(ckpt.config);
    for (size_t i = 0; i < 16; ++i)
        if (records[i].shape != shapes[i])
            throw std::runtime_error(std::string("checkpoint: shape mismatch for ") +
                                     kParamNames[i]);
    for (size_t i = 0; i < 6; ++i) ckpt.params.trunk[i] = std::move(records[i]);
    for (size_t i = 0; i < 4; ++i) ckpt.params.primary[i] = std::move(records[6 + i]);
    for (size_t i = 0; i < 6; ++i) ckpt.params.aux[i] = std::move(records[10 + i]);
    return ckpt;
}

}  // namespace gradweave
