#include "gradweave/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>

namespace gradweave {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& key, const std::string& what) {
    throw std::invalid_argument("config: " + key + ": " + what);
}

void check_keys(const json& j, const std::string& scope,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object()) fail(scope.empty() ? "<root>" : scope, "expected an object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (item.key() == a) {
                known = true;
                break;
            }
        if (!known) fail(scope.empty() ? item.key() : scope + "." + item.key(), "unknown key");
    }
}

template <typename T>
void read(const json& j, const std::string& scope, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        fail(scope + key, std::string("bad value (") + e.what() + ")");
    }
}

std::array<float, 3> read_color(const json& cj) {
    if (!cj.is_array() || cj.size() != 3) throw std::invalid_argument("expected [r,g,b]");
    return {cj.at(0).get<float>(), cj.at(1).get<float>(), cj.at(2).get<float>()};
}

BenchmarkSpec parse_benchmark(const json& j) {
    BenchmarkSpec spec = default_benchmark_spec();
    check_keys(j, "benchmark",
               {"domains", "identities_per_domain", "samples_per_identity", "height", "width",
                "noise", "seed"});
    if (j.contains("domains")) {
        const json& dl = j.at("domains");
        if (!dl.is_array()) fail("benchmark.domains", "expected an array");
        spec.domains.clear();
        int idx = 0;
        for (const json& dj : dl) {
            const std::string scope = "benchmark.domains[" + std::to_string(idx) + "]";
            check_keys(dj, scope,
                       {"id", "name", "palette", "clutter", "luminance", "scale", "jitter",
                        "cameras"});
            DomainSpec d;
            d.id = idx;
            d.name = "domain" + std::to_string(idx);
            d.palette = {{0.5f, 0.5f, 0.5f}};
            read(dj, scope + ".", "id", d.id);
            read(dj, scope + ".", "name", d.name);
            if (dj.contains("palette")) {
                try {
                    d.palette.clear();
                    for (const json& cj : dj.at("palette")) d.palette.push_back(read_color(cj));
                } catch (const std::exception& e) {
                    fail(scope + ".palette", std::string("bad value (") + e.what() + ")");
                }
            }
            read(dj, scope + ".", "clutter", d.clutter);
            read(dj, scope + ".", "luminance", d.luminance);
            if (dj.contains("scale")) {
                try {
                    d.scale_lo = dj.at("scale").at(0).get<float>();
                    d.scale_hi = dj.at("scale").at(1).get<float>();
                } catch (const json::exception& e) {
                    fail(scope + ".scale", std::string("bad value (") + e.what() + ")");
                }
            }
            read(dj, scope + ".", "jitter", d.jitter);
            read(dj, scope + ".", "cameras", d.cameras);
            spec.domains.push_back(std::move(d));
            ++idx;
        }
    }
    read(j, "benchmark.", "identities_per_domain", spec.identities_per_domain);
    read(j, "benchmark.", "samples_per_identity", spec.samples_per_identity);
    read(j, "benchmark.", "height", spec.height);
    read(j, "benchmark.", "width", spec.width);
    if (j.contains("noise")) {
        const json& nj = j.at("noise");
        check_keys(nj, "benchmark.noise",
                   {"morph_radius", "shift", "drop_prob", "leak_prob", "blur_radius"});
        read(nj, "benchmark.noise.", "morph_radius", spec.noise.morph_radius);
        read(nj, "benchmark.noise.", "shift", spec.noise.shift);
        read(nj, "benchmark.noise.", "drop_prob", spec.noise.drop_prob);
        read(nj, "benchmark.noise.", "leak_prob", spec.noise.leak_prob);
        read(nj, "benchmark.noise.", "blur_radius", spec.noise.blur_radius);
    }
    read(j, "benchmark.", "seed", spec.seed);
    return spec;
}

template <typename Enum>
Enum token_to_enum(const std::string& scope, const std::string& token,
                   std::initializer_list<std::pair<const char*, Enum>> table) {
    for (const auto& [name, value] : table)
        if (token == name) return value;
    std::string allowed;
    for (const auto& [name, value] : table) {
        (void)value;
        if (!allowed.empty()) allowed += "|";
        allowed += name;
    }
    fail(scope, "expected one of " + allowed + ", got \"" + token + "\"");
}

}  // namespace

const char* design_token(Design d) {
    switch (d) {
        case Design::none_a: return "a";
        case Design::aux_referenced_b: return "b";
        case Design::mutual_c: return "c";
        case Design::primary_referenced_d: return "d";
    }
    throw std::invalid_argument("design_token: unknown design");
}

Design design_from_token(const std::string& token) {
    return token_to_enum<Design>("design", token,
                                 {{"a", Design::none_a},
                                  {"b", Design::aux_referenced_b},
                                  {"c", Design::mutual_c},
                                  {"d", Design::primary_referenced_d}});
}

ModelConfig ExperimentConfig::model() const {
    ModelConfig mc;
    mc.height = benchmark.height;
    mc.width = benchmark.width;
    mc.trunk_channels = trunk_channels;
    mc.embed_dim = embed_dim;
    mc.aux_channels = aux_channels;
    mc.num_classes = 1;
    return mc;
}

void ExperimentConfig::validate() const {
    if (benchmark.domains.empty())
        throw std::invalid_argument("config: benchmark.domains: need at least one domain");
    if (target_domain < -1 || target_domain >= static_cast<int>(benchmark.domains.size()))
        throw std::invalid_argument("config: target_domain: out of range");
    if (seeds.empty()) throw std::invalid_argument("config: seeds: need at least one seed");
    if (out.empty()) throw std::invalid_argument("config: out: empty output directory");
    model().validate();
    train.validate();
    tto.validate();
}

ExperimentConfig experiment_config_from_json(const json& j) {
    ExperimentConfig cfg;
    check_keys(j, "",
               {"benchmark", "model", "train", "tto", "target_domain", "seeds", "out",
                "paper_defaults"});
    if (j.contains("benchmark")) cfg.benchmark = parse_benchmark(j.at("benchmark"));
    if (j.contains("model")) {
        const json& mj = j.at("model");
        check_keys(mj, "model", {"trunk_channels", "embed_dim", "aux_channels"});
        if (mj.contains("trunk_channels")) {
            std::vector<int> ch;
            read(mj, "model.", "trunk_channels", ch);
            if (ch.size() != 3) fail("model.trunk_channels", "expected 3 entries");
            std::copy(ch.begin(), ch.end(), cfg.trunk_channels.begin());
        }
        read(mj, "model.", "embed_dim", cfg.embed_dim);
        read(mj, "model.", "aux_channels", cfg.aux_channels);
    }
    if (j.contains("train")) {
        const json& tj = j.at("train");
        check_keys(tj, "train",
                   {"epochs", "p", "k", "lr", "lambda", "margin", "design", "optimizer",
                    "reference", "seed"});
        read(tj, "train.", "epochs", cfg.train.epochs);
        read(tj, "train.", "p", cfg.train.p);
        read(tj, "train.", "k", cfg.train.k);
        read(tj, "train.", "lr", cfg.train.lr);
        read(tj, "train.", "lambda", cfg.train.lambda);
        read(tj, "train.", "margin", cfg.train.margin);
        if (tj.contains("design")) {
            std::string token;
            read(tj, "train.", "design", token);
            cfg.train.design = design_from_token(token);
        }
        if (tj.contains("optimizer")) {
            std::string token;
            read(tj, "train.", "optimizer", token);
            cfg.train.optimizer = token_to_enum<Optimizer>(
                "train.optimizer", token, {{"adam", Optimizer::adam}, {"sgd", Optimizer::sgd}});
        }
        if (tj.contains("reference")) {
            std::string token;
            read(tj, "train.", "reference", token);
            cfg.train.reference = token_to_enum<Reference>(
                "train.reference", token, {{"ce", Reference::ce}, {"prim", Reference::prim}});
        }
        read(tj, "train.", "seed", cfg.train.seed);
    }
    if (j.contains("tto")) {
        const json& tj = j.at("tto");
        check_keys(tj, "tto", {"steps", "lr", "batch_size", "persistence"});
        read(tj, "tto.", "steps", cfg.tto.steps);
        read(tj, "tto.", "lr", cfg.tto.lr);
        read(tj, "tto.", "batch_size", cfg.tto.batch_size);
        if (tj.contains("persistence")) {
            std::string token;
            read(tj, "tto.", "persistence", token);
            cfg.tto.persistence = token_to_enum<TTOPersistence>(
                "tto.persistence", token,
                {{"persist", TTOPersistence::persist},
                 {"reset-per-batch", TTOPersistence::reset_per_batch}});
        }
    }
    read(j, "", "target_domain", cfg.target_domain);
    read(j, "", "seeds", cfg.seeds);
    read(j, "", "out", cfg.out);
    // paper_defaults is informational output; accepted and recomputed.

    cfg.validate();
    return cfg;
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["benchmark"] = benchmark_spec_to_json(cfg.benchmark);
    j["model"] = {{"trunk_channels", cfg.trunk_channels},
                  {"embed_dim", cfg.embed_dim},
                  {"aux_channels", cfg.aux_channels}};
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"p", cfg.train.p},
                  {"k", cfg.train.k},
                  {"lr", cfg.train.lr},
                  {"lambda", cfg.train.lambda},
                  {"margin", cfg.train.margin},
                  {"design", design_token(cfg.train.design)},
                  {"optimizer", optimizer_name(cfg.train.optimizer)},
                  {"reference", reference_name(cfg.train.reference)},
                  {"seed", cfg.train.seed}};
    j["tto"] = {{"steps", cfg.tto.steps},
                {"lr", cfg.tto.lr},
                {"batch_size", cfg.tto.batch_size},
                {"persistence", persistence_name(cfg.tto.persistence)}};
    j["target_domain"] = cfg.target_domain;
    j["seeds"] = cfg.seeds;
    j["out"] = cfg.out;

    // Reference hyperparameters: flag the keys still carrying them so a
    // resolved config shows which knobs were never overridden.
    json flags = json::array();
    if (cfg.train.lr == 3.5e-4f) flags.push_back("train.lr");
    if (cfg.train.lambda == 0.1f) flags.push_back("train.lambda");
    if (cfg.train.k == 4) flags.push_back("train.k");
    if (cfg.train.optimizer == Optimizer::adam) flags.push_back("train.optimizer");
    if (cfg.tto.steps == 1) flags.push_back("tto.steps");
    if (cfg.tto.lr == 1e-6f) flags.push_back("tto.lr");
    if (cfg.tto.batch_size == 200) flags.push_back("tto.batch_size");
    j["paper_defaults"] = flags;
    return j;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot read " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    std::string text = buf.str();
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) text = "{}";
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument("config: " + path + ": " + e.what());
    }
    return experiment_config_from_json(j);
}

void save_experiment_config(const std::string& path, const ExperimentConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("config: cannot write " + path);
    os << experiment_config_to_json(cfg).dump(2) << '\n';
}

}  // namespace gradweave
