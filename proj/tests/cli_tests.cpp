#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "gradweave/config.hpp"

// End-to-end checks of the command line binary: exit codes, file outputs,
// and byte-identical reruns. The heavy scientific claims live elsewhere;
// these runs use a miniature benchmark so the whole file stays fast.

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gradweave;

namespace {

const char* cli_path() { return GRADWEAVE_CLI_PATH; }

int run(const std::string& args, const std::string& stderr_file = "") {
    std::string cmd = std::string(cli_path()) + " " + args + " 2>";
    cmd += stderr_file.empty() ? std::string("/dev/null") : stderr_file;
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path scratch_root() {
    fs::path root = fs::temp_directory_path() / "gradweave_cli_tests";
    fs::remove_all(root);
    fs::create_directories(root);
    return root;
}

ExperimentConfig tiny_config(const fs::path& out) {
    ExperimentConfig c;
    c.benchmark = default_benchmark_spec();
    c.benchmark.domains.resize(2);
    c.benchmark.identities_per_domain = 4;
    c.benchmark.samples_per_identity = 4;
    c.benchmark.height = 16;
    c.benchmark.width = 8;
    c.benchmark.seed = 11;
    c.trunk_channels = {4, 6, 8};
    c.embed_dim = 8;
    c.aux_channels = 4;
    c.train.epochs = 1;
    c.train.p = 2;
    c.train.k = 2;
    c.train.seed = 1;
    c.tto.steps = 1;
    c.tto.batch_size = 7;
    c.target_domain = 1;
    c.seeds = {1};
    c.out = (out / "run").string();
    return c;
}

}  // namespace

TEST_CASE("cli: usage errors exit 1, help exits 0") {
    CHECK(run("") == 1);
    CHECK(run("no-such-command") == 1);
    CHECK(run("train --no-such-flag") == 1);
    CHECK(run("--help") == 0);
}

TEST_CASE("cli: pipeline produces self-describing outputs and identical reruns") {
    const fs::path root = scratch_root();
    ExperimentConfig c = tiny_config(root);
    const std::string cfg = (root / "config.json").string();
    save_experiment_config(cfg, c);

    REQUIRE(run("gen-data --config " + cfg) == 0);
    const fs::path data = fs::path(c.out) / "data";
    CHECK(fs::exists(data / "manifest.json"));
    CHECK(fs::exists(data / "config.json"));

    // regenerating into a second directory yields the same bytes
    REQUIRE(run("gen-data --config " + cfg + " --out " + (root / "data2").string()) == 0);
    CHECK(slurp(data / "manifest.json") == slurp(root / "data2" / "manifest.json"));
    for (const auto& e : fs::directory_iterator(data))
        if (e.path().extension() == ".gwt")
            CHECK(slurp(e.path()) == slurp(root / "data2" / e.path().filename()));

    REQUIRE(run("train --config " + cfg) == 0);
    const fs::path ckpt = fs::path(c.out) / "checkpoint";
    CHECK(fs::exists(ckpt / "manifest.json"));
    CHECK(fs::exists(ckpt / "params.gwt"));
    CHECK(fs::exists(ckpt / "telemetry.csv"));
    CHECK(fs::exists(ckpt / "config.json"));

    REQUIRE(run("eval --config " + cfg) == 0);
    const fs::path metrics = fs::path(c.out) / "eval" / "metrics.json";
    json m = json::parse(slurp(metrics));
    CHECK(m.at("format") == "gradweave-metrics/1");
    CHECK(m.at("map").get<double>() >= 0.0);
    CHECK(m.at("map").get<double>() <= 1.0);
    CHECK(m.at("evaluated").get<int>() == 16);
    CHECK(m.at("protocol").at("target_domain") == 1);
    CHECK(m.at("conflict_rate_per_epoch").size() == 1);
    CHECK(m.at("config_fingerprint").get<std::string>().size() == 16);

    REQUIRE(run("eval --config " + cfg + " --out " + (root / "eval2").string()) == 0);
    CHECK(slurp(metrics) == slurp(root / "eval2" / "metrics.json"));

    REQUIRE(run("tto --config " + cfg + " --steps 1") == 0);
    json t = json::parse(slurp(fs::path(c.out) / "tto" / "metrics.json"));
    CHECK(t.at("protocol").at("tto").at("steps") == 1);
    CHECK(t.at("protocol").at("tto").at("persistence") == "persist");

    REQUIRE(run("tto-sweep --config " + cfg + " --steps 2") == 0);
    const std::string sweep = slurp(fs::path(c.out) / "tables" / "tto_sweep.csv");
    CHECK(sweep.rfind("target,map_0,map_1,map_2,rank1_0,rank1_1,rank1_2\n1,", 0) == 0);

    // a full retrain lands on byte-identical parameters and telemetry
    REQUIRE(run("train --config " + cfg + " --out " + (root / "ckpt2").string()) == 0);
    CHECK(slurp(ckpt / "params.gwt") == slurp(root / "ckpt2" / "params.gwt"));
    CHECK(slurp(ckpt / "telemetry.csv") == slurp(root / "ckpt2" / "telemetry.csv"));
}

TEST_CASE("cli: missing data directory exits 3 and names the path") {
    const fs::path root = scratch_root();
    ExperimentConfig c = tiny_config(root);
    const std::string cfg = (root / "config.json").string();
    save_experiment_config(cfg, c);

    const std::string err = (root / "err.txt").string();
    CHECK(run("train --config " + cfg + " --data " + (root / "nope").string(), err) == 3);
    CHECK(slurp(err).find((root / "nope").string()) != std::string::npos);
}

TEST_CASE("cli: invalid config exits 2 and names the key") {
    const fs::path root = scratch_root();
    json j = experiment_config_to_json(tiny_config(root));
    j["train"]["lambda"] = -1.0;
    const std::string cfg = (root / "bad.json").string();
    {
        std::ofstream os(cfg);
        os << j.dump(2) << "\n";
    }
    const std::string err = (root / "err.txt").string();
    CHECK(run("train --config " + cfg, err) == 2);
    CHECK(slurp(err).find("lambda") != std::string::npos);
}
