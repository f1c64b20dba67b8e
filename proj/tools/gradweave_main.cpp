// Command line front end. Every subcommand reads its inputs, writes results
// into an output directory (metrics.json, tables/*.csv, checkpoints), and
// persists the resolved config next to them. Progress goes to stderr only;
// nothing machine readable is printed to stdout. Reruns with the same config
// and seed produce byte-identical outputs.
//
// Exit codes: 0 success, 1 usage error, 2 config/validation error, 3 runtime
// failure (missing files, NaN aborts, ...).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gradweave/checkpoint.hpp"
#include "gradweave/config.hpp"
#include "gradweave/eval.hpp"
#include "gradweave/synthgen.hpp"
#include "gradweave/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gradweave;

namespace {

struct Args {
    std::string config_path;
    std::string data_dir;
    std::string checkpoint_dir;
    std::string out_dir;
    int target = 0;
    bool has_target = false;
    uint64_t seed = 0;
    bool has_seed = false;
    int steps = 0;
    bool has_steps = false;
    float lr = 0.0f;
    bool has_lr = false;
    int batch_size = 0;
    bool has_batch_size = false;
    std::string persistence;
};

ExperimentConfig resolve_config(const Args& a) {
    if (a.config_path.empty()) return ExperimentConfig{};
    return load_experiment_config(a.config_path);
}

std::string default_path(const ExperimentConfig& cfg, const std::string& leaf) {
    return cfg.out + "/" + leaf;
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << j.dump(2) << '\n';
}

void persist_config(const std::string& dir, const ExperimentConfig& cfg) {
    fs::create_directories(dir);
    save_experiment_config(dir + "/config.json", cfg);
}

std::string fingerprint_of(const ExperimentConfig& cfg) {
    return config_fingerprint(experiment_config_to_json(cfg).dump());
}

TTOPersistence persistence_from_token(const std::string& tok) {
    if (tok == "persist") return TTOPersistence::persist;
    if (tok == "reset-per-batch") return TTOPersistence::reset_per_batch;
    throw std::invalid_argument("tto: persistence: expected one of persist|reset-per-batch, got \"" +
                                tok + "\"");
}

// Target domain for checkpoint-driven commands: explicit flag wins, then the
// domain the checkpoint was trained against, then the config.
int resolve_target(const Args& a, const Checkpoint& ck, const ExperimentConfig& cfg) {
    if (a.has_target) return a.target;
    if (ck.extra.contains("target_domain")) return ck.extra["target_domain"].get<int>();
    return cfg.target_domain;
}

void write_metrics(const std::string& dir, const MetricsReport& report, const json& protocol) {
    fs::create_directories(dir);
    json j = metrics_to_json(report);
    j["format"] = "gradweave-metrics/1";
    if (!protocol.empty()) j["protocol"] = protocol;
    write_json_file(dir + "/metrics.json", j);
}

int cmd_gen_data(const Args& a) {
    ExperimentConfig cfg = resolve_config(a);
    cfg.validate();
    const std::string out = a.out_dir.empty() ? default_path(cfg, "data") : a.out_dir;
    Dataset ds = build_benchmark(cfg.benchmark);
    save_dataset(out, ds);
    persist_config(out, cfg);
    std::cerr << "gen-data: " << ds.samples.size() << " samples across "
              << cfg.benchmark.domains.size() << " domains -> " << out << "\n";
    return 0;
}

int cmd_train(const Args& a) {
    ExperimentConfig cfg = resolve_config(a);
    if (a.has_seed) cfg.train.seed = a.seed;
    if (a.has_target) cfg.target_domain = a.target;
    cfg.validate();
    const std::string data = a.data_dir.empty() ? default_path(cfg, "data") : a.data_dir;
    const std::string out = a.out_dir.empty() ? default_path(cfg, "checkpoint") : a.out_dir;

    Dataset ds = load_dataset(data);
    std::cerr << "train: " << ds.samples.size() << " samples, target domain " << cfg.target_domain
              << ", seed " << cfg.train.seed << "\n";
    TrainOutput result = train(ds, cfg.target_domain, cfg.train, cfg.model(),
                               [&](const EpochStats& es) {
                                   std::cerr << "epoch " << (es.epoch + 1) << "/" << cfg.train.epochs
                                             << " id=" << es.mean_l_id << " tri=" << es.mean_l_tri
                                             << " aux=" << es.mean_l_aux
                                             << " conflict=" << es.conflict_rate << "\n";
                               });

    json conflict = json::array();
    for (const auto& es : result.report.epochs) conflict.push_back(es.conflict_rate);
    json extra = {{"target_domain", cfg.target_domain},
                  {"class_to_identity", result.class_to_identity},
                  {"conflict_rate_per_epoch", conflict},
                  {"train", experiment_config_to_json(cfg)["train"]},
                  {"config_fingerprint", fingerprint_of(cfg)}};
    save_checkpoint(out, result.config, result.params, extra);
    write_telemetry_csv(out + "/telemetry.csv", result.report.steps);
    persist_config(out, cfg);
    std::cerr << "train: checkpoint -> " << out << "\n";
    return 0;
}

int cmd_eval(const Args& a) {
    ExperimentConfig cfg = resolve_config(a);
    const std::string ckpt = a.checkpoint_dir.empty() ? default_path(cfg, "checkpoint") : a.checkpoint_dir;
    const std::string data = a.data_dir.empty() ? default_path(cfg, "data") : a.data_dir;
    const std::string out = a.out_dir.empty() ? default_path(cfg, "eval") : a.out_dir;

    Checkpoint ck = load_checkpoint(ckpt);
    Dataset ds = load_dataset(data);
    const int target = resolve_target(a, ck, cfg);
    if (target < 0) throw std::invalid_argument("eval: no target domain (pass --target)");

    RetrievalSplit split = make_target_split(ds, target);
    MetricsReport report = evaluate(ck.params, ds, split);
    if (ck.extra.contains("conflict_rate_per_epoch"))
        report.conflict_rate_per_epoch =
            ck.extra["conflict_rate_per_epoch"].get<std::vector<double>>();
    report.config_fingerprint = ck.extra.contains("config_fingerprint")
                                    ? ck.extra["config_fingerprint"].get<std::string>()
                                    : fingerprint_of(cfg);
    write_metrics(out, report, {{"target_domain", target}});
    persist_config(out, cfg);
    std::cerr << "eval: target " << target << " mAP=" << report.map << " rank1=" << report.rank1
              << " (" << report.evaluated << " queries, " << report.excluded << " excluded)\n";
    return 0;
}

int cmd_tto(const Args& a) {
    ExperimentConfig cfg = resolve_config(a);
    const std::string ckpt = a.checkpoint_dir.empty() ? default_path(cfg, "checkpoint") : a.checkpoint_dir;
    const std::string data = a.data_dir.empty() ? default_path(cfg, "data") : a.data_dir;
    const std::string out = a.out_dir.empty() ? default_path(cfg, "tto") : a.out_dir;

    TTOConfig tto = cfg.tto;
    if (a.has_steps) tto.steps = a.steps;
    if (a.has_lr) tto.lr = a.lr;
    if (a.has_batch_size) tto.batch_size = a.batch_size;
    if (!a.persistence.empty()) tto.persistence = persistence_from_token(a.persistence);
    tto.validate();

    Checkpoint ck = load_checkpoint(ckpt);
    Dataset ds = load_dataset(data);
    const int target = resolve_target(a, ck, cfg);
    if (target < 0) throw std::invalid_argument("tto: no target domain (pass --target)");

    RetrievalSplit split = make_target_split(ds, target);
    MetricsReport report = tto_evaluate(ck.params, ck.config, ds, split, tto);
    report.config_fingerprint = ck.extra.contains("config_fingerprint")
                                    ? ck.extra["config_fingerprint"].get<std::string>()
                                    : fingerprint_of(cfg);
    write_metrics(out, report,
                  {{"target_domain", target},
                   {"tto",
                    {{"steps", tto.steps},
                     {"lr", tto.lr},
                     {"batch_size", tto.batch_size},
                     {"persistence", persistence_name(tto.persistence)}}}});
    persist_config(out, cfg);
    std::cerr << "tto: target " << target << " steps=" << tto.steps << " mAP=" << report.map
              << " rank1=" << report.rank1 << "\n";
    return 0;
}

int cmd_ablate(const Args& a) {
    ExperimentConfig cfg = resolve_config(a);
    cfg.validate();
    const std::string out = a.out_dir.empty() ? default_path(cfg, "tables") : a.out_dir;

    Dataset ds = build_benchmark(cfg.benchmark);
    std::vector<int> targets;
    for (const auto& d : cfg.benchmark.domains) targets.push_back(d.id);
    std::cerr << "ablate: " << targets.size() << " targets x " << cfg.seeds.size() << " seeds, "
              << worker_thread_limit() << " worker(s)\n";
    std::vector<AblationRow> rows =
        run_ablation(ds, cfg.train, cfg.tto, cfg.seeds, targets, cfg.model(),
                     [](int done, int total) {
                         std::cerr << "ablate: cell " << done << "/" << total << "\n";
                     });
    fs::create_directories(out);
    write_ablation_csv(out + "/ablation.csv", rows);
    persist_config(out, cfg);
    std::cerr << "ablate: " << rows.size() << " rows -> " << out << "/ablation.csv\n";
    return 0;
}

int cmd_tto_sweep(const Args& a) {
    ExperimentConfig cfg = resolve_config(a);
    const std::string ckpt = a.checkpoint_dir.empty() ? default_path(cfg, "checkpoint") : a.checkpoint_dir;
    const std::string data = a.data_dir.empty() ? default_path(cfg, "data") : a.data_dir;
    const std::string out = a.out_dir.empty() ? default_path(cfg, "tables") : a.out_dir;
    const int max_steps = a.has_steps ? a.steps : 4;

    Checkpoint ck = load_checkpoint(ckpt);
    Dataset ds = load_dataset(data);
    const int target = resolve_target(a, ck, cfg);
    if (target < 0) throw std::invalid_argument("tto-sweep: no target domain (pass --target)");

    std::vector<MetricsReport> sweep = run_tto_sweep(ck.params, ck.config, ds, target, max_steps, cfg.tto);
    fs::create_directories(out);
    const std::string path = out + "/tto_sweep.csv";
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "target";
    for (int k = 0; k <= max_steps; ++k) os << ",map_" << k;
    for (int k = 0; k <= max_steps; ++k) os << ",rank1_" << k;
    os << "\n" << target;
    char buf[64];
    for (int k = 0; k <= max_steps; ++k) {
        std::snprintf(buf, sizeof buf, ",%.17g", sweep[static_cast<size_t>(k)].map);
        os << buf;
    }
    for (int k = 0; k <= max_steps; ++k) {
        std::snprintf(buf, sizeof buf, ",%.17g", sweep[static_cast<size_t>(k)].rank1);
        os << buf;
    }
    os << "\n";
    persist_config(out, cfg);
    for (int k = 0; k <= max_steps; ++k)
        std::cerr << "tto-sweep: k=" << k << " mAP=" << sweep[static_cast<size_t>(k)].map
                  << " rank1=" << sweep[static_cast<size_t>(k)].rank1 << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic cross-domain person retrieval: data generation, training, "
                 "deployment-time optimization, evaluation"};
    app.require_subcommand(1);

    Args a;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", a.config_path, "experiment config JSON");
    };
    auto add_data = [&](CLI::App* sub) {
        sub->add_option("--data", a.data_dir, "dataset directory");
    };
    auto add_checkpoint = [&](CLI::App* sub) {
        sub->add_option("--checkpoint", a.checkpoint_dir, "checkpoint directory");
    };
    auto add_out = [&](CLI::App* sub) {
        sub->add_option("--out", a.out_dir, "output directory");
    };
    auto add_target = [&](CLI::App* sub) {
        sub->add_option("--target", a.target, "held-out target domain id");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "render the synthetic benchmark to disk");
    add_config(gen);
    add_out(gen);

    CLI::App* tr = app.add_subcommand("train", "train on all source domains, write a checkpoint");
    add_config(tr);
    add_data(tr);
    add_out(tr);
    add_target(tr);
    tr->add_option("--seed", a.seed, "training seed override");

    CLI::App* ev = app.add_subcommand("eval", "retrieval metrics on the target domain");
    add_config(ev);
    add_checkpoint(ev);
    add_data(ev);
    add_out(ev);
    add_target(ev);

    CLI::App* tt = app.add_subcommand("tto", "deployment-time optimization, then evaluate");
    add_config(tt);
    add_checkpoint(tt);
    add_data(tt);
    add_out(tt);
    add_target(tt);
    tt->add_option("--steps", a.steps, "adaptation steps per batch");
    tt->add_option("--lr", a.lr, "adaptation learning rate");
    tt->add_option("--batch-size", a.batch_size, "adaptation batch size");
    tt->add_option("--persistence", a.persistence, "persist | reset-per-batch");

    CLI::App* ab = app.add_subcommand("ablate", "component and design ablation table");
    add_config(ab);
    add_out(ab);

    CLI::App* sw = app.add_subcommand("tto-sweep", "metrics as a function of adaptation steps");
    add_config(sw);
    add_checkpoint(sw);
    add_data(sw);
    add_out(sw);
    add_target(sw);
    sw->add_option("--steps", a.steps, "maximum adaptation steps");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    a.has_target = tr->count("--target") || ev->count("--target") || tt->count("--target") ||
                   sw->count("--target");
    a.has_seed = tr->count("--seed") > 0;
    a.has_steps = tt->count("--steps") > 0 || sw->count("--steps") > 0;
    a.has_lr = tt->count("--lr") > 0;
    a.has_batch_size = tt->count("--batch-size") > 0;

    try {
        if (gen->parsed()) return cmd_gen_data(a);
        if (tr->parsed()) return cmd_train(a);
        if (ev->parsed()) return cmd_eval(a);
        if (tt->parsed()) return cmd_tto(a);
        if (ab->parsed()) return cmd_ablate(a);
        if (sw->parsed()) return cmd_tto_sweep(a);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
