#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradweave/model.hpp"
#include "gradweave/synthgen.hpp"
#include "gradweave/trainer.hpp"

namespace gradweave {

// Query and gallery as dataset row indices. The standard protocol uses the
// same rows for both; matches under the query's own camera are excluded at
// evaluation time, so every identity needs at least two cameras.
struct RetrievalSplit {
    std::vector<int> query_rows;
    std::vector<int> gallery_rows;
};

// All rows of one domain, query = gallery. Throws if any identity in the
// domain appears under fewer than two cameras.
RetrievalSplit make_target_split(const Dataset& ds, int target_domain);

struct DomainMetrics {
    int domain = -1;
    double map = 0, rank1 = 0;
    int evaluated = 0;
    int excluded = 0;
};

struct MetricsReport {
    double map = 0, rank1 = 0;
    int evaluated = 0;
    int excluded = 0;  // queries with no valid positive in the gallery
    std::vector<DomainMetrics> per_domain;
    std::vector<double> conflict_rate_per_epoch;  // filled from training telemetry
    std::string config_fingerprint;
};

// Mean of precision-at-k over the relevant positions k; 0 when nothing is
// relevant.
double average_precision(const std::vector<char>& relevance);

// Primary-head embeddings for the selected image rows, one unit-norm row
// per entry of `rows`, in order. Rows are embedded in fixed-size chunks;
// per-row values do not depend on the chunking.
Tensor extract_embeddings(const ModelParams& params, const Tensor& images,
                          const std::vector<int>& rows);

// Core retrieval protocol on precomputed embeddings. Gallery entries that
// share both identity and camera with the query are excluded (this removes
// the query itself when query = gallery). Distances are Euclidean; ties
// break by gallery position. Queries without a valid positive are excluded
// from both metrics and counted.
MetricsReport evaluate_embeddings(const std::vector<SampleInfo>& samples,
                                  const RetrievalSplit& split, const Tensor& query_emb,
                                  const Tensor& gallery_emb);

MetricsReport evaluate(const ModelParams& params, const Dataset& ds, const RetrievalSplit& split);

// Deployment-time variant: walks the target rows in batches, updates a copy
// of the trunk on each batch's weak labels (persist keeps updates across
// batches, reset_per_batch re-starts from the input parameters), and embeds
// each batch with its adapted trunk. steps = 0 reproduces evaluate exactly.
MetricsReport tto_evaluate(const ModelParams& params, const ModelConfig& cfg, const Dataset& ds,
                           const RetrievalSplit& split, const TTOConfig& tto);

// One report per update count k = 0..max_steps on the target domain.
std::vector<MetricsReport> run_tto_sweep(const ModelParams& params, const ModelConfig& cfg,
                                         const Dataset& ds, int target, int max_steps,
                                         const TTOConfig& tto);

struct AblationRow {
    std::string label;
    int target = -1;
    int seeds = 0;
    double mean_map = 0, std_map = 0;
    double mean_rank1 = 0, std_rank1 = 0;
};

inline const std::array<const char*, 9> kAblationRowLabels{
    "baseline",  "aux",      "aux+dto",  "aux+gc",  "aux+gc+dto",
    "design-a",  "design-b", "design-c", "design-d",
};

// Component grid {baseline; +Aux; +Aux+DTO; +Aux+GC; +Aux+GC+DTO} plus the
// four calibration designs, per target domain, aggregated over seeds
// (mean and sample standard deviation). baseline = design a with lambda 0;
// the DTO rows re-evaluate the matching checkpoint after tto.steps updates.
// Trainings for distinct (target, seed) pairs may run concurrently, capped
// by GRADWEAVE_THREADS.
std::vector<AblationRow> run_ablation(const Dataset& ds, const TrainConfig& base,
                                      const TTOConfig& tto, const std::vector<uint64_t>& seeds,
                                      const std::vector<int>& targets,
                                      const ModelConfig& arch = ModelConfig{},
                                      const std::function<void(int, int)>& progress = {});

nlohmann::json metrics_to_json(const MetricsReport& report);

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);
std::vector<AblationRow> read_ablation_csv(const std::string& path);

// Worker cap: GRADWEAVE_THREADS if set and positive, else the hardware
// concurrency, at least 1.
int worker_thread_limit();

// FNV-1a over the canonical config text, as fixed-width hex.
std::string config_fingerprint(const std::string& canonical);

}  // namespace gradweave
