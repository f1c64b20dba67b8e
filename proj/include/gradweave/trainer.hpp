#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gradweave/gradcal.hpp"
#include "gradweave/model.hpp"
#include "gradweave/rng.hpp"
#include "gradweave/synthgen.hpp"

namespace gradweave {

enum class Optimizer { adam, sgd };

// Which gradient serves as the calibration reference: the cross-entropy
// gradient alone (the stated choice) or the full primary-task gradient.
enum class Reference { ce, prim };

enum class TTOPersistence { persist, reset_per_batch };

struct TrainConfig {
    int epochs = 30;
    int p = 8;  // identities per batch
    int k = 4;  // samples per identity
    float lr = 3.5e-4f;
    float lambda = 0.1f;
    float margin = 0.3f;
    Design design = Design::primary_referenced_d;
    Optimizer optimizer = Optimizer::adam;
    Reference reference = Reference::ce;
    uint64_t seed = 1;

    void validate() const;
};

struct TTOConfig {
    int steps = 1;
    float lr = 1e-6f;
    int batch_size = 200;
    TTOPersistence persistence = TTOPersistence::persist;

    void validate() const;
};

struct StepTelemetry {
    int step = 0;
    float l_id = 0, l_tri = 0, l_aux = 0;
    double dot = 0;  // dot(g_a, reference gradient)
    bool conflict = false;
    double norm_g_p = 0, norm_g_a = 0, norm_g_a_cal = 0;
};

struct EpochStats {
    int epoch = 0;
    float mean_l_id = 0, mean_l_tri = 0, mean_l_aux = 0;
    double conflict_rate = 0;
};

struct TrainReport {
    std::vector<StepTelemetry> steps;
    std::vector<EpochStats> epochs;
};

// Draws batches of P distinct identities x K samples. Identity order
// reshuffles once the queue runs short (a partial remainder is dropped so
// identities never repeat within a batch); per-identity sample queues
// reshuffle when exhausted, so an identity with fewer than K samples simply
// repeats its rows.
class PKSampler {
public:
    PKSampler(std::vector<int> sample_labels, int p, int k, uint64_t seed);

    // Row indices into the label vector, grouped as P runs of K.
    std::vector<int> next_batch();
    int num_identities() const { return static_cast<int>(by_identity_.size()); }

private:
    std::vector<std::vector<int>> by_identity_;  // rows per compact identity
    std::vector<std::vector<int>> queues_;
    std::vector<int> identity_queue_;
    int p_, k_;
    Rng rng_;
};

// Flat Adam/SGD over one contiguous parameter vector.
struct OptimizerState {
    Optimizer kind = Optimizer::adam;
    float lr = 0;
    std::vector<float> m, v;
    int64_t t = 0;

    OptimizerState(Optimizer kind, float lr, size_t size);
    void step(std::vector<float>& params, const std::vector<float>& grad);
};

struct Batch {
    Tensor images;            // [B,3,H,W]
    std::vector<int> labels;  // compact class ids in [0,C)
    Tensor weak;              // [B,1,H/4,W/4]
};

// One training run bound to fixed configs. step() runs one forward pass,
// takes per-loss backward sweeps, calibrates the trunk gradients, and
// applies a single optimizer step over all parameters.
class Trainer {
public:
    Trainer(ModelConfig model_cfg, TrainConfig cfg);

    StepTelemetry step(const Batch& batch);

    const ModelParams& params() const { return params_; }
    ModelParams& params() { return params_; }
    const ModelConfig& model_config() const { return model_cfg_; }
    int steps_taken() const { return step_; }

private:
    ModelConfig model_cfg_;
    TrainConfig cfg_;
    ModelParams params_;
    OptimizerState opt_;
    int step_ = 0;
};

struct TrainOutput {
    ModelConfig config;
    ModelParams params;
    TrainReport report;
    std::vector<int> class_to_identity;  // compact class id -> dataset identity
};

// Saliency targets fed to the L1 loss, mapped from [0,1] to [0.05,0.95].
// Binary targets drive the logistic head to exact saturation, where its
// derivative underflows to zero in float and deployment-time updates stall;
// soft targets keep the optimum at finite preactivation.
Tensor soften_weak(const Tensor& weak);

// Leave-one-domain-out training: rows with domain == target_domain are held
// out entirely; identity labels are compacted to [0,C). target_domain = -1
// trains on everything. An epoch is ceil(rows / (P*K)) batches. `arch`
// supplies channel and dimension choices; its extents and class count are
// overwritten from the data.
TrainOutput train(const Dataset& ds, int target_domain, const TrainConfig& cfg,
                  const ModelConfig& arch = ModelConfig{},
                  const std::function<void(const EpochStats&)>& on_epoch = {});

// Trunk-only plain gradient descent on the auxiliary loss over one batch;
// heads stay frozen and identity labels never enter. Returns the loss
// trajectory: element 0 before any update, one more per step taken.
std::vector<float> deploy_optimize(ModelParams& params, const ModelConfig& cfg,
                                   const Tensor& images, const Tensor& weak, int steps, float lr);

// step,l_id,l_tri,l_aux,dot,conflict,norm_g_p,norm_g_a,norm_g_a_cal
void write_telemetry_csv(const std::string& path, const std::vector<StepTelemetry>& steps);

const char* optimizer_name(Optimizer o);
const char* reference_name(Reference r);
const char* persistence_name(TTOPersistence p);

}  // namespace gradweave
