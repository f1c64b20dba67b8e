#include "gradweave/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>

#include "gradweave/losses.hpp"

namespace gradweave {

void TrainConfig::validate() const {
    if (epochs < 0) throw std::invalid_argument("train config: epochs must be >= 0");
    if (p < 2 || k < 2) throw std::invalid_argument("train config: need P >= 2 and K >= 2");
    if (lr < 0) throw std::invalid_argument("train config: lr must be >= 0");
    if (lambda < 0) throw std::invalid_argument("train config: lambda must be >= 0");
    if (margin < 0) throw std::invalid_argument("train config: margin must be >= 0");
}

void TTOConfig::validate() const {
    if (steps < 0) throw std::invalid_argument("tto config: steps must be >= 0");
    if (lr < 0) throw std::invalid_argument("tto config: lr must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("tto config: batch size must be >= 1");
}

PKSampler::PKSampler(std::vector<int> sample_labels, int p, int k, uint64_t seed)
    : p_(p), k_(k), rng_(seed) {
    if (p < 1 || k < 1) throw std::invalid_argument("pk sampler: P and K must be positive");
    int max_label = -1;
    for (int l : sample_labels) {
        if (l < 0) throw std::invalid_argument("pk sampler: labels must be non-negative");
        max_label = std::max(max_label, l);
    }
    by_identity_.assign(static_cast<size_t>(max_label + 1), {});
    for (size_t row = 0; row < sample_labels.size(); ++row)
        by_identity_[static_cast<size_t>(sample_labels[row])].push_back(static_cast<int>(row));
    for (const auto& rows : by_identity_)
        if (rows.empty())
            throw std::invalid_argument("pk sampler: labels must be contiguous in [0,C)");
    if (static_cast<int>(by_identity_.size()) < p)
        throw std::invalid_argument("pk sampler: fewer identities than P");
    queues_.resize(by_identity_.size());
}

std::vector<int> PKSampler::next_batch() {
    std::vector<int> batch;
    batch.reserve(static_cast<size_t>(p_) * k_);
    if (static_cast<int>(identity_queue_.size()) < p_) {
        identity_queue_.resize(by_identity_.size());
        for (size_t i = 0; i < identity_queue_.size(); ++i)
            identity_queue_[i] = static_cast<int>(i);
        rng_.shuffle(identity_queue_);
    }
    for (int pi = 0; pi < p_; ++pi) {
        const int who = identity_queue_.back();
        identity_queue_.pop_back();
        auto& q = queues_[static_cast<size_t>(who)];
        const auto& rows = by_identity_[static_cast<size_t>(who)];
        for (int ki = 0; ki < k_; ++ki) {
            if (q.empty()) {
                q = rows;
                rng_.shuffle(q);
            }
            batch.push_back(q.back());
            q.pop_back();
        }
    }
    return batch;
}

OptimizerState::OptimizerState(Optimizer kind, float lr, size_t size) : kind(kind), lr(lr) {
    if (kind == Optimizer::adam) {
        m.assign(size, 0.f);
        v.assign(size, 0.f);
    }
}

void OptimizerState::step(std::vector<float>& params, const std::vector<float>& grad) {
    if (params.size() != grad.size())
        throw std::invalid_argument("optimizer: parameter/gradient size mismatch");
    if (kind == Optimizer::sgd) {
        for (size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
        return;
    }
    if (m.size() != params.size())
        throw std::invalid_argument("optimizer: state bound to a different size");
    constexpr float kB1 = 0.9f, kB2 = 0.999f, kEps = 1e-8f;
    ++t;
    const float c1 = 1.f - std::pow(kB1, static_cast<float>(t));
    const float c2 = 1.f - std::pow(kB2, static_cast<float>(t));
    for (size_t i = 0; i < params.size(); ++i) {
        const float g = grad[i];
        m[i] = kB1 * m[i] + (1.f - kB1) * g;
        v[i] = kB2 * v[i] + (1.f - kB2) * g * g;
        const float mhat = m[i] / c1;
        const float vhat = v[i] / c2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
    }
}

Trainer::Trainer(ModelConfig model_cfg, TrainConfig cfg)
    : model_cfg_(model_cfg),
      cfg_(cfg),
      params_(init_params(model_cfg, cfg.seed)),
      opt_(cfg.optimizer, cfg.lr,
           flat_size(params_.trunk) + flat_size(params_.primary) + flat_size(params_.aux)) {
    model_cfg_.validate();
    cfg_.validate();
}

namespace {

void dump_diagnostics(int step, float l_id, float l_tri, float l_aux, const ModelParams& params) {
    std::cerr << "train: non-finite loss at step " << step << " (l_id=" << l_id
              << " l_tri=" << l_tri << " l_aux=" << l_aux << ")\n";
    for (int k = 0; k < 16; ++k) {
        const Tensor* t;
        if (k < 6)
            t = &params.trunk[static_cast<size_t>(k)];
        else if (k < 10)
            t = &params.primary[static_cast<size_t>(k - 6)];
        else
            t = &params.aux[static_cast<size_t>(k - 10)];
        float lo = 0, hi = 0;
        if (!t->data.empty()) {
            lo = *std::min_element(t->data.begin(), t->data.end());
            hi = *std::max_element(t->data.begin(), t->data.end());
        }
        std::cerr << "  " << kParamNames[static_cast<size_t>(k)] << " in [" << lo << ", " << hi
                  << "]\n";
    }
}

}  // namespace

Tensor soften_weak(const Tensor& weak) {
    Tensor soft = weak;
    for (auto& v : soft.data) v = 0.05f + 0.9f * v;
    return soft;
}

StepTelemetry Trainer::step(const Batch& batch) {
    ForwardPass fp = build_forward(params_, batch.images, Heads::both);
    Graph& g = fp.graph;
    PrimaryLossNodes<float> prim =
        primary_loss(g, fp.logits, fp.embeddings, batch.labels,
                     TripletConfig{cfg_.margin, Mining::batch_hard});
    const int weak_node = g.add_input(soften_weak(batch.weak), /*needs_grad=*/false);
    const int aux = aux_l1_loss(g, fp.saliency, weak_node);

    StepTelemetry tel;
    tel.step = step_;
    tel.l_id = g.value(prim.id_loss).data[0];
    tel.l_tri = g.value(prim.tri_loss).data[0];
    tel.l_aux = g.value(aux).data[0];
    if (!std::isfinite(tel.l_id) || !std::isfinite(tel.l_tri) || !std::isfinite(tel.l_aux)) {
        dump_diagnostics(step_, tel.l_id, tel.l_tri, tel.l_aux, params_);
        throw std::runtime_error("train: non-finite loss");
    }

    // Per-loss trunk gradients from separate sweeps over one forward pass.
    std::vector<float> g_ref;
    if (cfg_.reference == Reference::ce) {
        g.backward(prim.id_loss);
        g_ref = flat_group_grad(g, fp.trunk_ids);
    }
    g.backward(prim.total);
    std::vector<float> g_p = flat_group_grad(g, fp.trunk_ids);
    std::vector<float> head_p = flat_group_grad(g, fp.primary_ids);
    g.backward(aux);
    std::vector<float> g_a = flat_group_grad(g, fp.trunk_ids);
    std::vector<float> head_a = flat_group_grad(g, fp.aux_ids);
    if (cfg_.reference == Reference::prim) g_ref = g_p;

    tel.dot = gc::dot(g_a, g_ref);
    tel.conflict = gc::conflict(g_a, g_ref);
    tel.norm_g_p = gc::norm(g_p);
    tel.norm_g_a = gc::norm(g_a);
    auto [g_p_cal, g_a_cal] = gc::apply_design(cfg_.design, g_p, g_ref, g_a);
    tel.norm_g_a_cal = gc::norm(g_a_cal);
    std::vector<float> trunk_grad = gc::combine(g_p_cal, g_a_cal, cfg_.lambda);

    // Heads take their own loss gradients; the auxiliary head carries the
    // lambda weight from L_train.
    for (float& x : head_a) x *= cfg_.lambda;

    std::vector<float> flat = flatten(params_.trunk);
    std::vector<float> grad = std::move(trunk_grad);
    {
        std::vector<float> fprim = flatten(params_.primary);
        std::vector<float> faux = flatten(params_.aux);
        flat.insert(flat.end(), fprim.begin(), fprim.end());
        flat.insert(flat.end(), faux.begin(), faux.end());
        grad.insert(grad.end(), head_p.begin(), head_p.end());
        grad.insert(grad.end(), head_a.begin(), head_a.end());
    }
    opt_.step(flat, grad);

    const size_t nt = flat_size(params_.trunk), np = flat_size(params_.primary);
    unflatten(params_.trunk, {flat.begin(), flat.begin() + static_cast<long>(nt)});
    unflatten(params_.primary,
              {flat.begin() + static_cast<long>(nt), flat.begin() + static_cast<long>(nt + np)});
    unflatten(params_.aux, {flat.begin() + static_cast<long>(nt + np), flat.end()});
    ++step_;
    return tel;
}

TrainOutput train(const Dataset& ds, int target_domain, const TrainConfig& cfg,
                  const ModelConfig& arch, const std::function<void(const EpochStats&)>& on_epoch) {
    cfg.validate();
    const int nd = static_cast<int>(ds.spec.domains.size());
    if (target_domain < -1 || target_domain >= nd)
        throw std::invalid_argument("train: target domain out of range");

    std::vector<int> rows;
    for (size_t i = 0; i < ds.samples.size(); ++i)
        if (ds.samples[i].domain != target_domain) rows.push_back(static_cast<int>(i));
    if (rows.empty()) throw std::invalid_argument("train: no training rows");

    // Compact identity labels.
    std::map<int, int> to_class;
    for (int r : rows) to_class.emplace(ds.samples[static_cast<size_t>(r)].identity, 0);
    std::vector<int> class_to_identity;
    for (auto& [identity, cls] : to_class) {
        cls = static_cast<int>(class_to_identity.size());
        class_to_identity.push_back(identity);
    }
    std::vector<int> row_class(rows.size());
    for (size_t i = 0; i < rows.size(); ++i)
        row_class[i] = to_class.at(ds.samples[static_cast<size_t>(rows[i])].identity);

    ModelConfig model_cfg = arch;
    model_cfg.height = ds.spec.height;
    model_cfg.width = ds.spec.width;
    model_cfg.num_classes = static_cast<int>(class_to_identity.size());
    Trainer trainer(model_cfg, cfg);

    PKSampler sampler(row_class, cfg.p, cfg.k, derive_seed(cfg.seed, 0x5A5Au));
    const int batch = cfg.p * cfg.k;
    const int steps_per_epoch =
        static_cast<int>((rows.size() + static_cast<size_t>(batch) - 1) / batch);

    const size_t img_sz = static_cast<size_t>(3) * ds.spec.height * ds.spec.width;
    const size_t weak_sz = static_cast<size_t>(ds.spec.height / 4) * (ds.spec.width / 4);
    TrainOutput out;
    out.class_to_identity = class_to_identity;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochStats es;
        es.epoch = epoch;
        for (int s = 0; s < steps_per_epoch; ++s) {
            const std::vector<int> picks = sampler.next_batch();
            Batch b;
            b.images = Tensor::zeros({batch, 3, ds.spec.height, ds.spec.width});
            b.weak = Tensor::zeros({batch, 1, ds.spec.height / 4, ds.spec.width / 4});
            b.labels.resize(static_cast<size_t>(batch));
            for (int i = 0; i < batch; ++i) {
                const int row = rows[static_cast<size_t>(picks[static_cast<size_t>(i)])];
                std::copy_n(ds.images.data.begin() + static_cast<long>(row * img_sz), img_sz,
                            b.images.data.begin() + static_cast<long>(i) * static_cast<long>(img_sz));
                std::copy_n(ds.weak.data.begin() + static_cast<long>(row * weak_sz), weak_sz,
                            b.weak.data.begin() + static_cast<long>(i) * static_cast<long>(weak_sz));
                b.labels[static_cast<size_t>(i)] = row_class[static_cast<size_t>(picks[static_cast<size_t>(i)])];
            }
            StepTelemetry tel = trainer.step(b);
            es.mean_l_id += tel.l_id;
            es.mean_l_tri += tel.l_tri;
            es.mean_l_aux += tel.l_aux;
            es.conflict_rate += tel.conflict ? 1 : 0;
            out.report.steps.push_back(tel);
        }
        es.mean_l_id /= static_cast<float>(steps_per_epoch);
        es.mean_l_tri /= static_cast<float>(steps_per_epoch);
        es.mean_l_aux /= static_cast<float>(steps_per_epoch);
        es.conflict_rate /= steps_per_epoch;
        out.report.epochs.push_back(es);
        if (on_epoch) on_epoch(es);
    }
    out.config = trainer.model_config();
    out.params = trainer.params();
    return out;
}

std::vector<float> deploy_optimize(ModelParams& params, const ModelConfig& cfg,
                                   const Tensor& images, const Tensor& weak, int steps, float lr) {
    if (steps < 0) throw std::invalid_argument("deploy_optimize: steps must be >= 0");
    if (lr < 0) throw std::invalid_argument("deploy_optimize: lr must be >= 0");
    if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != cfg.height ||
        images.dim(3) != cfg.width)
        throw std::invalid_argument("deploy_optimize: images do not match the model input shape");
    std::vector<float> trajectory;
    trajectory.reserve(static_cast<size_t>(steps) + 1);
    const Tensor soft = soften_weak(weak);
    for (int s = 0; s <= steps; ++s) {
        ForwardPass fp = build_forward(params, images, Heads::aux_only);
        Graph& g = fp.graph;
        const int weak_node = g.add_input(soft, /*needs_grad=*/false);
        const int loss = test_loss(g, fp.saliency, weak_node);
        trajectory.push_back(g.value(loss).data[0]);
        if (s == steps) break;
        g.backward(loss);
        std::vector<float> grad = flat_group_grad(g, fp.trunk_ids);
        std::vector<float> flat = flatten(params.trunk);
        for (size_t i = 0; i < flat.size(); ++i) flat[i] -= lr * grad[i];
        unflatten(params.trunk, flat);
    }
    return trajectory;
}

void write_telemetry_csv(const std::string& path, const std::vector<StepTelemetry>& steps) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("telemetry: cannot write " + path);
    os << "step,l_id,l_tri,l_aux,dot,conflict,norm_g_p,norm_g_a,norm_g_a_cal\n";
    os.precision(9);
    for (const auto& t : steps)
        os << t.step << ',' << t.l_id << ',' << t.l_tri << ',' << t.l_aux << ',' << t.dot << ','
           << (t.conflict ? 1 : 0) << ',' << t.norm_g_p << ',' << t.norm_g_a << ','
           << t.norm_g_a_cal << '\n';
}

const char* optimizer_name(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }
const char* reference_name(Reference r) { return r == Reference::ce ? "ce" : "prim"; }
const char* persistence_name(TTOPersistence p) {
    return p == TTOPersistence::persist ? "persist" : "reset-per-batch";
}

}  // namespace gradweave
