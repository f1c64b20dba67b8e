// Times one training-step worth of work (forward both heads + three backward
// sweeps) at the default model scale. Used to size experiment budgets.

#include <chrono>
#include <cstdio>

#include "gradweave/losses.hpp"
#include "gradweave/model.hpp"

using namespace gradweave;

int main(int argc, char** argv) {
    const int iters = argc > 1 ? std::atoi(argv[1]) : 20;
    ModelConfig cfg;
    cfg.num_classes = 75;
    auto params = init_params(cfg, 1);

    Rng rng(2);
    const int n = 32;
    Tensor images({n, 3, cfg.height, cfg.width});
    for (auto& v : images.data) v = rng.next_float();
    Tensor weak({n, 1, cfg.map_height(), cfg.map_width()});
    for (auto& v : weak.data) v = rng.next_float();
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) labels.push_back(i / 4);

    // warm up
    {
        auto fp = build_forward(params, images, Heads::both);
        (void)fp;
    }

    auto t0 = std::chrono::steady_clock::now();
    double sink = 0;
    for (int it = 0; it < iters; ++it) {
        auto fp = build_forward(params, images, Heads::both);
        auto prim = primary_loss(fp.graph, fp.logits, fp.embeddings, labels, TripletConfig{});
        int aux = aux_l1_loss(fp.graph, fp.saliency, fp.graph.add_input(weak));
        fp.graph.backward(prim.id_loss);
        auto g_ref = flat_group_grad(fp.graph, fp.trunk_ids);
        fp.graph.backward(prim.total);
        auto g_p = flat_group_grad(fp.graph, fp.trunk_ids);
        fp.graph.backward(aux);
        auto g_a = flat_group_grad(fp.graph, fp.trunk_ids);
        sink += g_ref[0] + g_p[0] + g_a[0];
    }
    auto t1 = std::chrono::steady_clock::now();
    double ms = std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;

    // rough per-step cost: forward ~0.45 GFLOP, three backward sweeps ~2.3
    const double gflop_per_step = 2.79;
    std::printf("step: %.1f ms  (~%.1f GFLOP/s)  sink=%g\n", ms, gflop_per_step / (ms / 1000.0),
                sink);
    return 0;
}
