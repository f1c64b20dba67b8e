#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "gradweave/checkpoint.hpp"
#include "gradweave/model.hpp"
#include "model_fd_common.hpp"

using namespace gradweave;

namespace {

Tensor rand_images(const ModelConfig& cfg, int n, uint64_t seed) {
    Rng rng(seed);
    return fdtest::rand_tensor<float>({n, 3, cfg.height, cfg.width}, rng, 0.f, 1.f);
}

}  // namespace

TEST_CASE("forward pass shapes at the default config") {
    ModelConfig cfg;
    cfg.num_classes = 75;
    auto params = init_params(cfg, 1);
    auto fp = build_forward(params, rand_images(cfg, 2, 9), Heads::both);
    CHECK(fp.graph.value(fp.fmap).shape == std::vector<int>{2, 64, 16, 8});
    CHECK(fp.graph.value(fp.logits).shape == std::vector<int>{2, 75});
    CHECK(fp.graph.value(fp.embeddings).shape == std::vector<int>{2, 64});
    CHECK(fp.graph.value(fp.saliency).shape == std::vector<int>{2, 1, 16, 8});
}

TEST_CASE("zero input with zero biases gives a zero feature map") {
    ModelConfig cfg;
    cfg.num_classes = 5;
    auto params = init_params(cfg, 2);  // biases are zero by construction
    auto fp = build_forward(params, Tensor::zeros({1, 3, cfg.height, cfg.width}), Heads::both);
    for (float v : fp.graph.value(fp.fmap).data) CHECK(v == 0.f);
}

TEST_CASE("identical images produce identical rows") {
    ModelConfig cfg;
    cfg.num_classes = 5;
    auto params = init_params(cfg, 3);
    Tensor one = rand_images(cfg, 1, 10);
    Tensor two({2, 3, cfg.height, cfg.width});
    std::copy(one.data.begin(), one.data.end(), two.data.begin());
    std::copy(one.data.begin(), one.data.end(), two.data.begin() + one.numel());
    auto fp = build_forward(params, two, Heads::both);
    const auto& logits = fp.graph.value(fp.logits);
    for (int c = 0; c < 5; ++c) CHECK(logits.data[c] == logits.data[5 + c]);
    const auto& sal = fp.graph.value(fp.saliency);
    size_t half = sal.numel() / 2;
    for (size_t i = 0; i < half; ++i) CHECK(sal.data[i] == sal.data[half + i]);
}

TEST_CASE("embeddings are unit rows and saliency stays in [0,1]") {
    ModelConfig cfg;
    cfg.num_classes = 7;
    auto params = init_params(cfg, 4);
    auto fp = build_forward(params, rand_images(cfg, 6, 11), Heads::both);
    const auto& emb = fp.graph.value(fp.embeddings);
    for (int r = 0; r < 6; ++r) {
        double acc = 0;
        for (int c = 0; c < cfg.embed_dim; ++c) {
            double v = emb.data[static_cast<size_t>(r) * cfg.embed_dim + c];
            acc += v * v;
        }
        CHECK(std::sqrt(acc) == doctest::Approx(1.0).epsilon(1e-5));
    }
    for (float v : fp.graph.value(fp.saliency).data) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }
}

TEST_CASE("zero auxiliary weights squash to 0.5 maps") {
    ModelConfig cfg;
    cfg.num_classes = 5;
    auto params = init_params(cfg, 5);
    for (auto& t : params.aux) std::fill(t.data.begin(), t.data.end(), 0.f);
    auto fp = build_forward(params, rand_images(cfg, 2, 12), Heads::aux_only);
    CHECK(fp.logits == -1);
    for (float v : fp.graph.value(fp.saliency).data) CHECK(v == 0.5f);
}

TEST_CASE("init is seed-deterministic and seed-sensitive") {
    ModelConfig cfg;
    cfg.num_classes = 9;
    auto a = init_params(cfg, 77);
    auto b = init_params(cfg, 77);
    auto c = init_params(cfg, 78);
    CHECK(flatten(a.trunk) == flatten(b.trunk));
    CHECK(flatten(a.primary) == flatten(b.primary));
    CHECK(flatten(a.aux) == flatten(b.aux));
    CHECK(flatten(a.trunk) != flatten(c.trunk));
}

TEST_CASE("init variance tracks 2/fan_in") {
    ModelConfig cfg;
    cfg.num_classes = 5;
    auto params = init_params(cfg, 6);
    const Tensor& w = params.trunk[4];  // [64,32,3,3], 18k samples
    const double fan_in = 32 * 3 * 3;
    double mean = 0;
    for (float v : w.data) mean += v;
    mean /= static_cast<double>(w.numel());
    double var = 0;
    for (float v : w.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w.numel() - 1);
    CHECK(var == doctest::Approx(2.0 / fan_in).epsilon(0.2));
    for (float v : params.trunk[5].data) CHECK(v == 0.f);
}

TEST_CASE("flat round trip is bit-exact") {
    ModelConfig cfg;
    cfg.num_classes = 6;
    auto params = init_params(cfg, 7);
    auto flat = flatten(params.trunk);
    auto copy = params.trunk;
    for (auto& t : copy)
        for (auto& v : t.data) v = -1.f;
    unflatten(copy, flat);
    for (size_t i = 0; i < copy.size(); ++i) {
        REQUIRE(copy[i].numel() == params.trunk[i].numel());
        CHECK(std::memcmp(copy[i].ptr(), params.trunk[i].ptr(),
                          copy[i].numel() * sizeof(float)) == 0);
    }
    auto bad = flat;
    bad.pop_back();
    CHECK_THROWS_AS(unflatten(copy, bad), std::invalid_argument);
}

TEST_CASE("model config validation") {
    ModelConfig cfg;
    cfg.height = 30;  // not divisible by 4
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.height = 64;
    cfg.embed_dim = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("head isolation: each loss reaches only its own head") {
    Rng rng(40);
    ModelConfig cfg = fdtest::tiny_config(rng);
    auto params = params_cast<float, double>(init_params(cfg, 8));
    auto batch = fdtest::tiny_batch(cfg, rng);

    auto fp = build_forward(params, batch.images, Heads::both);
    int prim = fdtest::build_tiny_loss(fp, batch, fdtest::WhichLoss::id);
    fp.graph.backward(prim);
    for (int id : fp.aux_ids) CHECK(fp.graph.grad(id).numel() == 0);
    auto trunk_grad = flat_group_grad(fp.graph, fp.trunk_ids);
    bool any = false;
    for (double v : trunk_grad) any = any || v != 0.0;
    CHECK(any);

    int aux = fdtest::build_tiny_loss(fp, batch, fdtest::WhichLoss::aux);
    fp.graph.backward(aux);
    for (int id : fp.primary_ids) CHECK(fp.graph.grad(id).numel() == 0);
}

TEST_CASE("end-to-end gradients match finite differences on a tiny model") {
    Rng rng(41);
    ModelConfig cfg;
    cfg.height = 8;
    cfg.width = 8;
    cfg.trunk_channels = {2, 3, 4};
    cfg.embed_dim = 4;
    cfg.num_classes = 2;
    cfg.aux_channels = 3;
    auto params = params_cast<float, double>(init_params(cfg, 9));
    auto batch = fdtest::tiny_batch(cfg, rng);

    using fdtest::Group;
    using fdtest::WhichLoss;
    const double step = 1e-5, tol = 1e-5;
    CHECK(fdtest::tiny_model_fd_err(params, batch, WhichLoss::train, Group::trunk, step) < tol);
    CHECK(fdtest::tiny_model_fd_err(params, batch, WhichLoss::train, Group::primary, step) < tol);
    CHECK(fdtest::tiny_model_fd_err(params, batch, WhichLoss::train, Group::aux, step) < tol);
    CHECK(fdtest::tiny_model_fd_err(params, batch, WhichLoss::id, Group::trunk, step) < tol);
    CHECK(fdtest::tiny_model_fd_err(params, batch, WhichLoss::aux, Group::trunk, step) < tol);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    namespace fs = std::filesystem;
    ModelConfig cfg;
    cfg.num_classes = 11;
    auto params = init_params(cfg, 10);
    auto dir = (fs::temp_directory_path() / "gw_ckpt_test").string();
    nlohmann::json extra{{"note", "test"}, {"seed", 10}};
    save_checkpoint(dir, cfg, params, extra);

    auto back = load_checkpoint(dir);
    CHECK(back.config.num_classes == 11);
    CHECK(back.extra.at("seed").get<int>() == 10);
    auto a = flatten(params.trunk), b = flatten(back.params.trunk);
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
    auto ap = flatten(params.aux), bp = flatten(back.params.aux);
    CHECK(std::memcmp(ap.data(), bp.data(), ap.size() * sizeof(float)) == 0);

    fs::remove_all(dir);
    CHECK_THROWS_AS(load_checkpoint(dir), std::runtime_error);
}
