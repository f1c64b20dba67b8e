#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradweave/graph.hpp"
#include "gradweave/rng.hpp"
#include "gradweave/tensor.hpp"

namespace gradweave {

struct ModelConfig {
    int height = 64;
    int width = 32;
    std::array<int, 3> trunk_channels{16, 32, 64};
    int embed_dim = 64;
    int num_classes = 1;
    int aux_channels = 16;

    int map_height() const { return height / 4; }
    int map_width() const { return width / 4; }

    void validate() const {
        if (height <= 0 || width <= 0 || height % 4 != 0 || width % 4 != 0)
            throw std::invalid_argument("model: input extents must be positive multiples of 4");
        for (int c : trunk_channels)
            if (c <= 0) throw std::invalid_argument("model: trunk_channels must be positive");
        if (embed_dim <= 0) throw std::invalid_argument("model: embed_dim must be positive");
        if (num_classes <= 0) throw std::invalid_argument("model: num_classes must be positive");
        if (aux_channels <= 0) throw std::invalid_argument("model: aux_channels must be positive");
    }
};

// Parameter layout is fixed: [conv w, conv b] per layer, in network order.
// The flat views below follow this order; gradient calibration and the
// optimizer both index into them, so it must never change at runtime.
template <typename T>
struct ModelParamsT {
    std::array<TensorT<T>, 6> trunk;    // conv1 w/b, conv2 w/b, conv3 w/b
    std::array<TensorT<T>, 4> primary;  // embed w/b, classifier w/b
    std::array<TensorT<T>, 6> aux;      // conv w/b x2, 1x1 conv w/b
};

using ModelParams = ModelParamsT<float>;

inline const std::array<const char*, 16> kParamNames{
    "trunk.conv1.w", "trunk.conv1.b", "trunk.conv2.w", "trunk.conv2.b",
    "trunk.conv3.w", "trunk.conv3.b", "primary.embed.w", "primary.embed.b",
    "primary.cls.w", "primary.cls.b", "aux.conv1.w", "aux.conv1.b",
    "aux.conv2.w", "aux.conv2.b", "aux.out.w", "aux.out.b",
};

template <typename T, size_t N>
size_t flat_size(const std::array<TensorT<T>, N>& group) {
    size_t n = 0;
    for (const auto& t : group) n += t.numel();
    return n;
}

template <typename T, size_t N>
std::vector<T> flatten(const std::array<TensorT<T>, N>& group) {
    std::vector<T> out;
    out.reserve(flat_size(group));
    for (const auto& t : group) out.insert(out.end(), t.data.begin(), t.data.end());
    return out;
}

template <typename T, size_t N>
void unflatten(std::array<TensorT<T>, N>& group, const std::vector<T>& flat) {
    if (flat.size() != flat_size(group))
        throw std::invalid_argument("unflatten: flat size mismatch");
    size_t off = 0;
    for (auto& t : group) {
        std::copy(flat.begin() + static_cast<long>(off),
                  flat.begin() + static_cast<long>(off + t.numel()), t.data.begin());
        off += t.numel();
    }
}

template <typename From, typename To>
ModelParamsT<To> params_cast(const ModelParamsT<From>& p) {
    ModelParamsT<To> out;
    for (size_t i = 0; i < p.trunk.size(); ++i) out.trunk[i] = tensor_cast<From, To>(p.trunk[i]);
    for (size_t i = 0; i < p.primary.size(); ++i)
        out.primary[i] = tensor_cast<From, To>(p.primary[i]);
    for (size_t i = 0; i < p.aux.size(); ++i) out.aux[i] = tensor_cast<From, To>(p.aux[i]);
    return out;
}

// Kaiming-style uniform init: w ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero
// biases. Each tensor gets its own derived stream so draws are independent
// of iteration order.
inline std::array<std::vector<int>, 16> param_shapes(const ModelConfig& cfg) {
    auto conv_shape = [](int f, int c, int k) { return std::vector<int>{f, c, k, k}; };
    return {
        conv_shape(cfg.trunk_channels[0], 3, 3),
        {cfg.trunk_channels[0]},
        conv_shape(cfg.trunk_channels[1], cfg.trunk_channels[0], 3),
        {cfg.trunk_channels[1]},
        conv_shape(cfg.trunk_channels[2], cfg.trunk_channels[1], 3),
        {cfg.trunk_channels[2]},
        {cfg.embed_dim, cfg.trunk_channels[2]},
        {cfg.embed_dim},
        {cfg.num_classes, cfg.embed_dim},
        {cfg.num_classes},
        conv_shape(cfg.aux_channels, cfg.trunk_channels[2], 3),
        {cfg.aux_channels},
        conv_shape(cfg.aux_channels, cfg.aux_channels, 3),
        {cfg.aux_channels},
        conv_shape(1, cfg.aux_channels, 1),
        {1},
    };
}

inline ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    const auto shapes = param_shapes(cfg);

    auto fill = [&](Tensor& t, size_t idx) {
        t = Tensor(shapes[idx]);
        if (t.rank() == 1) return;  // biases stay zero
        size_t fan_in = 1;
        for (int i = 1; i < t.rank(); ++i) fan_in *= static_cast<size_t>(t.dim(i));
        const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
        Rng rng(derive_seed(seed, 0x1417u, idx));
        for (auto& v : t.data) v = rng.uniform(-bound, bound);
    };

    ModelParams p;
    for (size_t i = 0; i < 6; ++i) fill(p.trunk[i], i);
    for (size_t i = 0; i < 4; ++i) fill(p.primary[i], 6 + i);
    for (size_t i = 0; i < 6; ++i) fill(p.aux[i], 10 + i);
    return p;
}

enum class Heads { both, primary_only, aux_only };

// One forward evaluation as a tape plus the node ids later passes need.
template <typename T>
struct ForwardPassT {
    GraphT<T> graph;
    std::array<int, 6> trunk_ids{};
    std::array<int, 4> primary_ids{};
    std::array<int, 6> aux_ids{};
    int images = -1;
    int fmap = -1;
    int embeddings = -1;
    int logits = -1;
    int saliency = -1;
};

using ForwardPass = ForwardPassT<float>;

// Trunk: 3x(conv3x3 + relu), 2x2 maxpool after the first two blocks.
// Primary head: GAP -> dense -> l2-normalize = embedding -> dense = logits.
// Auxiliary head: two conv3x3+relu, conv1x1, logistic; same spatial size as
// the final feature map. Both heads read the same trunk output.
template <typename T>
ForwardPassT<T> build_forward(const ModelParamsT<T>& params, const TensorT<T>& images,
                              Heads heads) {
    if (images.rank() != 4 || images.dim(1) != 3)
        throw std::invalid_argument("build_forward: images must be [N,3,H,W]");
    ForwardPassT<T> fp;
    auto& g = fp.graph;
    for (size_t i = 0; i < 6; ++i) fp.trunk_ids[i] = g.add_param(params.trunk[i]);
    for (size_t i = 0; i < 4; ++i) fp.primary_ids[i] = g.add_param(params.primary[i]);
    for (size_t i = 0; i < 6; ++i) fp.aux_ids[i] = g.add_param(params.aux[i]);
    fp.images = g.add_input(images, /*needs_grad=*/false);

    int x = g.relu(g.conv2d(fp.images, fp.trunk_ids[0], fp.trunk_ids[1], 1, 1));
    x = g.maxpool2x2(x);
    x = g.relu(g.conv2d(x, fp.trunk_ids[2], fp.trunk_ids[3], 1, 1));
    x = g.maxpool2x2(x);
    fp.fmap = g.relu(g.conv2d(x, fp.trunk_ids[4], fp.trunk_ids[5], 1, 1));

    if (heads == Heads::both || heads == Heads::primary_only) {
        int pooled = g.global_avg_pool(fp.fmap);
        int emb = g.dense(pooled, fp.primary_ids[0], fp.primary_ids[1]);
        fp.embeddings = g.l2_normalize(emb);
        fp.logits = g.dense(fp.embeddings, fp.primary_ids[2], fp.primary_ids[3]);
    }
    if (heads == Heads::both || heads == Heads::aux_only) {
        int a = g.relu(g.conv2d(fp.fmap, fp.aux_ids[0], fp.aux_ids[1], 1, 1));
        a = g.relu(g.conv2d(a, fp.aux_ids[2], fp.aux_ids[3], 1, 1));
        fp.saliency = g.logistic(g.conv2d(a, fp.aux_ids[4], fp.aux_ids[5], 1, 0));
    }
    return fp;
}

// Gathers the gradient of a parameter group into one flat vector, in group
// order. Parameters the last backward never reached contribute zeros.
template <typename T, size_t N>
std::vector<T> flat_group_grad(const GraphT<T>& g, const std::array<int, N>& ids) {
    std::vector<T> out;
    size_t total = 0;
    for (int id : ids) total += g.value(id).numel();
    out.reserve(total);
    for (int id : ids) {
        const auto& gr = g.grad(id);
        if (gr.numel() == 0)
            out.insert(out.end(), g.value(id).numel(), T(0));
        else
            out.insert(out.end(), gr.data.begin(), gr.data.end());
    }
    return out;
}

}  // namespace gradweave
