#pragma once

// Shared helpers for gradient verification tests.

#include <algorithm>
#include <cmath>
#include <vector>

#include "gradweave/fdiff.hpp"
#include "gradweave/graph.hpp"
#include "gradweave/rng.hpp"
#include "gradweave/tensor.hpp"

namespace fdtest {

inline double linf(const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double scale = 0;
    for (size_t i = 0; i < a.size(); ++i)
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    if (scale < 1e-12) return 0.0;
    double worst = 0;
    for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst / scale;
}

template <typename T>
gradweave::TensorT<T> rand_tensor(std::vector<int> shape, gradweave::Rng& rng, T lo = T(-1),
                                  T hi = T(1)) {
    gradweave::TensorT<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
    return t;
}

// Compares the tape gradient of `build`'s scalar output w.r.t. `param`
// against central finite differences. `build(graph, param_node)` must add the
// same subgraph every call.
template <typename T, typename Build>
double fd_check(const gradweave::TensorT<T>& param, Build&& build, double step) {
    gradweave::GraphT<T> g;
    int pid = g.add_param(param);
    int loss = build(g, pid);
    g.backward(loss);
    const auto& analytic_t = g.grad(pid);
    std::vector<double> analytic(analytic_t.data.begin(), analytic_t.data.end());

    std::vector<double> flat(param.data.begin(), param.data.end());
    auto f = [&](const std::vector<double>& x) {
        gradweave::TensorT<T> p(param.shape);
        for (size_t i = 0; i < x.size(); ++i) p.data[i] = static_cast<T>(x[i]);
        gradweave::GraphT<T> h;
        int hid = h.add_param(std::move(p));
        int l = build(h, hid);
        return static_cast<double>(h.value(l).data[0]);
    };
    auto numeric = gradweave::finite_diff_gradient(f, flat, step);
    return max_rel_err(analytic, numeric);
}

}  // namespace fdtest
