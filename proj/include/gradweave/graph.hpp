#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradweave/ops.hpp"
#include "gradweave/tensor.hpp"

namespace gradweave {

enum class Mining { batch_hard, all_pairs };

enum class OpKind {
    input,
    param,
    conv2d,
    dense,
    relu,
    maxpool2x2,
    global_avg_pool,
    l2_normalize,
    logistic,
    weighted_sum,
    add,
    scale,
    cross_entropy,
    triplet,
    l1_loss,
};

// Reverse-mode tape. Nodes are appended in evaluation order (the forward
// value is computed at construction), so topological order is construction
// order and backward is a single reverse sweep.
template <typename T>
class GraphT {
public:
    // needs_grad=false marks data the caller will never differentiate
    // against (batch images, say); backward then skips every subgraph that
    // reaches no parameter and no wanted input.
    int add_input(TensorT<T> v, bool needs_grad = true) {
        int id = push(OpKind::input, std::move(v));
        nodes_.back().wants_grad = needs_grad;
        return id;
    }

    // Same as an input, but flagged as trainable so backward checks its
    // gradient for non-finite values.
    int add_param(TensorT<T> v) { return push(OpKind::param, std::move(v)); }

    int conv2d(int x, int w, int b, int stride, int padding) {
        const auto& xv = nodes_[x].value;
        const auto& wv = nodes_[w].value;
        const auto& bv = nodes_[b].value;
        if (xv.rank() != 4 || wv.rank() != 4)
            throw std::invalid_argument("conv2d: input and kernel must be rank 4");
        if (stride <= 0) throw std::invalid_argument("conv2d: stride must be positive");
        if (padding < 0) throw std::invalid_argument("conv2d: padding must be non-negative");
        if (xv.dim(1) != wv.dim(1))
            throw std::invalid_argument("conv2d: channel mismatch " + shape_str(xv) + " vs " + shape_str(wv));
        if (bv.rank() != 1 || bv.dim(0) != wv.dim(0))
            throw std::invalid_argument("conv2d: bias shape mismatch");
        const int ho = kernels::conv_out_extent(xv.dim(2), wv.dim(2), stride, padding, "H");
        const int wo = kernels::conv_out_extent(xv.dim(3), wv.dim(3), stride, padding, "W");
        TensorT<T> out({xv.dim(0), wv.dim(0), ho, wo});
        kernels::conv2d_forward(xv.ptr(), xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3),
                                wv.ptr(), wv.dim(0), wv.dim(2), wv.dim(3), bv.ptr(),
                                stride, padding, out.ptr(), ho, wo);
        int id = push(OpKind::conv2d, std::move(out), x, w, b);
        nodes_[id].stride = stride;
        nodes_[id].pad = padding;
        return id;
    }

    int dense(int x, int w, int b) {
        const auto& xv = nodes_[x].value;
        const auto& wv = nodes_[w].value;
        const auto& bv = nodes_[b].value;
        if (xv.rank() != 2 || wv.rank() != 2)
            throw std::invalid_argument("dense: input and weight must be rank 2");
        if (xv.dim(1) != wv.dim(1))
            throw std::invalid_argument("dense: shape mismatch " + shape_str(xv) + " vs " + shape_str(wv));
        if (bv.rank() != 1 || bv.dim(0) != wv.dim(0))
            throw std::invalid_argument("dense: bias shape mismatch");
        TensorT<T> out({xv.dim(0), wv.dim(0)});
        kernels::dense_forward(xv.ptr(), xv.dim(0), xv.dim(1), wv.ptr(), wv.dim(0), bv.ptr(), out.ptr());
        return push(OpKind::dense, std::move(out), x, w, b);
    }

    int relu(int x) {
        const auto& xv = nodes_[x].value;
        TensorT<T> out(xv.shape);
        kernels::relu_forward(xv.ptr(), xv.numel(), out.ptr());
        return push(OpKind::relu, std::move(out), x);
    }

    int maxpool2x2(int x) {
        const auto& xv = nodes_[x].value;
        if (xv.rank() != 4) throw std::invalid_argument("maxpool2x2: input must be rank 4");
        if (xv.dim(2) % 2 != 0 || xv.dim(3) % 2 != 0)
            throw std::invalid_argument("maxpool2x2: odd extents " + shape_str(xv));
        TensorT<T> out({xv.dim(0), xv.dim(1), xv.dim(2) / 2, xv.dim(3) / 2});
        std::vector<int> argmax(out.numel());
        kernels::maxpool2x2_forward(xv.ptr(), xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3),
                                    out.ptr(), argmax.data());
        int id = push(OpKind::maxpool2x2, std::move(out), x);
        nodes_[id].icache = std::move(argmax);
        return id;
    }

    int global_avg_pool(int x) {
        const auto& xv = nodes_[x].value;
        if (xv.rank() != 4) throw std::invalid_argument("global_avg_pool: input must be rank 4");
        TensorT<T> out({xv.dim(0), xv.dim(1)});
        kernels::global_avg_pool_forward(xv.ptr(), xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), out.ptr());
        return push(OpKind::global_avg_pool, std::move(out), x);
    }

    int l2_normalize(int x) {
        const auto& xv = nodes_[x].value;
        if (xv.rank() != 2) throw std::invalid_argument("l2_normalize: input must be rank 2");
        TensorT<T> out(xv.shape);
        std::vector<T> norms(static_cast<size_t>(xv.dim(0)));
        kernels::l2_normalize_forward(xv.ptr(), xv.dim(0), xv.dim(1), out.ptr(), norms.data());
        int id = push(OpKind::l2_normalize, std::move(out), x);
        nodes_[id].tcache = std::move(norms);
        return id;
    }

    int logistic(int x) {
        const auto& xv = nodes_[x].value;
        TensorT<T> out(xv.shape);
        kernels::logistic_forward(xv.ptr(), xv.numel(), out.ptr());
        return push(OpKind::logistic, std::move(out), x);
    }

    // scalar = sum_i weights[i] * x[i]; weights are constants
    int weighted_sum(int x, TensorT<T> weights) {
        const auto& xv = nodes_[x].value;
        if (weights.numel() != xv.numel())
            throw std::invalid_argument("weighted_sum: weight size mismatch");
        T acc = 0;
        for (size_t i = 0; i < xv.numel(); ++i) acc += weights.data[i] * xv.data[i];
        int id = push(OpKind::weighted_sum, TensorT<T>::scalar(acc), x);
        nodes_[id].tcache = std::move(weights.data);
        return id;
    }

    int sum(int x) { return weighted_sum(x, TensorT<T>::full(nodes_[x].value.shape, T(1))); }

    int add(int a, int b) {
        const auto& av = nodes_[a].value;
        const auto& bv = nodes_[b].value;
        if (!av.same_shape(bv)) throw std::invalid_argument("add: shape mismatch");
        TensorT<T> out(av.shape);
        for (size_t i = 0; i < out.numel(); ++i) out.data[i] = av.data[i] + bv.data[i];
        return push(OpKind::add, std::move(out), a, b);
    }

    int scale(int x, T c) {
        const auto& xv = nodes_[x].value;
        TensorT<T> out(xv.shape);
        for (size_t i = 0; i < out.numel(); ++i) out.data[i] = c * xv.data[i];
        int id = push(OpKind::scale, std::move(out), x);
        nodes_[id].scalar_attr = c;
        return id;
    }

    // Mean softmax cross-entropy over the batch; softmax uses max-subtraction.
    int cross_entropy(int logits, std::vector<int> labels) {
        const auto& lv = nodes_[logits].value;
        if (lv.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be rank 2");
        const int n = lv.dim(0), c = lv.dim(1);
        if (static_cast<int>(labels.size()) != n)
            throw std::invalid_argument("cross_entropy: label count mismatch");
        for (int l : labels)
            if (l < 0 || l >= c)
                throw std::invalid_argument("cross_entropy: label " + std::to_string(l) +
                                            " out of range [0," + std::to_string(c) + ")");
        std::vector<T> probs(static_cast<size_t>(n) * c);
        std::vector<double> e(static_cast<size_t>(c));
        double total = 0;
        for (int i = 0; i < n; ++i) {
            const T* row = lv.ptr() + static_cast<size_t>(i) * c;
            T* prow = probs.data() + static_cast<size_t>(i) * c;
            T mx = row[0];
            for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
            double z = 0;
            for (int j = 0; j < c; ++j) {
                e[static_cast<size_t>(j)] = std::exp(static_cast<double>(row[j]) - mx);
                z += e[static_cast<size_t>(j)];
            }
            for (int j = 0; j < c; ++j) prow[j] = static_cast<T>(e[static_cast<size_t>(j)] / z);
            // loss via log-sum-exp; stays finite even when the label's
            // probability underflows
            const int lab = labels[static_cast<size_t>(i)];
            total += (static_cast<double>(mx) - row[lab]) + std::log(z);
        }
        int id = push(OpKind::cross_entropy, TensorT<T>::scalar(static_cast<T>(total / n)), logits);
        nodes_[id].ilabels = std::move(labels);
        nodes_[id].tcache = std::move(probs);
        return id;
    }

    // Triplet loss with Euclidean distances. batch_hard picks the farthest
    // positive and nearest negative per anchor; all_pairs averages the hinge
    // over every (anchor, positive, negative) triple.
    int triplet(int embeddings, std::vector<int> labels, T margin, Mining mining) {
        const auto& ev = nodes_[embeddings].value;
        if (ev.rank() != 2) throw std::invalid_argument("triplet: embeddings must be rank 2");
        if (margin < T(0)) throw std::invalid_argument("triplet: margin must be non-negative");
        const int n = ev.dim(0), d = ev.dim(1);
        if (static_cast<int>(labels.size()) != n)
            throw std::invalid_argument("triplet: label count mismatch");

        std::vector<T> dist(static_cast<size_t>(n) * n, T(0));
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                const T* a = ev.ptr() + static_cast<size_t>(i) * d;
                const T* b = ev.ptr() + static_cast<size_t>(j) * d;
                double acc = 0;
                for (int k = 0; k < d; ++k) {
                    double diff = static_cast<double>(a[k]) - b[k];
                    acc += diff * diff;
                }
                dist[static_cast<size_t>(i) * n + j] = dist[static_cast<size_t>(j) * n + i] =
                    static_cast<T>(std::sqrt(acc));
            }
        }

        std::vector<int> sel;    // triples (anchor, positive, negative), hinge-active flag folded below
        std::vector<T> weights;  // d_p, d_n per stored triple
        double total = 0;
        size_t terms = 0;

        auto hinge = [margin](T dp, T dn) { return std::max(T(0), dp - dn + margin); };

        if (mining == Mining::batch_hard) {
            for (int i = 0; i < n; ++i) {
                int hp = -1, hn = -1;
                for (int j = 0; j < n; ++j) {
                    if (j == i) continue;
                    const T dij = dist[static_cast<size_t>(i) * n + j];
                    if (labels[j] == labels[i]) {
                        if (hp < 0 || dij > dist[static_cast<size_t>(i) * n + hp]) hp = j;
                    } else {
                        if (hn < 0 || dij < dist[static_cast<size_t>(i) * n + hn]) hn = j;
                    }
                }
                if (hp < 0 || hn < 0)
                    throw std::runtime_error(
                        "triplet: batch needs >=2 samples per identity and >=1 negative");
                const T dp = dist[static_cast<size_t>(i) * n + hp];
                const T dn = dist[static_cast<size_t>(i) * n + hn];
                total += hinge(dp, dn);
                ++terms;
                if (dp - dn + margin > T(0)) {
                    sel.insert(sel.end(), {i, hp, hn});
                    weights.insert(weights.end(), {dp, dn});
                }
            }
        } else {
            for (int i = 0; i < n; ++i) {
                bool has_pos = false, has_neg = false;
                for (int j = 0; j < n; ++j) {
                    if (j == i || labels[j] != labels[i]) continue;
                    has_pos = true;
                    for (int k = 0; k < n; ++k) {
                        if (labels[k] == labels[i]) continue;
                        has_neg = true;
                        const T dp = dist[static_cast<size_t>(i) * n + j];
                        const T dn = dist[static_cast<size_t>(i) * n + k];
                        total += hinge(dp, dn);
                        ++terms;
                        if (dp - dn + margin > T(0)) {
                            sel.insert(sel.end(), {i, j, k});
                            weights.insert(weights.end(), {dp, dn});
                        }
                    }
                }
                if (!has_pos || (has_pos && !has_neg))
                    throw std::runtime_error(
                        "triplet: batch needs >=2 samples per identity and >=1 negative");
            }
        }

        int id = push(OpKind::triplet, TensorT<T>::scalar(static_cast<T>(total / terms)), embeddings);
        nodes_[id].icache = std::move(sel);
        nodes_[id].tcache = std::move(weights);
        nodes_[id].scalar_attr = static_cast<T>(terms);
        return id;
    }

    // Mean absolute error over all elements.
    int l1_loss(int pred, int target) {
        const auto& pv = nodes_[pred].value;
        const auto& tv = nodes_[target].value;
        if (!pv.same_shape(tv))
            throw std::invalid_argument("l1_loss: shape mismatch " + shape_str(pv) + " vs " + shape_str(tv));
        double acc = 0;
        for (size_t i = 0; i < pv.numel(); ++i)
            acc += std::abs(static_cast<double>(pv.data[i]) - tv.data[i]);
        return push(OpKind::l1_loss, TensorT<T>::scalar(static_cast<T>(acc / pv.numel())), pred, target);
    }

    const TensorT<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    const TensorT<T>& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
    size_t size() const { return nodes_.size(); }

    // Reverse sweep from a scalar node. May be called repeatedly with
    // different roots on the same tape; gradients are reset each time.
    void backward(int loss) {
        auto& nodes = nodes_;
        if (nodes[static_cast<size_t>(loss)].value.numel() != 1)
            throw std::invalid_argument("backward: loss node must be scalar");
        if (!nodes[static_cast<size_t>(loss)].value.all_finite())
            throw std::runtime_error("backward: loss is not finite");

        // Restrict the sweep to ancestors of the loss.
        std::vector<char> needed(nodes.size(), 0);
        needed[static_cast<size_t>(loss)] = 1;
        for (int id = loss; id >= 0; --id) {
            if (!needed[static_cast<size_t>(id)]) continue;
            const Node& nd = nodes[static_cast<size_t>(id)];
            for (int in : {nd.in0, nd.in1, nd.in2})
                if (in >= 0) needed[static_cast<size_t>(in)] = 1;
        }
        // ...and, within those, to nodes whose gradient anyone consumes.
        for (int id = 0; id <= loss; ++id) {
            if (!needed[static_cast<size_t>(id)]) continue;
            Node& nd = nodes[static_cast<size_t>(id)];
            bool want;
            if (nd.kind == OpKind::param)
                want = true;
            else if (nd.kind == OpKind::input)
                want = nd.wants_grad;
            else {
                want = false;
                for (int in : {nd.in0, nd.in1, nd.in2})
                    if (in >= 0 && needed[static_cast<size_t>(in)] == 1) want = true;
            }
            if (!want) needed[static_cast<size_t>(id)] = 2;
        }
        for (size_t id = 0; id < nodes.size(); ++id) {
            if (needed[id] == 2) needed[id] = 0;
            if (!needed[id]) { nodes[id].grad = TensorT<T>(); continue; }
            if (nodes[id].grad.same_shape(nodes[id].value) && nodes[id].grad.numel() > 0)
                std::fill(nodes[id].grad.data.begin(), nodes[id].grad.data.end(), T(0));
            else
                nodes[id].grad = TensorT<T>::zeros(nodes[id].value.shape);
        }
        if (!needed[static_cast<size_t>(loss)]) return;  // no gradient sinks at all
        nodes[static_cast<size_t>(loss)].grad.data[0] = T(1);

        for (int id = loss; id >= 0; --id) {
            if (!needed[static_cast<size_t>(id)]) continue;
            backprop_node(id);
        }

        for (size_t id = 0; id < nodes.size(); ++id)
            if (needed[id] && nodes[id].kind == OpKind::param && !nodes[id].grad.all_finite())
                throw std::runtime_error("backward: non-finite parameter gradient");
    }

private:
    struct Node {
        OpKind kind;
        int in0 = -1, in1 = -1, in2 = -1;
        bool wants_grad = true;
        int stride = 1, pad = 0;
        T scalar_attr = T(0);
        std::vector<int> ilabels;
        std::vector<int> icache;
        std::vector<T> tcache;
        TensorT<T> value;
        TensorT<T> grad;
    };

    int push(OpKind kind, TensorT<T> value, int in0 = -1, int in1 = -1, int in2 = -1) {
        Node nd;
        nd.kind = kind;
        nd.in0 = in0;
        nd.in1 = in1;
        nd.in2 = in2;
        nd.value = std::move(value);
        nodes_.push_back(std::move(nd));
        return static_cast<int>(nodes_.size()) - 1;
    }

    void backprop_node(int id) {
        Node& nd = nodes_[static_cast<size_t>(id)];
        const TensorT<T>& go = nd.grad;
        switch (nd.kind) {
            case OpKind::input:
            case OpKind::param:
                break;
            case OpKind::conv2d: {
                const auto& xv = nodes_[nd.in0].value;
                const auto& wv = nodes_[nd.in1].value;
                auto& gx = nodes_[nd.in0].grad;
                kernels::conv2d_backward(xv.ptr(), xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3),
                                         wv.ptr(), wv.dim(0), wv.dim(2), wv.dim(3),
                                         nd.stride, nd.pad, go.ptr(), nd.value.dim(2),
                                         nd.value.dim(3), gx.numel() ? gx.ptr() : nullptr,
                                         nodes_[nd.in1].grad.ptr(), nodes_[nd.in2].grad.ptr());
                break;
            }
            case OpKind::dense: {
                const auto& xv = nodes_[nd.in0].value;
                const auto& wv = nodes_[nd.in1].value;
                auto& gx = nodes_[nd.in0].grad;
                kernels::dense_backward(xv.ptr(), xv.dim(0), xv.dim(1), wv.ptr(), wv.dim(0),
                                        go.ptr(), gx.numel() ? gx.ptr() : nullptr,
                                        nodes_[nd.in1].grad.ptr(), nodes_[nd.in2].grad.ptr());
                break;
            }
            case OpKind::relu:
                kernels::relu_backward(nodes_[nd.in0].value.ptr(), go.numel(), go.ptr(),
                                       nodes_[nd.in0].grad.ptr());
                break;
            case OpKind::maxpool2x2: {
                const auto& xv = nodes_[nd.in0].value;
                kernels::maxpool2x2_backward(xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), go.ptr(),
                                             nd.icache.data(), nodes_[nd.in0].grad.ptr());
                break;
            }
            case OpKind::global_avg_pool: {
                const auto& xv = nodes_[nd.in0].value;
                kernels::global_avg_pool_backward(xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3),
                                                  go.ptr(), nodes_[nd.in0].grad.ptr());
                break;
            }
            case OpKind::l2_normalize:
                kernels::l2_normalize_backward(nd.value.ptr(), nd.tcache.data(), nd.value.dim(0),
                                               nd.value.dim(1), go.ptr(), nodes_[nd.in0].grad.ptr());
                break;
            case OpKind::logistic:
                kernels::logistic_backward(nd.value.ptr(), go.numel(), go.ptr(),
                                           nodes_[nd.in0].grad.ptr());
                break;
            case OpKind::weighted_sum: {
                const T g = go.data[0];
                auto& gin = nodes_[nd.in0].grad.data;
                for (size_t i = 0; i < gin.size(); ++i) gin[i] += g * nd.tcache[i];
                break;
            }
            case OpKind::add: {
                auto& ga = nodes_[nd.in0].grad.data;
                auto& gb = nodes_[nd.in1].grad.data;
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += go.data[i];
                for (size_t i = 0; i < gb.size(); ++i) gb[i] += go.data[i];
                break;
            }
            case OpKind::scale: {
                auto& gin = nodes_[nd.in0].grad.data;
                for (size_t i = 0; i < gin.size(); ++i) gin[i] += nd.scalar_attr * go.data[i];
                break;
            }
            case OpKind::cross_entropy: {
                const T g = go.data[0];
                const auto& lv = nodes_[nd.in0].value;
                const int n = lv.dim(0), c = lv.dim(1);
                const T invn = T(1) / static_cast<T>(n);
                T* gin = nodes_[nd.in0].grad.ptr();
                for (int i = 0; i < n; ++i) {
                    const T* prow = nd.tcache.data() + static_cast<size_t>(i) * c;
                    T* grow = gin + static_cast<size_t>(i) * c;
                    const int lab = nd.ilabels[static_cast<size_t>(i)];
                    for (int j = 0; j < c; ++j)
                        grow[j] += g * invn * (prow[j] - (j == lab ? T(1) : T(0)));
                }
                break;
            }
            case OpKind::triplet: {
                const T g = go.data[0] / nd.scalar_attr;  // scalar_attr = term count
                const auto& ev = nodes_[nd.in0].value;
                const int d = ev.dim(1);
                T* gin = nodes_[nd.in0].grad.ptr();
                const size_t ntrip = nd.icache.size() / 3;
                for (size_t t = 0; t < ntrip; ++t) {
                    const int a = nd.icache[3 * t], p = nd.icache[3 * t + 1], n2 = nd.icache[3 * t + 2];
                    const T dp = nd.tcache[2 * t], dn = nd.tcache[2 * t + 1];
                    const T* ea = ev.ptr() + static_cast<size_t>(a) * d;
                    const T* ep = ev.ptr() + static_cast<size_t>(p) * d;
                    const T* en = ev.ptr() + static_cast<size_t>(n2) * d;
                    if (dp > static_cast<T>(1e-12)) {
                        const T s = g / dp;
                        for (int k = 0; k < d; ++k) {
                            const T diff = (ea[k] - ep[k]) * s;
                            gin[static_cast<size_t>(a) * d + k] += diff;
                            gin[static_cast<size_t>(p) * d + k] -= diff;
                        }
                    }
                    if (dn > static_cast<T>(1e-12)) {
                        const T s = g / dn;
                        for (int k = 0; k < d; ++k) {
                            const T diff = (ea[k] - en[k]) * s;
                            gin[static_cast<size_t>(a) * d + k] -= diff;
                            gin[static_cast<size_t>(n2) * d + k] += diff;
                        }
                    }
                }
                break;
            }
            case OpKind::l1_loss: {
                const auto& pv = nodes_[nd.in0].value;
                const auto& tv = nodes_[nd.in1].value;
                const T g = go.data[0] / static_cast<T>(pv.numel());
                auto& gpt = nodes_[nd.in0].grad;
                auto& gtt = nodes_[nd.in1].grad;
                T* gp = gpt.numel() ? gpt.ptr() : nullptr;
                T* gt = gtt.numel() ? gtt.ptr() : nullptr;
                for (size_t i = 0; i < pv.numel(); ++i) {
                    const T diff = pv.data[i] - tv.data[i];
                    const T s = diff > T(0) ? g : (diff < T(0) ? -g : T(0));
                    if (gp) gp[i] += s;
                    if (gt) gt[i] -= s;
                }
                break;
            }
        }
    }

    std::vector<Node> nodes_;
};

using Graph = GraphT<float>;

}  // namespace gradweave
