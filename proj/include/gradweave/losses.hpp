#pragma once

#include <stdexcept>
#include <vector>

#include "gradweave/graph.hpp"

namespace gradweave {

struct TripletConfig {
    float margin = 0.3f;
    Mining mining = Mining::batch_hard;
};

struct LossWeights {
    float lambda = 0.1f;  // auxiliary weight
};

template <typename T>
int cross_entropy(GraphT<T>& g, int logits, std::vector<int> labels) {
    return g.cross_entropy(logits, std::move(labels));
}

template <typename T>
int triplet_loss(GraphT<T>& g, int embeddings, std::vector<int> labels, const TripletConfig& cfg) {
    return g.triplet(embeddings, std::move(labels), static_cast<T>(cfg.margin), cfg.mining);
}

template <typename T>
struct PrimaryLossNodes {
    int id_loss;
    int tri_loss;
    int total;
};

// L_prim = L_id + L_tri, unweighted.
template <typename T>
PrimaryLossNodes<T> primary_loss(GraphT<T>& g, int logits, int embeddings,
                                 const std::vector<int>& labels, const TripletConfig& cfg) {
    PrimaryLossNodes<T> out;
    out.id_loss = cross_entropy(g, logits, labels);
    out.tri_loss = triplet_loss(g, embeddings, labels, cfg);
    out.total = g.add(out.id_loss, out.tri_loss);
    return out;
}

// Mean absolute error between predicted saliency maps and weak labels.
template <typename T>
int aux_l1_loss(GraphT<T>& g, int pred_maps, int weak_labels) {
    return g.l1_loss(pred_maps, weak_labels);
}

// L_train = L_prim + lambda * L_aux.
template <typename T>
int train_loss(GraphT<T>& g, int primary, int aux, const LossWeights& w) {
    if (w.lambda < 0) throw std::invalid_argument("train_loss: lambda must be non-negative");
    return g.add(primary, g.scale(aux, static_cast<T>(w.lambda)));
}

// The deployment objective: auxiliary L1 over the test batch, nothing else.
// Depends only on the trunk and auxiliary head; identity labels never enter.
template <typename T>
int test_loss(GraphT<T>& g, int pred_maps, int weak_labels) {
    return aux_l1_loss(g, pred_maps, weak_labels);
}

}  // namespace gradweave
