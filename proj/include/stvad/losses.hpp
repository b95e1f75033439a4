#pragma once

#include <stdexcept>

#include "stvad/graph.hpp"
#include "stvad/memory.hpp"
#include "stvad/tensor.hpp"

// Training objective: per-stream prediction loss, feature discretization loss
// against the memory bank, and the weighted combination of both streams.
namespace stvad::losses {

template <typename T>
struct LossWeights {
    T alpha_s = T(0.1);  // spatial discretization weight
    T beta_s = T(0.1);   // temporal discretization weight
    T gamma_i = T(0.5);  // spatial stream weight; gamma_x = 1 - gamma_i
    T margin_a = T(2);
    T margin_b = T(1);

    T gamma_x() const { return T(1) - gamma_i; }

    void validate() const {
        if (gamma_i < T(0) || gamma_i > T(1))
            throw std::invalid_argument("loss weights: gamma_i must lie in [0, 1]");
        if (margin_a < T(0) || margin_b < T(0))
            throw std::invalid_argument("loss weights: margins must be nonnegative");
    }
};

enum class PredictionLossMode { mean, sum };

struct DiscretizationOptions {
    bool hinge = true;          // clamp each term at zero
    bool square_second = false; // square ||p_n2 - p_n1|| as well
};

// Mean (or sum) of squared prediction error.
template <typename T>
int prediction_loss(Graph<T>& g, int pred, int target,
                    PredictionLossMode mode = PredictionLossMode::mean) {
    if (!same_shape(g.value(pred), g.value(target)))
        throw std::invalid_argument("prediction_loss: shape mismatch " +
                                    shape_str(g.value(pred).shape()) + " vs " +
                                    shape_str(g.value(target).shape()));
    const int d = g.sub(pred, target);
    const int sq = g.mul(d, d);
    return mode == PredictionLossMode::mean ? g.mean_all(sq) : g.sum_all(sq);
}

// Margin loss against the three nearest bank items (cosine order). The
// nearest-item assignment is computed from the forward values and treated as
// piecewise constant, so gradients flow only through the distances.
template <typename T>
int discretization_loss(Graph<T>& g, int features, const memory::MemoryBank<T>& bank, T margin_a,
                        T margin_b, DiscretizationOptions opts = {}) {
    if (bank.item_count() < 3)
        throw std::invalid_argument("discretization_loss: needs at least 3 memory items");
    const Tensor<T>& q = g.value(features);
    const int k = q.dim(0), c = q.dim(1);
    const std::vector<int> near = memory::nearest_items(q, bank, 3);

    Tensor<T> pp({k, c}), pn1({k, c});
    Tensor<T> spread({k});
    for (int f = 0; f < k; ++f) {
        const T* rp = bank.items.data() + static_cast<std::size_t>(near[f * 3 + 0]) * c;
        const T* r1 = bank.items.data() + static_cast<std::size_t>(near[f * 3 + 1]) * c;
        const T* r2 = bank.items.data() + static_cast<std::size_t>(near[f * 3 + 2]) * c;
        std::copy(rp, rp + c, pp.data() + static_cast<std::size_t>(f) * c);
        std::copy(r1, r1 + c, pn1.data() + static_cast<std::size_t>(f) * c);
        T d2 = T(0);
        for (int i = 0; i < c; ++i) d2 += (r2[i] - r1[i]) * (r2[i] - r1[i]);
        spread[static_cast<std::size_t>(f)] = opts.square_second ? d2 : std::sqrt(d2);
    }

    const int dpp = g.sub(features, g.constant(pp));
    const int dist_pp = g.rowsum(g.mul(dpp, dpp));
    const int dn1 = g.sub(features, g.constant(pn1));
    const int dist_n1 = g.rowsum(g.mul(dn1, dn1));

    int term1 = g.add_scalar(g.sub(dist_pp, dist_n1), margin_a);
    int term2 = g.add_scalar(g.sub(dist_pp, g.constant(spread)), margin_b);
    if (opts.hinge) {
        term1 = g.relu(term1);
        term2 = g.relu(term2);
    }
    return g.mean_all(g.add(term1, term2));
}

// L = gamma_i * (L_p1 + alpha_s * L_s1) + gamma_x * (L_p2 + beta_s * L_s2)
template <typename T>
int total_loss(Graph<T>& g, int lp1, int ls1, int lp2, int ls2, const LossWeights<T>& w) {
    const int li = g.add(lp1, g.scale(ls1, w.alpha_s));
    const int lx = g.add(lp2, g.scale(ls2, w.beta_s));
    return g.add(g.scale(li, w.gamma_i), g.scale(lx, w.gamma_x()));
}

// ---- plain value-level entry points ----

template <typename T>
T prediction_loss_value(const Tensor<T>& pred, const Tensor<T>& target,
                        PredictionLossMode mode = PredictionLossMode::mean) {
    Graph<T> g(false);
    return g.value(prediction_loss(g, g.leaf(pred), g.leaf(target), mode))[0];
}

template <typename T>
T discretization_loss_value(const Tensor<T>& features, const memory::MemoryBank<T>& bank,
                            T margin_a, T margin_b, DiscretizationOptions opts = {}) {
    Graph<T> g(false);
    return g.value(discretization_loss(g, g.leaf(features), bank, margin_a, margin_b, opts))[0];
}

template <typename T>
T total_loss_value(T lp1, T ls1, T lp2, T ls2, const LossWeights<T>& w) {
    return w.gamma_i * (lp1 + w.alpha_s * ls1) + w.gamma_x() * (lp2 + w.beta_s * ls2);
}

}  // namespace stvad::losses
