#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "stvad/graph.hpp"
#include "stvad/rng.hpp"
#include "stvad/tensor.hpp"

// Memory enhancement module: a bank of M unit-norm prototype vectors over
// normal patterns. Reading is a softmax-weighted mixture over items; updates
// move each item toward the features that chose it as their nearest.
namespace stvad::memory {

template <typename T>
struct MemoryBank {
    Tensor<T> items;  // {M, C}, rows kept at unit L2 norm

    int item_count() const { return items.dim(0); }
    int feature_dim() const { return items.dim(1); }
};

template <typename T>
struct ReadResult {
    Tensor<T> q_hat;       // {K, C} retrieved features
    Tensor<T> weights;     // {K, M} softmax read weights
    Tensor<T> similarity;  // {K, M} cosine similarities
};

// Node ids of the read subgraph (training path).
struct ReadNodes {
    int q_hat = -1;
    int weights = -1;
    int similarity = -1;
};

template <typename T>
void normalize_rows(Tensor<T>& m) {
    const int rows = m.dim(0), cols = m.dim(1);
    for (int r = 0; r < rows; ++r) {
        T* row = m.data() + static_cast<std::size_t>(r) * cols;
        T n2 = T(0);
        for (int j = 0; j < cols; ++j) n2 += row[j] * row[j];
        const T n = std::max(std::sqrt(n2), static_cast<T>(1e-12));
        for (int j = 0; j < cols; ++j) row[j] /= n;
    }
}

template <typename T>
MemoryBank<T> init_bank(int m, int c, std::uint64_t seed) {
    if (m < 3)
        throw std::invalid_argument("memory: at least 3 items required, got " + std::to_string(m));
    if (c < 1) throw std::invalid_argument("memory: feature dim must be positive");
    Rng rng(seed);
    Tensor<T> items({m, c});
    for (std::size_t i = 0; i < items.size(); ++i) items[i] = static_cast<T>(rng.normal());
    normalize_rows(items);
    return MemoryBank<T>{std::move(items)};
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& m) {
    const int rows = m.dim(0), cols = m.dim(1);
    Tensor<T> t({cols, rows});
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < cols; ++j)
            t[static_cast<std::size_t>(j) * rows + r] = m[static_cast<std::size_t>(r) * cols + j];
    return t;
}

// Builds the differentiable read path: features are L2-normalized (bank rows
// already are, so the dot product is the cosine), weights are the row softmax
// over items, and the retrieved feature is the weighted item mixture.
template <typename T>
ReadNodes read_nodes(Graph<T>& g, int q, const MemoryBank<T>& bank) {
    if (g.value(q).rank() != 2 || g.value(q).dim(1) != bank.feature_dim())
        throw std::invalid_argument("memory read: feature dim mismatch, features " +
                                    shape_str(g.value(q).shape()) + " vs bank C=" +
                                    std::to_string(bank.feature_dim()));
    const int items = g.constant(bank.items);
    const int items_t = g.constant(transpose(bank.items));
    const int qn = g.l2_normalize_rows(q);
    ReadNodes out;
    out.similarity = g.matmul(qn, items_t);
    out.weights = g.softmax_rows(out.similarity);
    out.q_hat = g.matmul(out.weights, items);
    return out;
}

template <typename T>
ReadResult<T> read(const Tensor<T>& q, const MemoryBank<T>& bank) {
    if (!q.all_finite()) throw std::invalid_argument("memory read: non-finite features");
    Graph<T> g(false);
    const ReadNodes n = read_nodes(g, g.leaf(q), bank);
    return ReadResult<T>{g.value(n.q_hat), g.value(n.weights), g.value(n.similarity)};
}

// Per feature, the indices of the n most cosine-similar items, ties broken
// toward the lower index. Flat row-major {K, n}.
template <typename T>
std::vector<int> nearest_items(const Tensor<T>& q, const MemoryBank<T>& bank, int n) {
    const int m = bank.item_count();
    if (n > m)
        throw std::invalid_argument("memory: requested " + std::to_string(n) + " nearest of " +
                                    std::to_string(m) + " items");
    const ReadResult<T> r = read(q, bank);
    const int k = q.dim(0);
    std::vector<int> out(static_cast<std::size_t>(k) * n);
    std::vector<int> order(static_cast<std::size_t>(m));
    for (int f = 0; f < k; ++f) {
        const T* sim = r.similarity.data() + static_cast<std::size_t>(f) * m;
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [sim](int a, int b) { return sim[a] > sim[b]; });
        std::copy(order.begin(), order.begin() + n, out.begin() + static_cast<std::size_t>(f) * n);
    }
    return out;
}

// Bank refresh (Eqs. 7-8): v is the column softmax of the similarity matrix
// over features; each item m gathers the features whose top-similarity item
// is m, renormalizes their v weights to sum 1, adds the weighted feature sum
// and re-normalizes. Items nobody selected are left untouched. Raw (not
// normalized) features enter the weighted sum. Not part of gradient flow.
template <typename T>
MemoryBank<T> update(const Tensor<T>& q, const MemoryBank<T>& bank) {
    const ReadResult<T> r = read(q, bank);
    const int k = q.dim(0), m = bank.item_count(), c = bank.feature_dim();

    // column softmax of similarity, stabilized per column
    Tensor<T> v({k, m});
    for (int j = 0; j < m; ++j) {
        T mx = r.similarity[j];
        for (int f = 1; f < k; ++f)
            mx = std::max(mx, r.similarity[static_cast<std::size_t>(f) * m + j]);
        T sum = T(0);
        for (int f = 0; f < k; ++f) {
            const T e = std::exp(r.similarity[static_cast<std::size_t>(f) * m + j] - mx);
            v[static_cast<std::size_t>(f) * m + j] = e;
            sum += e;
        }
        for (int f = 0; f < k; ++f) v[static_cast<std::size_t>(f) * m + j] /= sum;
    }

    // top-similarity assignment, ties toward the lower index
    std::vector<int> assign(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) {
        const T* sim = r.similarity.data() + static_cast<std::size_t>(f) * m;
        int best = 0;
        for (int j = 1; j < m; ++j)
            if (sim[j] > sim[best]) best = j;
        assign[static_cast<std::size_t>(f)] = best;
    }

    // Items with an empty index set keep their exact bits.
    Tensor<T> items = bank.items.clone();
    for (int j = 0; j < m; ++j) {
        T wsum = T(0);
        for (int f = 0; f < k; ++f)
            if (assign[static_cast<std::size_t>(f)] == j)
                wsum += v[static_cast<std::size_t>(f) * m + j];
        if (wsum <= T(0)) continue;
        T* row = items.data() + static_cast<std::size_t>(j) * c;
        for (int f = 0; f < k; ++f) {
            if (assign[static_cast<std::size_t>(f)] != j) continue;
            const T w = v[static_cast<std::size_t>(f) * m + j] / wsum;
            const T* feat = q.data() + static_cast<std::size_t>(f) * c;
            for (int i = 0; i < c; ++i) row[i] += w * feat[i];
        }
        T n2 = T(0);
        for (int i = 0; i < c; ++i) n2 += row[i] * row[i];
        const T norm = std::max(std::sqrt(n2), static_cast<T>(1e-12));
        for (int i = 0; i < c; ++i) row[i] /= norm;
    }
    return MemoryBank<T>{std::move(items)};
}

}  // namespace stvad::memory
