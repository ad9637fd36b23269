#pragma once

// Node latent states via node2vec over the time-collapsed undirected union of
// all snapshot edges, plus the trainable per-slot temporal embedding table.
// The node table is pretrained once and frozen; only the temporal table
// participates in backpropagation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "gm/rng.hpp"
#include "gm/snapshot.hpp"
#include "gm/tensor.hpp"

namespace gm::embed {

struct Node2vecConfig {
    int dim = 128;            // d_a
    int walks_per_node = 10;
    int walk_length = 40;
    double return_p = 1.0;    // second-order return weight 1/p
    double inout_q = 1.0;     // second-order exploration weight 1/q
    int window = 5;
    int negatives = 5;
    int epochs = 3;
    double lr = 0.025;
    std::uint64_t seed = 0;
};

struct NodeEmbeddingTable {
    Tensor matrix;  // (n_devices x d_a), requires_grad = false
    int dim = 0;
};

struct TemporalEmbeddingTable {
    Tensor matrix;  // (S x d_a), requires_grad = true
};

// Undirected, deduplicated adjacency over device ids 0..n-1.
struct UnionGraph {
    std::vector<std::vector<int>> adj;  // sorted neighbor lists

    bool has_edge(int a, int b) const {
        const auto& nb = adj[static_cast<std::size_t>(a)];
        return std::binary_search(nb.begin(), nb.end(), b);
    }
};

inline UnionGraph union_graph(const std::vector<snap::TrustSnapshot>& snaps,
                              std::size_t n_devices) {
    std::vector<std::set<int>> nb(n_devices);
    for (const auto& s : snaps)
        for (const auto& e : s.edges) {
            nb[static_cast<std::size_t>(e.trustor_id)].insert(e.trustee_id);
            nb[static_cast<std::size_t>(e.trustee_id)].insert(e.trustor_id);
        }
    UnionGraph g;
    g.adj.resize(n_devices);
    for (std::size_t i = 0; i < n_devices; ++i)
        g.adj[i].assign(nb[i].begin(), nb[i].end());
    return g;
}

// Second-order biased walks. From `cur` with predecessor `prev`, a neighbor x
// is weighted 1/p when x == prev, 1 when x neighbors prev, 1/q otherwise.
// The first step from each start node is uniform. Walks truncate at isolated
// nodes.
inline std::vector<std::vector<int>> biased_walks(const UnionGraph& g,
                                                  const Node2vecConfig& cfg) {
    if (g.adj.empty())
        throw std::invalid_argument("biased_walks: empty graph");
    SplitRng rng(cfg.seed ^ 0x4E32u);
    std::vector<std::vector<int>> walks;
    walks.reserve(g.adj.size() * static_cast<std::size_t>(cfg.walks_per_node));
    std::vector<double> weights;
    for (int w = 0; w < cfg.walks_per_node; ++w) {
        for (std::size_t start = 0; start < g.adj.size(); ++start) {
            std::vector<int> walk{static_cast<int>(start)};
            while (static_cast<int>(walk.size()) < cfg.walk_length) {
                const int cur = walk.back();
                const auto& nb = g.adj[static_cast<std::size_t>(cur)];
                if (nb.empty()) break;
                int next;
                if (walk.size() == 1) {
                    next = nb[rng.uniform_index(nb.size())];
                } else {
                    const int prev = walk[walk.size() - 2];
                    weights.clear();
                    weights.reserve(nb.size());
                    for (int x : nb) {
                        if (x == prev)
                            weights.push_back(1.0 / cfg.return_p);
                        else if (g.has_edge(prev, x))
                            weights.push_back(1.0);
                        else
                            weights.push_back(1.0 / cfg.inout_q);
                    }
                    next = nb[rng.weighted_index(weights)];
                }
                walk.push_back(next);
            }
            walks.push_back(std::move(walk));
        }
    }
    return walks;
}

// Skip-gram with negative sampling over the walk corpus. Negatives are drawn
// from the unigram^(3/4) distribution of walk occurrences. Returns the input
// vectors as a frozen table.
inline NodeEmbeddingTable train_sgns(
    const std::vector<std::vector<int>>& walks, std::size_t n_devices,
    const Node2vecConfig& cfg) {
    if (walks.empty())
        throw std::invalid_argument("train_sgns: no walks");
    const std::size_t d = static_cast<std::size_t>(cfg.dim);
    SplitRng rng(cfg.seed ^ 0x5347u);
    std::vector<double> in(n_devices * d), out(n_devices * d, 0.0);
    for (double& v : in) v = rng.uniform(-0.5, 0.5) / static_cast<double>(d);

    // Unigram^(3/4) cumulative table for negative sampling.
    std::vector<double> freq(n_devices, 0.0);
    for (const auto& w : walks)
        for (int node : w) freq[static_cast<std::size_t>(node)] += 1.0;
    std::vector<double> cum(n_devices, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n_devices; ++i) {
        total += std::pow(freq[i], 0.75);
        cum[i] = total;
    }
    const auto draw_negative = [&]() -> std::size_t {
        const double r = rng.uniform() * total;
        return static_cast<std::size_t>(
            std::lower_bound(cum.begin(), cum.end(), r) - cum.begin());
    };

    std::vector<double> accum(d);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const auto& walk : walks) {
            for (std::size_t c = 0; c < walk.size(); ++c) {
                const std::size_t center =
                    static_cast<std::size_t>(walk[c]);
                double* vin = in.data() + center * d;
                const std::size_t lo =
                    c >= static_cast<std::size_t>(cfg.window)
                        ? c - static_cast<std::size_t>(cfg.window)
                        : 0;
                const std::size_t hi = std::min(
                    walk.size() - 1,
                    c + static_cast<std::size_t>(cfg.window));
                for (std::size_t k = lo; k <= hi; ++k) {
                    if (k == c) continue;
                    const std::size_t ctx = static_cast<std::size_t>(walk[k]);
                    std::fill(accum.begin(), accum.end(), 0.0);
                    for (int neg = 0; neg <= cfg.negatives; ++neg) {
                        std::size_t target;
                        double label;
                        if (neg == 0) {
                            target = ctx;
                            label = 1.0;
                        } else {
                            target = draw_negative();
                            if (target == ctx) continue;
                            label = 0.0;
                        }
                        double* vout = out.data() + target * d;
                        double dot = 0.0;
                        for (std::size_t i = 0; i < d; ++i)
                            dot += vin[i] * vout[i];
                        const double s = 1.0 / (1.0 + std::exp(-dot));
                        const double g = cfg.lr * (label - s);
                        for (std::size_t i = 0; i < d; ++i) {
                            accum[i] += g * vout[i];
                            vout[i] += g * vin[i];
                        }
                    }
                    for (std::size_t i = 0; i < d; ++i) vin[i] += accum[i];
                }
            }
        }
    }
    NodeEmbeddingTable table;
    table.dim = cfg.dim;
    table.matrix = Tensor(Shape{n_devices, d}, std::move(in), false);
    return table;
}

inline NodeEmbeddingTable node2vec(const std::vector<snap::TrustSnapshot>& snaps,
                                   std::size_t n_devices,
                                   const Node2vecConfig& cfg) {
    return train_sgns(biased_walks(union_graph(snaps, n_devices), cfg),
                      n_devices, cfg);
}

// Trainable per-slot table, Normal(0, 0.02) init.
inline TemporalEmbeddingTable make_temporal_table(int n_slots, int dim,
                                                  std::uint64_t seed) {
    SplitRng rng(seed ^ 0x7441u);
    std::vector<double> data(static_cast<std::size_t>(n_slots) *
                             static_cast<std::size_t>(dim));
    for (double& v : data) v = rng.normal(0.0, 0.02);
    TemporalEmbeddingTable t;
    t.matrix = Tensor(Shape{static_cast<std::size_t>(n_slots),
                            static_cast<std::size_t>(dim)},
                      std::move(data), true);
    return t;
}

// Differentiable row lookup; gradients flow into the table.
inline Tensor temporal_embedding(const TemporalEmbeddingTable& table,
                                 int slot) {
    if (slot < 0 || static_cast<std::size_t>(slot) >= table.matrix.dim(0))
        throw std::invalid_argument(
            "temporal_embedding: slot " + std::to_string(slot) + " out of " +
            std::to_string(table.matrix.dim(0)));
    return row(table.matrix, static_cast<std::size_t>(slot));
}

}  // namespace gm::embed
