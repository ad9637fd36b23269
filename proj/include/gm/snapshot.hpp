#pragma once

// Slices a dataset into S equal half-open windows and builds one directed
// trust graph per window. Edge weights aggregate collaboration outcomes:
//
//   w(i->j) = (1/N) * sum_n ( alpha1 * (1 - loss_n) + alpha2 * out_n )
//
// Edges are stored sorted by (trustor, trustee), so any downstream reduction
// over them is independent of record order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "gm/simnet.hpp"

namespace gm::snap {

struct WindowSpec {
    int n_slots = 10;

    double slot_len_s(double horizon_s) const {
        return horizon_s / static_cast<double>(n_slots);
    }
};

struct TrustEdge {
    int trustor_id = 0;
    int trustee_id = 0;
    double weight = 0.0;     // in [0,1]
    int n_interactions = 0;  // >= 1
};

struct TrustSnapshot {
    int slot_index = 0;
    std::vector<int> nodes;              // sorted union of edge endpoints
    std::vector<TrustEdge> edges;        // sorted by (trustor, trustee)
    std::map<int, std::vector<std::size_t>> in_adj;   // trustee -> edge idx
    std::map<int, std::vector<std::size_t>> out_adj;  // trustor -> edge idx

    bool empty() const { return edges.empty(); }

    void rebuild_indexes() {
        std::sort(edges.begin(), edges.end(),
                  [](const TrustEdge& a, const TrustEdge& b) {
                      return std::tie(a.trustor_id, a.trustee_id) <
                             std::tie(b.trustor_id, b.trustee_id);
                  });
        nodes.clear();
        in_adj.clear();
        out_adj.clear();
        for (std::size_t e = 0; e < edges.size(); ++e) {
            nodes.push_back(edges[e].trustor_id);
            nodes.push_back(edges[e].trustee_id);
            out_adj[edges[e].trustor_id].push_back(e);
            in_adj[edges[e].trustee_id].push_back(e);
        }
        std::sort(nodes.begin(), nodes.end());
        nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    }
};

// Eq-style aggregation of one ordered pair's records within a slot.
inline double aggregate_edge(
    const std::vector<std::pair<double, int>>& records,  // (loss, outcome)
    double alpha1, double alpha2) {
    if (records.empty())
        throw std::invalid_argument("aggregate_edge: empty record list");
    if (alpha1 < 0.0 || alpha2 < 0.0 ||
        std::abs(alpha1 + alpha2 - 1.0) > 1e-12)
        throw std::invalid_argument(
            "aggregate_edge: weights (" + std::to_string(alpha1) + ", " +
            std::to_string(alpha2) + ") must be nonnegative and sum to 1");
    double acc = 0.0;
    for (const auto& [loss, out] : records)
        acc += alpha1 * (1.0 - loss) + alpha2 * static_cast<double>(out);
    return acc / static_cast<double>(records.size());
}

inline int slot_of(double t, double slot_len, int n_slots) {
    const int s = static_cast<int>(std::floor(t / slot_len));
    return std::clamp(s, 0, n_slots - 1);
}

inline std::vector<TrustSnapshot> build_snapshots(const sim::Dataset& ds,
                                                  const WindowSpec& window,
                                                  double alpha1,
                                                  double alpha2) {
    if (window.n_slots < 1)
        throw std::invalid_argument("build_snapshots: n_slots " +
                                    std::to_string(window.n_slots));
    const double slot_len = window.slot_len_s(ds.horizon_s);
    // (slot, trustor, trustee) -> records
    std::map<std::tuple<int, int, int>, std::vector<std::pair<double, int>>>
        groups;
    for (const auto& r : ds.records) {
        const int s = slot_of(r.time, slot_len, window.n_slots);
        groups[{s, r.trustor_id, r.trustee_id}].emplace_back(r.packet_loss,
                                                             r.outcome);
    }
    std::vector<TrustSnapshot> out(static_cast<std::size_t>(window.n_slots));
    for (int s = 0; s < window.n_slots; ++s)
        out[static_cast<std::size_t>(s)].slot_index = s;
    for (const auto& [key, recs] : groups) {
        const auto [s, i, j] = key;
        TrustEdge e;
        e.trustor_id = i;
        e.trustee_id = j;
        e.weight = aggregate_edge(recs, alpha1, alpha2);
        e.n_interactions = static_cast<int>(recs.size());
        out[static_cast<std::size_t>(s)].edges.push_back(e);
    }
    for (auto& snap : out) snap.rebuild_indexes();
    return out;
}

inline void write_snapshots_jsonl(std::ostream& os,
                                  const std::vector<TrustSnapshot>& snaps) {
    for (const auto& snap : snaps)
        for (const auto& e : snap.edges)
            os << "{\"slot\":" << snap.slot_index << ",\"src\":"
               << e.trustor_id << ",\"dst\":" << e.trustee_id << ",\"w\":"
               << gm::detail::format_double(e.weight) << ",\"n\":"
               << e.n_interactions << "}\n";
}

}  // namespace gm::snap

namespace gm::sim {

// Ground-truth trust labels: the same aggregation rule evaluated per ordered
// pair per slot. Pairs with no records in a slot have no entry.
using LabelKey = std::tuple<int, int, int>;  // (trustor, trustee, slot)

inline std::map<LabelKey, double> ground_truth_labels(
    const Dataset& ds, const snap::WindowSpec& window, double alpha1 = 0.6,
    double alpha2 = 0.4) {
    if (ds.records.empty())
        throw std::runtime_error("ground_truth_labels: dataset has no records");
    const double slot_len = window.slot_len_s(ds.horizon_s);
    std::map<LabelKey, std::vector<std::pair<double, int>>> groups;
    for (const auto& r : ds.records) {
        const int s = snap::slot_of(r.time, slot_len, window.n_slots);
        groups[{r.trustor_id, r.trustee_id, s}].emplace_back(r.packet_loss,
                                                             r.outcome);
    }
    std::map<LabelKey, double> labels;
    for (const auto& [key, recs] : groups)
        labels[key] = snap::aggregate_edge(recs, alpha1, alpha2);
    return labels;
}

}  // namespace gm::sim
