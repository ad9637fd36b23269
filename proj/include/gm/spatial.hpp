#pragma once

// Role-aware message passing over trust snapshots. Per slot and per layer,
// every device aggregates trustee-side messages from its in-neighbors and
// trustor-side messages from its out-neighbors; the two role states are then
// fused into one per-device state. Stacking the per-slot states of the final
// layer gives each device an (S x d_out) trust trajectory.
//
// Edge trust values enter as fixed-point binary codes psi re-projected at
// every layer with that layer's P matrices; node states carried between
// layers start from the frozen node2vec rows.

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gm/embed.hpp"
#include "gm/snapshot.hpp"
#include "gm/tensor.hpp"

namespace gm::spatial {

enum class Activation { relu, tanh, sigmoid };

inline Tensor apply_activation(const Tensor& x, Activation act) {
    switch (act) {
        case Activation::relu: return relu(x);
        case Activation::tanh: return tanh_act(x);
        case Activation::sigmoid: return sigmoid(x);
    }
    return relu(x);
}

struct TrustCode {
    std::vector<double> bits;  // most-significant first, each 0 or 1
};

// Fixed-point encoding of a trust value: q = round(v * (2^d_T - 1)).
inline TrustCode encode_trust(double value, int d_t) {
    if (!(value >= 0.0 && value <= 1.0))
        throw std::invalid_argument("encode_trust: value " +
                                    std::to_string(value) +
                                    " outside [0,1]");
    const long max_q = (1L << d_t) - 1;
    long q = std::lround(value * static_cast<double>(max_q));
    TrustCode code;
    code.bits.resize(static_cast<std::size_t>(d_t));
    for (int b = d_t - 1; b >= 0; --b) {
        code.bits[static_cast<std::size_t>(d_t - 1 - b)] =
            static_cast<double>((q >> b) & 1L);
    }
    return code;
}

inline double decode_trust(const TrustCode& code) {
    long q = 0;
    for (double b : code.bits) q = (q << 1) | static_cast<long>(b);
    return static_cast<double>(q) /
           static_cast<double>((1L << code.bits.size()) - 1);
}

// One GNN layer. msg_W acts on concat(h_src, u, tau); P_tr / P_to are shared
// across edges within the layer.
struct SpatialLayerParams {
    Tensor p_tr;    // (d_l x d_T)
    Tensor p_to;    // (d_l x d_T)
    Tensor msg_w;   // (d_l x (d_in + d_l + d_a))
    Tensor msg_b;   // (d_l)
    Tensor w_fuse;  // (d_l x 2*d_l)
    Tensor b_fuse;  // (d_l)

    std::size_t width() const { return p_tr.dim(0); }
    std::size_t in_width() const {
        return msg_w.dim(1) - width() - tau_width();
    }
    std::size_t tau_width() const { return tau_width_; }
    std::size_t tau_width_ = 128;
};

struct SpatialConfig {
    int d_t = 8;
    std::vector<std::size_t> layer_widths = {32, 64, 32};
    std::size_t d_a = 128;
    Activation fuse_act = Activation::relu;
    double dropout_rate = 0.0;
    bool dropout_train = false;
    std::uint64_t dropout_seed = 0;
};

namespace detail {

inline Tensor message_from_parts(const Tensor& h_src, const Tensor& u,
                                 const Tensor& tau,
                                 const SpatialLayerParams& p) {
    auto pre = add(matmul(p.msg_w, concat({h_src, u, tau}, 0)), p.msg_b);
    return relu(pre);
}

}  // namespace detail

// Message sent to a trustee from in-neighbor evidence (Eq. 7/8 role).
inline Tensor trustee_message(const Tensor& h_src, const TrustCode& code,
                              const Tensor& tau,
                              const SpatialLayerParams& p) {
    Tensor bits(Shape{code.bits.size()}, code.bits);
    return detail::message_from_parts(h_src, matmul(p.p_tr, bits), tau, p);
}

// Message gathered by a trustor from one of its out-neighbors.
inline Tensor trustor_message(const Tensor& h_dst, const TrustCode& code,
                              const Tensor& tau,
                              const SpatialLayerParams& p) {
    Tensor bits(Shape{code.bits.size()}, code.bits);
    return detail::message_from_parts(h_dst, matmul(p.p_to, bits), tau, p);
}

// Elementwise mean; the declared empty-neighborhood value is the zero vector.
inline Tensor aggregate(const std::vector<Tensor>& messages,
                        std::size_t width) {
    if (messages.empty()) return Tensor(Shape{width}, 0.0);
    if (messages.size() == 1) return messages[0];
    return mean_over_axis(stack_rows(messages), 0);
}

inline Tensor role_fuse(const Tensor& h_tr, const Tensor& h_to,
                        const SpatialLayerParams& p,
                        Activation act = Activation::relu) {
    if (h_tr.size() != p.width() || h_to.size() != p.width())
        throw std::invalid_argument(
            "role_fuse: inputs " + gm::detail::shape_str(h_tr.shape()) + "/" +
            gm::detail::shape_str(h_to.shape()) + " vs layer width " +
            std::to_string(p.width()));
    return apply_activation(
        add(matmul(p.w_fuse, concat({h_tr, h_to}, 0)), p.b_fuse), act);
}

struct TrustTrajectory {
    Tensor matrix;  // (S x d_out); zero rows where the device is absent
};

// Per-slot fused states for the devices present in each snapshot.
struct SlotStates {
    std::vector<std::map<int, std::size_t>> index;  // device id -> row
    std::vector<Tensor> states;                     // (N_s x d_out)
    std::size_t out_width = 0;
};

// Batched forward pass over all slots. Equivalent to evaluating the
// per-message ops edge by edge, but runs on matrices: messages for all edges
// of a slot are computed with two gemms and reduced with a segment mean.
inline SlotStates spatial_forward_states(
    const std::vector<snap::TrustSnapshot>& snaps, const Tensor& node_emb,
    const embed::TemporalEmbeddingTable& temporal,
    const std::vector<SpatialLayerParams>& layers, const SpatialConfig& cfg) {
    SlotStates out;
    out.index.resize(snaps.size());
    out.states.resize(snaps.size());
    out.out_width = layers.empty() ? node_emb.dim(1) : layers.back().width();
    for (std::size_t s = 0; s < snaps.size(); ++s) {
        const auto& snap = snaps[s];
        if (snap.edges.empty()) continue;
        auto& local = out.index[s];
        std::vector<std::size_t> node_rows;
        node_rows.reserve(snap.nodes.size());
        for (int id : snap.nodes) {
            local[id] = local.size();
            node_rows.push_back(static_cast<std::size_t>(id));
        }
        const std::size_t n_local = local.size();
        const std::size_t n_edges = snap.edges.size();

        // Edge codes and endpoint indexes, shared by both role branches.
        std::vector<double> codes;
        codes.reserve(n_edges * static_cast<std::size_t>(cfg.d_t));
        std::vector<std::size_t> src_rows, dst_rows;
        src_rows.reserve(n_edges);
        dst_rows.reserve(n_edges);
        for (const auto& e : snap.edges) {
            const TrustCode c = encode_trust(e.weight, cfg.d_t);
            codes.insert(codes.end(), c.bits.begin(), c.bits.end());
            src_rows.push_back(local.at(e.trustor_id));
            dst_rows.push_back(local.at(e.trustee_id));
        }
        Tensor psi(Shape{n_edges, static_cast<std::size_t>(cfg.d_t)}, codes);
        Tensor tau = row(temporal.matrix,
                         static_cast<std::size_t>(snap.slot_index));

        Tensor h = gather_rows(node_emb, node_rows);  // layer-0 node states
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& p = layers[l];
            const std::size_t d_l = p.width();
            const std::size_t d_in = p.in_width();
            if (h.dim(1) != d_in)
                throw std::invalid_argument(
                    "spatial_forward: layer " + std::to_string(l) +
                    " expects input width " + std::to_string(d_in) +
                    ", got " + gm::detail::shape_str(h.shape()));
            // Split msg_W into its h / u / tau column blocks.
            Tensor w_h = slice_cols(p.msg_w, 0, d_in);
            Tensor w_u = slice_cols(p.msg_w, d_in, d_l);
            Tensor w_tau = slice_cols(p.msg_w, d_in + d_l, cfg.d_a);
            Tensor tau_part = add(matmul(w_tau, tau), p.msg_b);  // (d_l)

            const auto branch = [&](const Tensor& proj,
                                    const std::vector<std::size_t>& h_rows,
                                    const std::vector<std::size_t>& seg) {
                Tensor u = matmul(psi, transpose(proj));        // (E x d_l)
                Tensor hs = gather_rows(h, h_rows);             // (E x d_in)
                Tensor pre = add(add(matmul(hs, transpose(w_h)),
                                     matmul(u, transpose(w_u))),
                                 tau_part);
                return segment_mean(relu(pre), seg, n_local);
            };
            // Trustee role reads in-neighbor states; trustor role reads
            // out-neighbor states.
            Tensor h_tr = branch(p.p_tr, src_rows, dst_rows);
            Tensor h_to = branch(p.p_to, dst_rows, src_rows);
            Tensor fused = apply_activation(
                add(matmul(concat({h_tr, h_to}, 1), transpose(p.w_fuse)),
                    p.b_fuse),
                cfg.fuse_act);
            if (cfg.dropout_rate > 0.0)
                fused = dropout(fused, cfg.dropout_rate, cfg.dropout_train,
                                cfg.dropout_seed + 31 * s + l + 1);
            h = fused;
        }
        out.states[s] = h;
    }
    return out;
}

// Trajectory of one device across the processed slots.
inline TrustTrajectory trajectory_for(const SlotStates& st, int device_id) {
    std::vector<Tensor> rows;
    rows.reserve(st.index.size());
    Tensor zero(Shape{st.out_width}, 0.0);
    for (std::size_t s = 0; s < st.index.size(); ++s) {
        const auto it = st.index[s].find(device_id);
        if (it == st.index[s].end())
            rows.push_back(zero);
        else
            rows.push_back(row(st.states[s], it->second));
    }
    return TrustTrajectory{stack_rows(rows)};
}

// Full-map variant of the forward pass.
inline std::map<int, TrustTrajectory> spatial_forward(
    const std::vector<snap::TrustSnapshot>& snaps, const Tensor& node_emb,
    const embed::TemporalEmbeddingTable& temporal,
    const std::vector<SpatialLayerParams>& layers, const SpatialConfig& cfg) {
    const SlotStates st =
        spatial_forward_states(snaps, node_emb, temporal, layers, cfg);
    std::map<int, TrustTrajectory> out;
    for (std::size_t id = 0; id < node_emb.dim(0); ++id)
        out[static_cast<int>(id)] = trajectory_for(st, static_cast<int>(id));
    return out;
}

}  // namespace gm::spatial
