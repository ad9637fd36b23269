#pragma once

// GmModel bundles every learnable piece of the trust evaluator: the frozen
// node2vec table, the trainable temporal embedding table, the role-aware GNN
// layers, the Mamba stack, and the pairwise scoring head. Two ablation
// variants share the plumbing: `spatial_only` replaces the Mamba stack with
// a time mean, `temporal_only` feeds raw node2vec rows into the Mamba stack.

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "gm/embed.hpp"
#include "gm/spatial.hpp"
#include "gm/temporal.hpp"

namespace gm::model {

enum class Variant { full, spatial_only, temporal_only };

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::spatial_only: return "spatial_only";
        case Variant::temporal_only: return "temporal_only";
    }
    return "full";
}

inline Variant variant_from(const std::string& s) {
    if (s == "full") return Variant::full;
    if (s == "spatial_only") return Variant::spatial_only;
    if (s == "temporal_only") return Variant::temporal_only;
    throw std::invalid_argument("unknown model variant '" + s + "'");
}

struct GmDims {
    std::size_t d_a = 128;
    std::vector<std::size_t> gnn_widths = {32, 64, 32};
    int d_t = 8;
    int n_mamba = 4;
    std::size_t d_m = 64;
    std::size_t d_state = 16;
    std::size_t conv_k = 4;
    std::size_t head_hidden = 128;
    std::size_t k_bins = 256;
    bool residual = true;
    spatial::Activation fuse_act = spatial::Activation::relu;
    double dropout = 0.0;
    Variant variant = Variant::full;
    int n_slots = 10;  // temporal table rows
    std::size_t n_devices = 0;

    bool has_spatial() const { return variant != Variant::temporal_only; }
    bool has_mamba() const { return variant != Variant::spatial_only; }
    // Width of trajectory rows entering temporal fusion.
    std::size_t traj_width() const {
        return has_spatial() ? gnn_widths.back() : d_a;
    }
    // Width of the per-device fused embedding.
    std::size_t fused_width() const {
        return has_mamba() ? d_a : gnn_widths.back();
    }
};

struct GmModel {
    GmDims dims;
    Tensor node_emb;  // (n_devices x d_a), frozen
    embed::TemporalEmbeddingTable temporal_table;
    std::vector<spatial::SpatialLayerParams> spatial_layers;
    std::vector<temporal::MambaBlockParams> mamba_blocks;
    Tensor head_w0, head_b0;  // (hidden x 2*fused), (hidden)
    Tensor head_w1, head_b1;  // (K x hidden), (K)

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        fn("embed.node2vec", node_emb);
        fn("embed.temporal", temporal_table.matrix);
        for (std::size_t l = 0; l < spatial_layers.size(); ++l) {
            const std::string base = "spatial.layer" + std::to_string(l) + ".";
            auto& p = spatial_layers[l];
            fn(base + "p_tr", p.p_tr);
            fn(base + "p_to", p.p_to);
            fn(base + "msg_w", p.msg_w);
            fn(base + "msg_b", p.msg_b);
            fn(base + "w_fuse", p.w_fuse);
            fn(base + "b_fuse", p.b_fuse);
        }
        for (std::size_t b = 0; b < mamba_blocks.size(); ++b) {
            const std::string base = "temporal.block" + std::to_string(b) + ".";
            auto& p = mamba_blocks[b];
            fn(base + "in_proj", p.in_proj);
            fn(base + "gate_proj", p.gate_proj);
            fn(base + "conv_w", p.conv_w);
            fn(base + "b_log", p.b_log);
            fn(base + "c_proj", p.c_proj);
            fn(base + "d_proj", p.d_proj);
            fn(base + "delta_proj", p.delta_proj);
            fn(base + "out_proj", p.out_proj);
        }
        fn("head.w0", head_w0);
        fn("head.b0", head_b0);
        fn("head.w1", head_w1);
        fn("head.b1", head_b1);
    }

    std::vector<Parameter> parameters() {
        std::vector<Parameter> out;
        for_each_param(
            [&](const std::string& name, Tensor& t) { out.push_back({name, t}); });
        return out;
    }

    // Deep copy: fresh tensors, same values and trainability.
    GmModel clone() {
        GmModel c = *this;
        c.for_each_param([](const std::string&, Tensor& t) {
            t = Tensor(t.shape(), t.values(), t.requires_grad());
        });
        return c;
    }

    std::vector<Parameter> trainable_parameters() {
        std::vector<Parameter> out;
        for (auto& p : parameters())
            if (p.tensor.requires_grad()) out.push_back(p);
        return out;
    }

    void save(std::ostream& os) { write_checkpoint(os, parameters()); }

    void load(std::istream& is) {
        const auto loaded = read_checkpoint(is);
        std::set<std::string> used;
        for (auto& p : parameters()) {
            const auto it = loaded.find(p.name);
            if (it == loaded.end())
                throw std::runtime_error(
                    "checkpoint missing parameter '" + p.name + "'");
            if (it->second.shape() != p.tensor.shape())
                throw std::runtime_error(
                    "checkpoint shape mismatch for '" + p.name + "': file " +
                    gm::detail::shape_str(it->second.shape()) + " vs model " +
                    gm::detail::shape_str(p.tensor.shape()));
            p.tensor.values() = it->second.values();
            used.insert(p.name);
        }
        for (const auto& [name, t] : loaded)
            if (!used.count(name))
                throw std::runtime_error(
                    "checkpoint has unexpected parameter '" + name + "'");
    }

    spatial::SpatialConfig spatial_config(bool train_mode,
                                          std::uint64_t seed) const {
        spatial::SpatialConfig cfg;
        cfg.d_t = dims.d_t;
        cfg.layer_widths = dims.gnn_widths;
        cfg.d_a = dims.d_a;
        cfg.fuse_act = dims.fuse_act;
        cfg.dropout_rate = dims.dropout;
        cfg.dropout_train = train_mode;
        cfg.dropout_seed = seed;
        return cfg;
    }

    temporal::MambaConfig mamba_config(bool train_mode,
                                       std::uint64_t seed) const {
        temporal::MambaConfig cfg;
        cfg.d_m = dims.d_m;
        cfg.d_state = dims.d_state;
        cfg.conv_k = dims.conv_k;
        cfg.n_blocks = dims.n_mamba;
        cfg.d_out = dims.d_a;
        cfg.residual = dims.residual;
        cfg.dropout_rate = dims.dropout;
        cfg.dropout_train = train_mode;
        cfg.dropout_seed = seed ^ 0x4D414Dull;
        return cfg;
    }

    // Per-slot GNN states over the given snapshots (identity states for the
    // temporal_only variant, which has no spatial stage).
    spatial::SlotStates slot_states(
        const std::vector<snap::TrustSnapshot>& snaps, bool train_mode = false,
        std::uint64_t dropout_seed = 0) const {
        if (dims.has_spatial())
            return spatial::spatial_forward_states(
                snaps, node_emb, temporal_table, spatial_layers,
                spatial_config(train_mode, dropout_seed));
        spatial::SlotStates st;
        st.index.resize(snaps.size());
        st.states.resize(snaps.size());
        st.out_width = dims.d_a;
        return st;
    }

    // Device trajectory over the first n_slots entries of the slot states.
    Tensor trajectory(const spatial::SlotStates& st, int device,
                      std::size_t n_slots) const {
        if (!dims.has_spatial())  // raw node2vec rows, constant over time
            return tile_rows(row(node_emb, static_cast<std::size_t>(device)),
                             n_slots);
        spatial::SlotStates prefix;
        prefix.index.assign(st.index.begin(),
                            st.index.begin() + static_cast<long>(n_slots));
        prefix.states.assign(st.states.begin(),
                             st.states.begin() + static_cast<long>(n_slots));
        prefix.out_width = st.out_width;
        return spatial::trajectory_for(prefix, device).matrix;
    }

    // Fused per-device embedding: Mamba stack + max-pool, or the time mean
    // for the spatial_only variant.
    Tensor fused_embedding(const spatial::SlotStates& st, int device,
                           std::size_t n_slots, bool train_mode = false,
                           std::uint64_t dropout_seed = 0) const {
        const Tensor traj = trajectory(st, device, n_slots);
        if (!dims.has_mamba()) return mean_over_axis(traj, 0);
        return temporal::temporal_forward(
                   traj, mamba_blocks,
                   mamba_config(train_mode,
                                dropout_seed + 131 *
                                    static_cast<std::uint64_t>(device)))
            .vector;
    }

    // Head logits for a batch of concatenated pair embeddings (N x 2*fused).
    Tensor head_logits(const Tensor& pair_rows) const {
        Tensor hidden = relu(add(matmul(pair_rows, transpose(head_w0)),
                                 head_b0));
        return add(matmul(hidden, transpose(head_w1)), head_b1);
    }

    Tensor head_logits_single(const Tensor& emb_i, const Tensor& emb_j) const {
        Tensor hidden = relu(
            add(matmul(head_w0, concat({emb_i, emb_j}, 0)), head_b0));
        return add(matmul(head_w1, hidden), head_b1);
    }
};

// Bin index of the largest logit, first index winning ties.
inline std::size_t argmax_bin(const std::vector<double>& logits) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = i;
    return best;
}

inline double value_from_logits(const std::vector<double>& logits) {
    return static_cast<double>(argmax_bin(logits)) /
           static_cast<double>(logits.size() - 1);
}

inline GmModel init_model(const GmDims& dims, std::uint64_t seed,
                          Tensor node_emb) {
    if (node_emb.rank() != 2 || node_emb.dim(0) != dims.n_devices ||
        node_emb.dim(1) != dims.d_a)
        throw std::invalid_argument(
            "init_model: node table " +
            gm::detail::shape_str(node_emb.shape()) + " vs dims (" +
            std::to_string(dims.n_devices) + "," + std::to_string(dims.d_a) +
            ")");
    SplitRng rng(seed ^ 0x474Dull);
    const auto he = [&](Shape s, std::size_t fan_in) {
        std::vector<double> v(gm::detail::shape_size(s));
        const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (double& x : v) x = rng.normal(0.0, scale);
        return Tensor(std::move(s), std::move(v), true);
    };
    const auto xavier = [&](Shape s, std::size_t fan_in) {
        std::vector<double> v(gm::detail::shape_size(s));
        const double scale = std::sqrt(1.0 / static_cast<double>(fan_in));
        for (double& x : v) x = rng.normal(0.0, scale);
        return Tensor(std::move(s), std::move(v), true);
    };
    const auto zeros = [&](Shape s) { return Tensor(std::move(s), 0.0, true); };

    GmModel m;
    m.dims = dims;
    m.node_emb = std::move(node_emb);
    m.node_emb.set_requires_grad(false);

    {
        SplitRng trng(seed ^ 0x7441ull);
        std::vector<double> data(static_cast<std::size_t>(dims.n_slots) *
                                 dims.d_a);
        for (double& v : data) v = trng.normal(0.0, 0.02);
        m.temporal_table.matrix =
            Tensor(Shape{static_cast<std::size_t>(dims.n_slots), dims.d_a},
                   std::move(data), true);
    }

    if (dims.has_spatial()) {
        // The trust code is a fixed-point representation, so one projection
        // row can recover the scalar value exactly. Seed the first row of
        // each P with that decode so messages carry the edge trust value
        // from the start; everything stays trainable.
        const auto code_projection = [&](std::size_t w) {
            Tensor p = he({w, static_cast<std::size_t>(dims.d_t)},
                          static_cast<std::size_t>(dims.d_t));
            const double denom =
                static_cast<double>((1L << dims.d_t) - 1);
            for (int b = 0; b < dims.d_t; ++b)
                p.values()[static_cast<std::size_t>(b)] =
                    static_cast<double>(1L << (dims.d_t - 1 - b)) / denom;
            return p;
        };
        // Balanced per-block message init: the h / u / tau column blocks each
        // contribute equal output variance regardless of their widths.
        const auto message_weights = [&](std::size_t w, std::size_t d_in) {
            Tensor t({w, d_in + w + dims.d_a}, 0.0, true);
            const std::size_t cols = d_in + w + dims.d_a;
            const double s_h = std::sqrt(2.0 / (3.0 * double(d_in)));
            const double s_u = std::sqrt(2.0 / (3.0 * double(w)));
            const double s_tau = std::sqrt(2.0 / (3.0 * double(dims.d_a)));
            for (std::size_t r = 0; r < w; ++r)
                for (std::size_t c = 0; c < cols; ++c) {
                    const double s =
                        c < d_in ? s_h : (c < d_in + w ? s_u : s_tau);
                    t.values()[r * cols + c] = rng.normal(0.0, s);
                }
            return t;
        };
        std::size_t d_in = dims.d_a;
        for (std::size_t w : dims.gnn_widths) {
            spatial::SpatialLayerParams p;
            p.p_tr = code_projection(w);
            p.p_to = code_projection(w);
            p.msg_w = message_weights(w, d_in);
            p.msg_b = zeros({w});
            p.w_fuse = he({w, 2 * w}, 2 * w);
            p.b_fuse = zeros({w});
            p.tau_width_ = dims.d_a;
            m.spatial_layers.push_back(std::move(p));
            d_in = w;
        }
    }

    if (dims.has_mamba()) {
        std::size_t d_in = dims.traj_width();
        for (int b = 0; b < dims.n_mamba; ++b) {
            temporal::MambaBlockParams p;
            p.in_proj = xavier({dims.d_m, d_in}, d_in);
            p.gate_proj = xavier({dims.d_m, d_in}, d_in);
            p.conv_w = xavier({dims.conv_k, dims.d_m}, dims.conv_k);
            std::vector<double> bl(dims.d_state);
            for (std::size_t i = 0; i < dims.d_state; ++i)
                bl[i] = std::log(static_cast<double>(i + 1));
            p.b_log = Tensor(Shape{dims.d_state}, std::move(bl), true);
            p.c_proj = xavier({dims.d_state, dims.d_m}, dims.d_m);
            p.d_proj = xavier({dims.d_m, dims.d_m}, dims.d_m);
            p.delta_proj = xavier({dims.d_m, dims.d_m}, dims.d_m);
            p.out_proj = xavier({dims.d_a, dims.d_m}, dims.d_m);
            m.mamba_blocks.push_back(std::move(p));
            d_in = dims.d_a;
        }
    }

    const std::size_t head_in = 2 * dims.fused_width();
    m.head_w0 = he({dims.head_hidden, head_in}, head_in);
    m.head_b0 = zeros({dims.head_hidden});
    m.head_w1 = xavier({dims.k_bins, dims.head_hidden}, dims.head_hidden);
    m.head_b1 = zeros({dims.k_bins});
    return m;
}

namespace detail {

inline double std_of(const std::vector<const Tensor*>& ts) {
    double mean = 0.0;
    std::size_t n = 0;
    for (const Tensor* t : ts) {
        for (double v : t->values()) mean += v;
        n += t->size();
    }
    if (n == 0) return 0.0;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const Tensor* t : ts)
        for (double v : t->values()) var += (v - mean) * (v - mean);
    return std::sqrt(var / static_cast<double>(n));
}

inline void rescale(Tensor& t, double factor) {
    factor = std::clamp(factor, 1e-4, 1e4);
    for (double& v : t.values()) v *= factor;
}

}  // namespace detail

// Data-dependent init calibration. Without normalization layers the Mamba
// branch contracts its input scale sharply at init (the SSM output is a
// product of input-dependent factors), which starves the head of signal.
// One deterministic pass over sample trajectories rescales each block so the
// branch matches its input scale, then rescales head.w0 to unit
// pre-activation variance. The branch is exactly linear in each of c_proj,
// d_proj and out_proj, so the correction splits as a cube root across the
// three, keeping every tensor near its init magnitude. Runs once before
// training.
inline void calibrate_scales(GmModel& m,
                             const std::vector<snap::TrustSnapshot>& feature,
                             std::size_t max_devices = 32) {
    NoGrad ng;
    std::set<int> present;
    for (const auto& s : feature)
        for (int id : s.nodes) present.insert(id);
    std::vector<int> devs(present.begin(), present.end());
    if (devs.empty())
        for (std::size_t i = 0; i < m.dims.n_devices; ++i)
            devs.push_back(static_cast<int>(i));
    if (devs.size() > max_devices) devs.resize(max_devices);

    const spatial::SlotStates states = m.slot_states(feature);
    std::vector<Tensor> hs;
    hs.reserve(devs.size());
    for (int id : devs)
        hs.push_back(m.trajectory(states, id, feature.size()));

    if (m.dims.has_mamba()) {
        for (auto& block : m.mamba_blocks) {
            std::vector<const Tensor*> in_ptrs;
            for (const auto& h : hs) in_ptrs.push_back(&h);
            const double in_std = detail::std_of(in_ptrs);
            std::vector<Tensor> branches;
            branches.reserve(hs.size());
            for (const auto& h : hs)
                branches.push_back(
                    temporal::mamba_block(temporal::rms_norm(h), block,
                                          false));
            std::vector<const Tensor*> br_ptrs;
            for (const auto& b : branches) br_ptrs.push_back(&b);
            const double br_std = detail::std_of(br_ptrs);
            const bool residual =
                m.dims.residual && block.d_in() == block.d_out();
            const double target = (residual ? 0.5 : 1.0) * in_std;
            double factor = 1.0;
            if (br_std > 1e-12 && target > 1e-12) {
                factor = std::clamp(target / br_std, 1e-4, 1e4);
                const double k = std::cbrt(factor);
                detail::rescale(block.c_proj, k);
                detail::rescale(block.d_proj, k);
                detail::rescale(block.out_proj, k);
            }
            for (std::size_t i = 0; i < hs.size(); ++i) {
                Tensor out = scalar_mul(branches[i], factor);
                hs[i] = residual ? add(out, hs[i]) : out;
            }
        }
    }

    std::vector<Tensor> fused;
    fused.reserve(hs.size());
    for (auto& h : hs)
        fused.push_back(m.dims.has_mamba() ? maxpool_over_axis(h, 0)
                                           : mean_over_axis(h, 0));
    if (fused.size() >= 2) {
        std::vector<Tensor> rows;
        for (std::size_t i = 0; i < fused.size(); ++i)
            rows.push_back(
                concat({fused[i], fused[(i + 1) % fused.size()]}, 0));
        Tensor pre = matmul(stack_rows(rows), transpose(m.head_w0));
        const double pre_std = detail::std_of({&pre});
        if (pre_std > 1e-12) detail::rescale(m.head_w0, 1.0 / pre_std);
    }
}

}  // namespace gm::model
