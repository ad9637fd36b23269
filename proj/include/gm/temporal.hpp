#pragma once

// Stacked Mamba blocks fusing a device's per-slot trust states into one
// fixed-size embedding. Each block: linear lift, causal depthwise conv +
// SiLU, input-dependent (C, D, delta) with zero-order-hold discretization,
// a sequential scalar-channel scan, and a SiLU-gated output projection.
// Max-pooling over time collapses the final block's sequence.
//
// The state matrix is diagonal with negative entries; it is stored as b_log
// with B_diag = -exp(b_log), so stability (|exp(delta*b)| < 1) survives any
// gradient step. d_state entries are folded cyclically onto the d_m channels.

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gm/tensor.hpp"

namespace gm::temporal {

struct MambaBlockParams {
    Tensor in_proj;     // (d_m x d_in)
    Tensor gate_proj;   // (d_m x d_in)
    Tensor conv_w;      // (k x d_m), per-channel causal kernel
    Tensor b_log;       // (d_state); B_diag = -exp(b_log)
    Tensor c_proj;      // (d_state x d_m)
    Tensor d_proj;      // (d_m x d_m)
    Tensor delta_proj;  // (d_m x d_m)
    Tensor out_proj;    // (d_out x d_m)

    std::size_t d_in() const { return in_proj.dim(1); }
    std::size_t d_m() const { return in_proj.dim(0); }
    std::size_t d_state() const { return b_log.dim(0); }
    std::size_t d_out() const { return out_proj.dim(0); }
};

struct MambaConfig {
    std::size_t d_m = 128;
    std::size_t d_state = 16;
    std::size_t conv_k = 4;
    int n_blocks = 4;
    std::size_t d_out = 128;
    bool residual = true;  // added between blocks when widths match
    double dropout_rate = 0.0;
    bool dropout_train = false;
    std::uint64_t dropout_seed = 0;
};

struct FusedEmbedding {
    Tensor vector;  // (d_out)
};

// Zero-order-hold discretization of one scalar channel:
//   b_bar = exp(delta*b),  c_bar = (delta*b)^-1 (exp(delta*b) - 1) (delta*c).
inline std::pair<double, double> discretize(double b, double c,
                                            double delta) {
    if (!(delta > 0.0))
        throw std::invalid_argument("discretize: delta " +
                                    std::to_string(delta) + " must be > 0");
    if (!(b < 0.0))
        throw std::invalid_argument("discretize: b " + std::to_string(b) +
                                    " must be < 0");
    const double db = delta * b;
    const double b_bar = std::exp(db);
    const double c_bar = (1.0 / db) * (b_bar - 1.0) * (delta * c);
    return {b_bar, c_bar};
}

namespace detail {

// (exp(x) - 1) / x with the x -> 0 limit handled; series kicks in where the
// direct quotient loses precision.
inline double expm1_over_x(double x) {
    if (std::abs(x) < 1e-8) return 1.0 + x / 2.0 + x * x / 6.0;
    return std::expm1(x) / x;
}

inline double expm1_over_x_deriv(double x) {
    if (std::abs(x) < 1e-5) return 0.5 + x / 3.0 + x * x / 8.0;
    return (std::exp(x) * (x - 1.0) + 1.0) / (x * x);
}

}  // namespace detail

// Elementwise (exp(x)-1)/x as a differentiable op (the ZOH c_bar factor).
inline Tensor zoh_factor(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = detail::expm1_over_x(x.values()[i]);
    return make_op(x.shape(), std::move(out), {x}, "zoh_factor",
                   [](gm::detail::Node& self) {
                       auto& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = p.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                           g[i] += self.grad[i] *
                                   detail::expm1_over_x_deriv(p.value[i]);
                   });
}

// Sequential per-channel recurrence over (S x C) tensors:
//   z[s] = b_bar[s] * z[s-1] + c_bar[s] * u[s],   y[s] = d[s] * z[s]
// with z[0-] = 0. Differentiable in all four inputs.
inline Tensor ssm_scan(const Tensor& u, const Tensor& b_bar,
                       const Tensor& c_bar, const Tensor& d) {
    if (u.rank() != 2 || b_bar.shape() != u.shape() ||
        c_bar.shape() != u.shape() || d.shape() != u.shape())
        throw std::invalid_argument(
            "ssm_scan: inputs " + gm::detail::shape_str(u.shape()) + "/" +
            gm::detail::shape_str(b_bar.shape()) + "/" +
            gm::detail::shape_str(c_bar.shape()) + "/" +
            gm::detail::shape_str(d.shape()) + " must share one (S,C) shape");
    const std::size_t s_len = u.dim(0), ch = u.dim(1);
    auto states = std::make_shared<std::vector<double>>(s_len * ch);
    std::vector<double> out(s_len * ch);
    {
        std::vector<double> z(ch, 0.0);
        const auto& uv = u.values();
        const auto& bv = b_bar.values();
        const auto& cv = c_bar.values();
        const auto& dv = d.values();
        for (std::size_t s = 0; s < s_len; ++s)
            for (std::size_t c = 0; c < ch; ++c) {
                const std::size_t i = s * ch + c;
                z[c] = bv[i] * z[c] + cv[i] * uv[i];
                (*states)[i] = z[c];
                out[i] = dv[i] * z[c];
            }
    }
    return make_op(
        u.shape(), std::move(out), {u, b_bar, c_bar, d}, "ssm_scan",
        [states, s_len, ch](gm::detail::Node& self) {
            auto& pu = *self.parents[0];
            auto& pb = *self.parents[1];
            auto& pc = *self.parents[2];
            auto& pd = *self.parents[3];
            std::vector<double> a(ch, 0.0);  // dL/dz at the current step
            for (std::size_t s = s_len; s-- > 0;) {
                for (std::size_t c = 0; c < ch; ++c) {
                    const std::size_t i = s * ch + c;
                    a[c] += pd.value[i] * self.grad[i];
                    const double z_prev = s > 0 ? (*states)[i - ch] : 0.0;
                    if (pd.requires_grad)
                        pd.ensure_grad()[i] += (*states)[i] * self.grad[i];
                    if (pb.requires_grad)
                        pb.ensure_grad()[i] += z_prev * a[c];
                    if (pc.requires_grad)
                        pc.ensure_grad()[i] += pu.value[i] * a[c];
                    if (pu.requires_grad)
                        pu.ensure_grad()[i] += pc.value[i] * a[c];
                    a[c] *= pb.value[i];  // flows into z[s-1]
                }
            }
        });
}

// Row-wise RMS normalization, no learnable scale: y[s,:] = x[s,:] / rms.
// Applied to each block's input inside temporal_forward. The block branch is
// multiplicative in its input scale, so stacking M blocks unnormalized makes
// the output a ~3^M-th power of the trajectory scale; training then explodes
// or starves on any scale drift. Zero rows stay zero.
inline Tensor rms_norm(const Tensor& x, double eps = 1e-8) {
    if (x.rank() != 2)
        throw std::invalid_argument("rms_norm: need (S x C), got " +
                                    gm::detail::shape_str(x.shape()));
    const std::size_t s_len = x.dim(0), ch = x.dim(1);
    auto inv_rms = std::make_shared<std::vector<double>>(s_len);
    std::vector<double> out(s_len * ch);
    for (std::size_t s = 0; s < s_len; ++s) {
        double msq = 0.0;
        for (std::size_t c = 0; c < ch; ++c) {
            const double v = x.values()[s * ch + c];
            msq += v * v;
        }
        msq /= static_cast<double>(ch);
        (*inv_rms)[s] = 1.0 / std::sqrt(msq + eps);
        for (std::size_t c = 0; c < ch; ++c)
            out[s * ch + c] = x.values()[s * ch + c] * (*inv_rms)[s];
    }
    return make_op(
        x.shape(), std::move(out), {x}, "rms_norm",
        [inv_rms, s_len, ch](gm::detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (std::size_t s = 0; s < s_len; ++s) {
                const double r = (*inv_rms)[s];
                double dot = 0.0;  // sum_j grad_j * x_j
                for (std::size_t c = 0; c < ch; ++c)
                    dot += self.grad[s * ch + c] * p.value[s * ch + c];
                const double k =
                    dot * r * r * r / static_cast<double>(ch);
                for (std::size_t c = 0; c < ch; ++c)
                    g[s * ch + c] += self.grad[s * ch + c] * r -
                                     p.value[s * ch + c] * k;
            }
        });
}

// Constant fold matrix: column c of the (d_state x d_m) output picks state
// entry c % d_state.
inline Tensor fold_matrix(std::size_t d_state, std::size_t d_m) {
    std::vector<double> e(d_state * d_m, 0.0);
    for (std::size_t c = 0; c < d_m; ++c) e[(c % d_state) * d_m + c] = 1.0;
    return Tensor(Shape{d_state, d_m}, std::move(e));
}

// One Mamba block over an (S x d_in) sequence.
inline Tensor mamba_block(const Tensor& h, const MambaBlockParams& p,
                          bool residual = true) {
    if (h.rank() != 2 || h.dim(0) == 0)
        throw std::invalid_argument("mamba_block: input " +
                                    gm::detail::shape_str(h.shape()) +
                                    " needs at least one time step");
    if (h.dim(1) != p.d_in())
        throw std::invalid_argument(
            "mamba_block: input " + gm::detail::shape_str(h.shape()) +
            " vs in_proj " + gm::detail::shape_str(p.in_proj.shape()));
    const Tensor fold = fold_matrix(p.d_state(), p.d_m());

    Tensor lifted = matmul(h, transpose(p.in_proj));
    Tensor conv = silu(causal_conv1d(lifted, p.conv_w));  // H-tilde

    Tensor c_full = matmul(matmul(conv, transpose(p.c_proj)), fold);
    Tensor d_full = matmul(conv, transpose(p.d_proj));
    Tensor delta = softplus(matmul(conv, transpose(p.delta_proj)));
    Tensor b_diag = scalar_mul(exp(p.b_log), -1.0);
    Tensor b_full = matmul(b_diag, fold);  // (d_m), negative entries

    Tensor db = mul(delta, b_full);
    Tensor b_bar = exp(db);
    Tensor c_bar = mul(zoh_factor(db), mul(delta, c_full));

    Tensor o_ssm = ssm_scan(conv, b_bar, c_bar, d_full);
    Tensor gate = silu(matmul(h, transpose(p.gate_proj)));
    Tensor out = matmul(mul(o_ssm, gate), transpose(p.out_proj));
    if (residual && p.d_in() == p.d_out()) out = add(out, h);
    return out;
}

// Runs the block stack (pre-norm residual form) and max-pools the final
// sequence over time.
inline FusedEmbedding temporal_forward(const Tensor& trajectory,
                                       const std::vector<MambaBlockParams>& blocks,
                                       const MambaConfig& cfg = {}) {
    Tensor h = trajectory;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        Tensor branch = mamba_block(rms_norm(h), blocks[i], false);
        h = (cfg.residual && blocks[i].d_in() == blocks[i].d_out())
                ? add(branch, h)
                : branch;
        if (cfg.dropout_rate > 0.0)
            h = dropout(h, cfg.dropout_rate, cfg.dropout_train,
                        cfg.dropout_seed + 977 * i + 13);
    }
    return FusedEmbedding{maxpool_over_axis(h, 0)};
}

}  // namespace gm::temporal
