#pragma once

// Dense n-dimensional double tensors with reverse-mode automatic
// differentiation. Every operation the trust model needs is a node type here;
// forward evaluation records a backward rule, and backward() runs one reverse
// topological sweep accumulating gradients (+=) across fan-out.
//
// Matrix products go through CBLAS (OpenBLAS, pinned to one thread) when
// GM_USE_CBLAS is defined; everything else is plain loops.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <charconv>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#ifdef GM_USE_CBLAS
#include <cblas.h>
#endif

#include "gm/rng.hpp"

namespace gm {

using Shape = std::vector<std::size_t>;

namespace detail {

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

inline std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

struct Node {
    Shape shape;
    std::vector<double> value;
    bool requires_grad = false;
    std::vector<double> grad;  // sized lazily, value.size() once touched
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, adds to parents
    const char* op = "leaf";

    std::vector<double>& ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

// When set, ops do not record the backward graph (inference mode).
inline bool& no_grad_flag() {
    thread_local bool flag = false;
    return flag;
}

inline void set_single_threaded_blas();

// y[m] += or = A(m x k) * x(k)  (row-major)
inline void gemv(const double* a, const double* x, double* y, std::size_t m,
                 std::size_t k, bool accumulate) {
#ifdef GM_USE_CBLAS
    set_single_threaded_blas();
    cblas_dgemv(CblasRowMajor, CblasNoTrans, static_cast<int>(m),
                static_cast<int>(k), 1.0, a, static_cast<int>(k), x, 1,
                accumulate ? 1.0 : 0.0, y, 1);
#else
    for (std::size_t i = 0; i < m; ++i) {
        double acc = accumulate ? y[i] : 0.0;
        const double* row = a + i * k;
        for (std::size_t j = 0; j < k; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
#endif
}

// C(m x n) += or = op(A) * op(B), row-major, op = optional transpose.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                 std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc,
                 bool accumulate) {
#ifdef GM_USE_CBLAS
    set_single_threaded_blas();
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), 1.0, a,
                static_cast<int>(lda), b, static_cast<int>(ldb),
                accumulate ? 1.0 : 0.0, c, static_cast<int>(ldc));
#else
    if (!accumulate)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = trans_a ? a[p * lda + i] : a[i * lda + p];
            if (av == 0.0) continue;
            const double* brow = trans_b ? nullptr : b + p * ldb;
            double* crow = c + i * ldc;
            if (trans_b) {
                for (std::size_t j = 0; j < n; ++j)
                    crow[j] += av * b[j * ldb + p];
            } else {
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
#endif
}

#ifdef GM_USE_CBLAS
extern "C" void openblas_set_num_threads(int);
inline void set_single_threaded_blas() {
    static const bool done = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)done;
}
#else
inline void set_single_threaded_blas() {}
#endif

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        node_->shape = std::move(shape);
        node_->value.assign(detail::shape_size(node_->shape), fill);
        node_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (detail::shape_size(shape) != data.size())
            throw std::invalid_argument(
                "tensor: shape " + detail::shape_str(shape) + " needs " +
                std::to_string(detail::shape_size(shape)) + " values, got " +
                std::to_string(data.size()));
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor(Shape{}, std::vector<double>{v}, requires_grad);
    }

    static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows[0].size() : 0;
        std::vector<double> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c)
                throw std::invalid_argument("from_rows: ragged rows");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor(Shape{r, c}, std::move(data));
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }

    double item() const {
        if (size() != 1)
            throw std::invalid_argument("item: tensor has " +
                                        std::to_string(size()) + " elements");
        return node_->value[0];
    }

    double at(std::size_t i) const { return node_->value.at(i); }
    double at(std::size_t i, std::size_t j) const {
        return node_->value.at(i * node_->shape.at(1) + j);
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    const std::vector<double>& grad() const { return node_->grad; }
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }
    const char* op_tag() const { return node_->op; }

    std::shared_ptr<detail::Node> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    friend Tensor make_op(Shape, std::vector<double>, std::vector<Tensor>,
                          const char*, std::function<void(detail::Node&)>);

    std::shared_ptr<detail::Node> node_;
};

// RAII guard: forward passes inside the guard record no backward graph.
struct NoGrad {
    NoGrad() : prev_(detail::no_grad_flag()) { detail::no_grad_flag() = true; }
    ~NoGrad() { detail::no_grad_flag() = prev_; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

private:
    bool prev_;
};

// Generic op constructor. Records parents and a backward rule only when some
// parent needs gradients and inference mode is off.
inline Tensor make_op(Shape shape, std::vector<double> value,
                      std::vector<Tensor> parents, const char* tag,
                      std::function<void(detail::Node&)> back) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->op = tag;
    bool need = false;
    if (!detail::no_grad_flag())
        for (const auto& p : parents) need = need || p.requires_grad();
    if (need) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(back);
    }
    return Tensor(std::move(n));
}

namespace detail {

inline void add_scaled(std::vector<double>& dst, const double* src,
                       std::size_t n, std::size_t off = 0) {
    for (std::size_t i = 0; i < n; ++i) dst[off + i] += src[i];
}

// Resolves suffix broadcasting: the smaller operand's shape must equal the
// trailing dimensions of the larger (rank-0 scalars broadcast to anything).
struct Broadcast {
    bool swapped;            // true if b is the larger operand
    std::size_t outer, inner;  // larger = outer x inner, smaller = inner
    Shape out_shape;
};

inline Broadcast resolve_broadcast(const Tensor& a, const Tensor& b,
                                   const char* opname) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const bool b_small = sb.size() <= sa.size();
    const Shape& big = b_small ? sa : sb;
    const Shape& small = b_small ? sb : sa;
    const std::size_t lead = big.size() - small.size();
    for (std::size_t i = 0; i < small.size(); ++i) {
        if (big[lead + i] != small[i])
            throw std::invalid_argument(std::string(opname) +
                                        ": shapes " + shape_str(sa) + " and " +
                                        shape_str(sb) + " not broadcastable");
    }
    Broadcast br;
    br.swapped = !b_small;
    br.inner = shape_size(small);
    br.outer = shape_size(big) / std::max<std::size_t>(br.inner, 1);
    if (br.inner == 0) br.outer = shape_size(big);
    br.out_shape = big;
    return br;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// binary elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    auto br = detail::resolve_broadcast(a, b, "add");
    const Tensor& big = br.swapped ? b : a;
    const Tensor& small = br.swapped ? a : b;
    std::vector<double> out(big.values());
    const auto& sv = small.values();
    if (!sv.empty())
        for (std::size_t o = 0; o < br.outer; ++o)
            for (std::size_t i = 0; i < br.inner; ++i)
                out[o * br.inner + i] += sv[i];
    const std::size_t big_idx = br.swapped ? 1 : 0;
    return make_op(
        br.out_shape, std::move(out), {a, b}, "add",
        [br, big_idx](detail::Node& self) {
            auto& pbig = *self.parents[big_idx];
            auto& psmall = *self.parents[1 - big_idx];
            if (pbig.requires_grad)
                detail::add_scaled(pbig.ensure_grad(), self.grad.data(),
                                   self.grad.size());
            if (psmall.requires_grad) {
                auto& g = psmall.ensure_grad();
                for (std::size_t o = 0; o < br.outer; ++o)
                    for (std::size_t i = 0; i < br.inner; ++i)
                        g[i] += self.grad[o * br.inner + i];
            }
        });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    auto br = detail::resolve_broadcast(a, b, "mul");
    const Tensor& big = br.swapped ? b : a;
    const Tensor& small = br.swapped ? a : b;
    std::vector<double> out(big.values());
    const auto& sv = small.values();
    for (std::size_t o = 0; o < br.outer; ++o)
        for (std::size_t i = 0; i < br.inner; ++i)
            out[o * br.inner + i] *= sv[i];
    const std::size_t big_idx = br.swapped ? 1 : 0;
    return make_op(
        br.out_shape, std::move(out), {a, b}, "mul",
        [br, big_idx](detail::Node& self) {
            auto& pbig = *self.parents[big_idx];
            auto& psmall = *self.parents[1 - big_idx];
            if (pbig.requires_grad) {
                auto& g = pbig.ensure_grad();
                for (std::size_t o = 0; o < br.outer; ++o)
                    for (std::size_t i = 0; i < br.inner; ++i)
                        g[o * br.inner + i] +=
                            self.grad[o * br.inner + i] * psmall.value[i];
            }
            if (psmall.requires_grad) {
                auto& g = psmall.ensure_grad();
                for (std::size_t o = 0; o < br.outer; ++o)
                    for (std::size_t i = 0; i < br.inner; ++i)
                        g[i] += self.grad[o * br.inner + i] *
                                pbig.value[o * br.inner + i];
            }
        });
}

inline Tensor scalar_mul(const Tensor& a, double s) {
    std::vector<double> out(a.values());
    for (double& v : out) v *= s;
    return make_op(a.shape(), std::move(out), {a}, "scalar_mul",
                   [s](detail::Node& self) {
                       auto& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = p.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                           g[i] += s * self.grad[i];
                   });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.values());
    for (double& v : out) v += s;
    return make_op(a.shape(), std::move(out), {a}, "add_scalar",
                   [](detail::Node& self) {
                       auto& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       detail::add_scaled(p.ensure_grad(), self.grad.data(),
                                          self.grad.size());
                   });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return add(a, scalar_mul(b, -1.0));
}

// ---------------------------------------------------------------------------
// unary elementwise

namespace detail {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, const char* tag, Fwd fwd, Bwd bwd_from_xy) {
    std::vector<double> out(a.size());
    const auto& x = a.values();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
    return make_op(a.shape(), std::move(out), {a}, tag,
                   [bwd_from_xy](detail::Node& self) {
                       auto& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = p.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                           g[i] += self.grad[i] *
                                   bwd_from_xy(p.value[i], self.value[i]);
                   });
}

inline double sigmoid_scalar(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace detail

inline Tensor exp(const Tensor& a) {
    return detail::unary_op(
        a, "exp", [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}

inline Tensor reciprocal(const Tensor& a) {
    return detail::unary_op(
        a, "reciprocal", [](double x) { return 1.0 / x; },
        [](double, double y) { return -y * y; });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(
        a, "sigmoid", detail::sigmoid_scalar,
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh_act(const Tensor& a) {
    return detail::unary_op(
        a, "tanh", [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

inline Tensor silu(const Tensor& a) {
    return detail::unary_op(
        a, "silu", [](double x) { return x * detail::sigmoid_scalar(x); },
        [](double x, double) {
            const double s = detail::sigmoid_scalar(x);
            return s * (1.0 + x * (1.0 - s));
        });
}

inline Tensor softplus(const Tensor& a) {
    return detail::unary_op(
        a, "softplus",
        [](double x) {
            return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
        },
        [](double x, double) { return detail::sigmoid_scalar(x); });
}

// ---------------------------------------------------------------------------
// matmul / transpose

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const auto bad = [&] {
        return std::invalid_argument("matmul: shapes " + detail::shape_str(sa) +
                                     " x " + detail::shape_str(sb));
    };
    if (sa.size() == 2 && sb.size() == 2) {
        if (sa[1] != sb[0]) throw bad();
        const std::size_t m = sa[0], k = sa[1], n = sb[1];
        std::vector<double> out(m * n);
        detail::gemm(false, false, m, n, k, a.values().data(), k,
                     b.values().data(), n, out.data(), n, false);
        return make_op(
            Shape{m, n}, std::move(out), {a, b}, "matmul",
            [m, n, k](detail::Node& self) {
                auto& pa = *self.parents[0];
                auto& pb = *self.parents[1];
                if (pa.requires_grad)  // gA += gC * B^T
                    detail::gemm(false, true, m, k, n, self.grad.data(), n,
                                 pb.value.data(), n, pa.ensure_grad().data(),
                                 k, true);
                if (pb.requires_grad)  // gB += A^T * gC
                    detail::gemm(true, false, k, n, m, pa.value.data(), k,
                                 self.grad.data(), n, pb.ensure_grad().data(),
                                 n, true);
            });
    }
    if (sa.size() == 2 && sb.size() == 1) {
        if (sa[1] != sb[0]) throw bad();
        const std::size_t m = sa[0], k = sa[1];
        std::vector<double> out(m);
        detail::gemv(a.values().data(), b.values().data(), out.data(), m, k,
                     false);
        return make_op(
            Shape{m}, std::move(out), {a, b}, "matvec",
            [m, k](detail::Node& self) {
                auto& pa = *self.parents[0];
                auto& pb = *self.parents[1];
                if (pa.requires_grad) {  // gA += gy x^T (outer product)
                    auto& g = pa.ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < k; ++j)
                            g[i * k + j] += self.grad[i] * pb.value[j];
                }
                if (pb.requires_grad)  // gx += A^T gy
                    detail::gemm(true, false, k, 1, m, pa.value.data(), k,
                                 self.grad.data(), 1,
                                 pb.ensure_grad().data(), 1, true);
            });
    }
    if (sa.size() == 1 && sb.size() == 2) {
        if (sa[0] != sb[0]) throw bad();
        const std::size_t k = sa[0], n = sb[1];
        std::vector<double> out(n);
        detail::gemm(false, false, 1, n, k, a.values().data(), k,
                     b.values().data(), n, out.data(), n, false);
        return make_op(
            Shape{n}, std::move(out), {a, b}, "vecmat",
            [k, n](detail::Node& self) {
                auto& pa = *self.parents[0];
                auto& pb = *self.parents[1];
                if (pa.requires_grad)  // gx += B gy
                    detail::gemv(pb.value.data(), self.grad.data(),
                                 pa.ensure_grad().data(), k, n, true);
                if (pb.requires_grad) {  // gB += x gy^T
                    auto& g = pb.ensure_grad();
                    for (std::size_t i = 0; i < k; ++i)
                        for (std::size_t j = 0; j < n; ++j)
                            g[i * n + j] += pa.value[i] * self.grad[j];
                }
            });
    }
    throw bad();
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2)
        throw std::invalid_argument("transpose: rank-" +
                                    std::to_string(a.rank()) + " tensor " +
                                    detail::shape_str(a.shape()));
    const std::size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out[j * r + i] = a.values()[i * c + j];
    return make_op(Shape{c, r}, std::move(out), {a}, "transpose",
                   [r, c](detail::Node& self) {
                       auto& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = p.ensure_grad();
                       for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j)
                               g[i * c + j] += self.grad[j * r + i];
                   });
}

// ---------------------------------------------------------------------------
// shape ops

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size())
        throw std::invalid_argument("concat: axis " + std::to_string(axis) +
                                    " out of range for " +
                                    detail::shape_str(s0));
    Shape out_shape = s0;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size())
            throw std::invalid_argument("concat: rank mismatch " +
                                        detail::shape_str(s0) + " vs " +
                                        detail::shape_str(s));
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != axis && s[d] != s0[d])
                throw std::invalid_argument("concat: shapes " +
                                            detail::shape_str(s0) + " and " +
                                            detail::shape_str(s) +
                                            " differ off-axis");
        out_shape[axis] += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
    for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

    std::vector<double> out(detail::shape_size(out_shape));
    std::vector<std::size_t> widths;  // per-part axis extent * inner
    widths.reserve(parts.size());
    for (const auto& p : parts) widths.push_back(p.shape()[axis] * inner);
    const std::size_t total_w = out_shape[axis] * inner;
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const auto& v = parts[pi].values();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy(v.begin() + o * widths[pi],
                      v.begin() + (o + 1) * widths[pi],
                      out.begin() + o * total_w + off);
        off += widths[pi];
    }
    return make_op(
        out_shape, std::move(out), parts, "concat",
        [outer, widths, total_w](detail::Node& self) {
            std::size_t off = 0;
            for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                auto& p = *self.parents[pi];
                if (p.requires_grad) {
                    auto& g = p.ensure_grad();
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t i = 0; i < widths[pi]; ++i)
                            g[o * widths[pi] + i] +=
                                self.grad[o * total_w + off + i];
                }
                off += widths[pi];
            }
        });
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin,
                         std::size_t count) {
    if (a.rank() != 2 || begin + count > a.dim(1))
        throw std::invalid_argument("slice_cols: [" + std::to_string(begin) +
                                    "," + std::to_string(begin + count) +
                                    ") of " + detail::shape_str(a.shape()));
    const std::size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(r * count);
    for (std::size_t i = 0; i < r; ++i)
        std::copy(a.values().begin() + i * c + begin,
                  a.values().begin() + i * c + begin + count,
                  out.begin() + i * count);
    return make_op(Shape{r, count}, std::move(out), {a}, "slice_cols",
                   [r, c, begin, count](detail::Node& self) {
                       auto& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = p.ensure_grad();
                       for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < count; ++j)
                               g[i * c + begin + j] +=
                                   self.grad[i * count + j];
                   });
}

inline Tensor gather_rows(const Tensor& a, std::vector<std::size_t> idx) {
    if (a.rank() != 2)
        throw std::invalid_argument("gather_rows: need matrix, got " +
                                    detail::shape_str(a.shape()));
    const std::size_t c = a.dim(1);
    for (std::size_t i : idx)
        if (i >= a.dim(0))
            throw std::invalid_argument("gather_rows: row " +
                                        std::to_string(i) + " out of " +
                                        std::to_string(a.dim(0)));
    std::vector<double> out(idx.size() * c);
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy(a.values().begin() + idx[r] * c,
                  a.values().begin() + (idx[r] + 1) * c, out.begin() + r * c);
    const std::size_t n = idx.size();
    return make_op(Shape{n, c}, std::move(out), {a}, "gather_rows",
                   [idx = std::move(idx), c](detail::Node& self) {
                       auto& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = p.ensure_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r)
                           for (std::size_t j = 0; j < c; ++j)
                               g[idx[r] * c + j] += self.grad[r * c + j];
                   });
}

// Row `index` of a matrix as a vector (differentiable table lookup).
inline Tensor row(const Tensor& table, std::size_t index) {
    if (table.rank() != 2 || index >= table.dim(0))
        throw std::invalid_argument(
            "row: index " + std::to_string(index) + " out of " +
            detail::shape_str(table.shape()));
    const std::size_t c = table.dim(1);
    std::vector<double> out(table.values().begin() + index * c,
                            table.values().begin() + (index + 1) * c);
    return make_op(Shape{c}, std::move(out), {table}, "row",
                   [index, c](detail::Node& self) {
                       auto& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = p.ensure_grad();
                       for (std::size_t j = 0; j < c; ++j)
                           g[index * c + j] += self.grad[j];
                   });
}

inline Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
    const std::size_t c = rows[0].size();
    for (const auto& r : rows)
        if (r.rank() != 1 || r.size() != c)
            throw std::invalid_argument("stack_rows: need equal-length "
                                        "vectors, got " +
                                        detail::shape_str(r.shape()));
    std::vector<double> out;
    out.reserve(rows.size() * c);
    for (const auto& r : rows)
        out.insert(out.end(), r.values().begin(), r.values().end());
    return make_op(Shape{rows.size(), c}, std::move(out), rows, "stack_rows",
                   [c](detail::Node& self) {
                       for (std::size_t r = 0; r < self.parents.size(); ++r) {
                           auto& p = *self.parents[r];
                           if (!p.requires_grad) continue;
                           auto& g = p.ensure_grad();
                           for (std::size_t j = 0; j < c; ++j)
                               g[j] += self.grad[r * c + j];
                       }
                   });
}

inline Tensor tile_rows(const Tensor& v, std::size_t n) {
    if (v.rank() != 1)
        throw std::invalid_argument("tile_rows: need vector, got " +
                                    detail::shape_str(v.shape()));
    const std::size_t c = v.size();
    std::vector<double> out(n * c);
    for (std::size_t r = 0; r < n; ++r)
        std::copy(v.values().begin(), v.values().end(), out.begin() + r * c);
    return make_op(Shape{n, c}, std::move(out), {v}, "tile_rows",
                   [n, c](detail::Node& self) {
                       auto& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = p.ensure_grad();
                       for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t j = 0; j < c; ++j)
                               g[j] += self.grad[r * c + j];
                   });
}

// Per-segment mean of matrix rows; segments with no rows yield zero rows.
inline Tensor segment_mean(const Tensor& rows, std::vector<std::size_t> seg,
                           std::size_t n_segments) {
    if (rows.rank() != 2 || seg.size() != rows.dim(0))
        throw std::invalid_argument("segment_mean: " +
                                    detail::shape_str(rows.shape()) + " with " +
                                    std::to_string(seg.size()) + " ids");
    const std::size_t c = rows.dim(1);
    std::vector<double> counts(n_segments, 0.0);
    for (std::size_t s : seg) {
        if (s >= n_segments)
            throw std::invalid_argument("segment_mean: id out of range");
        counts[s] += 1.0;
    }
    std::vector<double> out(n_segments * c, 0.0);
    for (std::size_t r = 0; r < seg.size(); ++r)
        for (std::size_t j = 0; j < c; ++j)
            out[seg[r] * c + j] += rows.values()[r * c + j];
    for (std::size_t s = 0; s < n_segments; ++s)
        if (counts[s] > 0.0)
            for (std::size_t j = 0; j < c; ++j) out[s * c + j] /= counts[s];
    return make_op(Shape{n_segments, c}, std::move(out), {rows},
                   "segment_mean",
                   [seg = std::move(seg), counts = std::move(counts),
                    c](detail::Node& self) {
                       auto& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = p.ensure_grad();
                       for (std::size_t r = 0; r < seg.size(); ++r)
                           for (std::size_t j = 0; j < c; ++j)
                               g[r * c + j] +=
                                   self.grad[seg[r] * c + j] / counts[seg[r]];
                   });
}

// ---------------------------------------------------------------------------
// reductions

inline Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    return make_op(Shape{}, {total}, {a}, "sum", [](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (double& gi : g) gi += self.grad[0];
    });
}

inline Tensor mean_over_axis(const Tensor& a, std::size_t axis) {
    if (a.rank() != 2 || axis > 1)
        throw std::invalid_argument("mean_over_axis: " +
                                    detail::shape_str(a.shape()) + " axis " +
                                    std::to_string(axis));
    const std::size_t r = a.dim(0), c = a.dim(1);
    const std::size_t keep = axis == 0 ? c : r;
    const std::size_t red = axis == 0 ? r : c;
    if (red == 0)
        throw std::invalid_argument("mean_over_axis: empty reduction axis");
    std::vector<double> out(keep, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out[axis == 0 ? j : i] += a.values()[i * c + j];
    for (double& v : out) v /= static_cast<double>(red);
    return make_op(Shape{keep}, std::move(out), {a}, "mean_over_axis",
                   [r, c, axis, red](detail::Node& self) {
                       auto& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = p.ensure_grad();
                       for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j)
                               g[i * c + j] +=
                                   self.grad[axis == 0 ? j : i] /
                                   static_cast<double>(red);
                   });
}

inline Tensor maxpool_over_axis(const Tensor& a, std::size_t axis) {
    if (a.rank() != 2 || axis > 1)
        throw std::invalid_argument("maxpool_over_axis: " +
                                    detail::shape_str(a.shape()) + " axis " +
                                    std::to_string(axis));
    const std::size_t r = a.dim(0), c = a.dim(1);
    const std::size_t keep = axis == 0 ? c : r;
    if ((axis == 0 ? r : c) == 0)
        throw std::invalid_argument("maxpool_over_axis: empty reduction axis");
    std::vector<double> out(keep, -std::numeric_limits<double>::infinity());
    std::vector<std::size_t> argmax(keep, 0);  // first max wins ties
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const std::size_t k = axis == 0 ? j : i;
            const double v = a.values()[i * c + j];
            if (v > out[k]) {
                out[k] = v;
                argmax[k] = i * c + j;
            }
        }
    return make_op(Shape{keep}, std::move(out), {a}, "maxpool",
                   [argmax = std::move(argmax)](detail::Node& self) {
                       auto& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = p.ensure_grad();
                       for (std::size_t k = 0; k < argmax.size(); ++k)
                           g[argmax[k]] += self.grad[k];
                   });
}

// ---------------------------------------------------------------------------
// causal depthwise convolution over (time x channels)

inline Tensor causal_conv1d(const Tensor& x, const Tensor& kernel) {
    if (x.rank() != 2 || kernel.rank() != 2 || x.dim(1) != kernel.dim(1))
        throw std::invalid_argument(
            "causal_conv1d: input " + detail::shape_str(x.shape()) +
            " kernel " + detail::shape_str(kernel.shape()));
    const std::size_t s = x.dim(0), c = x.dim(1), k = kernel.dim(0);
    // Left padding of k-1 zeros: y[t] = sum_i w[i] * x[t-(k-1)+i].
    std::vector<double> out(s * c, 0.0);
    for (std::size_t t = 0; t < s; ++t)
        for (std::size_t i = 0; i < k; ++i) {
            const std::ptrdiff_t src =
                static_cast<std::ptrdiff_t>(t + i) -
                static_cast<std::ptrdiff_t>(k - 1);
            if (src < 0) continue;
            for (std::size_t ch = 0; ch < c; ++ch)
                out[t * c + ch] += kernel.values()[i * c + ch] *
                                   x.values()[src * c + ch];
        }
    return make_op(
        Shape{s, c}, std::move(out), {x, kernel}, "causal_conv1d",
        [s, c, k](detail::Node& self) {
            auto& px = *self.parents[0];
            auto& pk = *self.parents[1];
            for (std::size_t t = 0; t < s; ++t)
                for (std::size_t i = 0; i < k; ++i) {
                    const std::ptrdiff_t src =
                        static_cast<std::ptrdiff_t>(t + i) -
                        static_cast<std::ptrdiff_t>(k - 1);
                    if (src < 0) continue;
                    if (px.requires_grad) {
                        auto& g = px.ensure_grad();
                        for (std::size_t ch = 0; ch < c; ++ch)
                            g[src * c + ch] += self.grad[t * c + ch] *
                                               pk.value[i * c + ch];
                    }
                    if (pk.requires_grad) {
                        auto& g = pk.ensure_grad();
                        for (std::size_t ch = 0; ch < c; ++ch)
                            g[i * c + ch] += self.grad[t * c + ch] *
                                             px.value[src * c + ch];
                    }
                }
        });
}

// ---------------------------------------------------------------------------
// loss / regularization

// Mean softmax cross-entropy over a batch. logits: (N x K) or (K) with one
// target per batch row.
inline Tensor softmax_cross_entropy(const Tensor& logits,
                                    const std::vector<int>& targets) {
    std::size_t n, k;
    if (logits.rank() == 2) {
        n = logits.dim(0);
        k = logits.dim(1);
    } else if (logits.rank() == 1) {
        n = 1;
        k = logits.dim(0);
    } else {
        throw std::invalid_argument("softmax_cross_entropy: logits " +
                                    detail::shape_str(logits.shape()));
    }
    if (targets.size() != n)
        throw std::invalid_argument(
            "softmax_cross_entropy: " + std::to_string(n) + " rows vs " +
            std::to_string(targets.size()) + " targets");
    for (int t : targets)
        if (t < 0 || static_cast<std::size_t>(t) >= k)
            throw std::invalid_argument("softmax_cross_entropy: target " +
                                        std::to_string(t) + " out of " +
                                        std::to_string(k) + " classes");
    // Stores softmax probabilities for the backward rule.
    auto probs = std::make_shared<std::vector<double>>(n * k);
    double loss = 0.0;
    const auto& lv = logits.values();
    for (std::size_t i = 0; i < n; ++i) {
        const double* l = lv.data() + i * k;
        double m = l[0];
        for (std::size_t j = 1; j < k; ++j) m = std::max(m, l[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(l[j] - m);
        const double lse = m + std::log(z);
        loss += lse - l[targets[i]];
        for (std::size_t j = 0; j < k; ++j)
            (*probs)[i * k + j] = std::exp(l[j] - m) / z;
    }
    loss /= static_cast<double>(n);
    return make_op(
        Shape{}, {loss}, {logits}, "softmax_cross_entropy",
        [probs, targets, n, k](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            const double scale = self.grad[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) {
                    double d = (*probs)[i * k + j];
                    if (static_cast<std::size_t>(targets[i]) == j) d -= 1.0;
                    g[i * k + j] += scale * d;
                }
        });
}

// Inverted dropout with a seeded mask; identity when rate == 0 or evaluating.
inline Tensor dropout(const Tensor& a, double rate, bool train,
                      std::uint64_t seed) {
    if (rate < 0.0 || rate >= 1.0)
        throw std::invalid_argument("dropout: rate " + std::to_string(rate));
    if (!train || rate == 0.0) return a;
    SplitRng rng(seed);
    auto mask = std::make_shared<std::vector<double>>(a.size());
    const double scale = 1.0 / (1.0 - rate);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        (*mask)[i] = rng.uniform() < rate ? 0.0 : scale;
        out[i] = a.values()[i] * (*mask)[i];
    }
    return make_op(a.shape(), std::move(out), {a}, "dropout",
                   [mask](detail::Node& self) {
                       auto& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = p.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                           g[i] += self.grad[i] * (*mask)[i];
                   });
}

// ---------------------------------------------------------------------------
// backward

inline void backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw std::invalid_argument("backward: loss has " +
                                    std::to_string(loss.size()) +
                                    " elements, need a scalar");
    // Iterative post-order DFS for a reverse topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    struct Frame {
        detail::Node* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            detail::Node* p = f.node->parents[f.next_parent++].get();
            if (p->requires_grad && seen.insert(p).second)
                stack.push_back({p, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// named-parameter checkpoint ("GMCKPT v1")

struct Parameter {
    std::string name;
    Tensor tensor;
};

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const char* what) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw std::runtime_error(std::string("checkpoint: bad number '") + s +
                                 "' in " + what);
    return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os,
                             const std::vector<Parameter>& params) {
    os << "GMCKPT v1\n";
    for (const auto& p : params) {
        os << p.name << " ";
        const Shape& s = p.tensor.shape();
        if (s.empty()) {
            os << "scalar";
        } else {
            for (std::size_t i = 0; i < s.size(); ++i) {
                if (i) os << ",";
                os << s[i];
            }
        }
        os << "\n";
        const auto& v = p.tensor.values();
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) os << " ";
            os << detail::format_double(v[i]);
        }
        os << "\n";
    }
}

inline std::map<std::string, Tensor> read_checkpoint(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "GMCKPT v1")
        throw std::runtime_error("checkpoint: missing 'GMCKPT v1' header");
    std::map<std::string, Tensor> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto sp = line.find(' ');
        if (sp == std::string::npos)
            throw std::runtime_error("checkpoint: malformed entry '" + line +
                                     "'");
        const std::string name = line.substr(0, sp);
        const std::string shape_csv = line.substr(sp + 1);
        Shape shape;
        if (shape_csv != "scalar") {
            std::stringstream ss(shape_csv);
            std::string tok;
            while (std::getline(ss, tok, ','))
                shape.push_back(static_cast<std::size_t>(
                    detail::parse_double(tok, name.c_str())));
        }
        std::string values;
        if (!std::getline(is, values))
            throw std::runtime_error("checkpoint: missing values for '" +
                                     name + "'");
        std::vector<double> data;
        data.reserve(detail::shape_size(shape));
        std::stringstream vs(values);
        std::string tok;
        while (vs >> tok) data.push_back(detail::parse_double(tok, name.c_str()));
        if (data.size() != detail::shape_size(shape))
            throw std::runtime_error(
                "checkpoint: '" + name + "' expects " +
                std::to_string(detail::shape_size(shape)) + " values, got " +
                std::to_string(data.size()));
        if (!out.emplace(name, Tensor(shape, std::move(data))).second)
            throw std::runtime_error("checkpoint: duplicate parameter '" +
                                     name + "'");
    }
    return out;
}

}  // namespace gm
