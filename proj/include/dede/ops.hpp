#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <string>
#include <vector>

#include "dede/graph.hpp"
#include "dede/tensor.hpp"

// Differentiable primitives. Each op validates shapes, computes its value,
// and, when a graph is active and any input requires grad, records a pull
// closure that routes the output gradient back to the inputs.
//
// Broadcasting for add/mul follows the usual right-aligned rule: ranks are
// padded with leading 1s and extents must match or be 1.

namespace dede {

namespace detail {

[[noreturn]] inline void shape_fail(const char* op, const std::string& what) {
    throw ContractError(std::string(op) + ": " + what);
}

inline Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
    size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (size_t i = 0; i < rank; ++i) {
        int ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        int eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (ea != eb && ea != 1 && eb != 1)
            shape_fail(op, "shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
        out[i] = std::max(ea, eb);
    }
    return out;
}

// Per-output-dim element strides into a tensor of shape `in`, right-aligned
// against `out`; 0 where the input is broadcast.
inline std::vector<int64_t> broadcast_strides(const Shape& out, const Shape& in) {
    std::vector<int64_t> strides(out.size(), 0);
    int64_t s = 1;
    for (size_t i = 0; i < in.size(); ++i) {
        size_t d = out.size() - 1 - i;
        size_t id = in.size() - 1 - i;
        strides[d] = in[id] == 1 ? 0 : s;
        s *= in[id];
    }
    return strides;
}

// Odometer walk over `out`, yielding (out_lin, a_lin, b_lin).
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<int64_t>& sa,
                        const std::vector<int64_t>& sb, F&& f) {
    int rank = static_cast<int>(out.size());
    std::vector<int> idx(static_cast<size_t>(rank), 0);
    int64_t oa = 0, ob = 0;
    int64_t n = numel(out);
    for (int64_t lin = 0; lin < n; ++lin) {
        f(lin, oa, ob);
        for (int d = rank - 1; d >= 0; --d) {
            ++idx[static_cast<size_t>(d)];
            oa += sa[static_cast<size_t>(d)];
            ob += sb[static_cast<size_t>(d)];
            if (idx[static_cast<size_t>(d)] < out[static_cast<size_t>(d)]) break;
            oa -= sa[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
            ob -= sb[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
            idx[static_cast<size_t>(d)] = 0;
        }
    }
}

template <class S>
bool recording(std::initializer_list<TensorPtr<S>> ins) {
    if (!Graph<S>::active()) return false;
    for (const auto& t : ins)
        if (t->requires_grad) return true;
    return false;
}

template <class S>
void record(const char* op, std::vector<TensorPtr<S>> ins, const TensorPtr<S>& out,
            std::function<void()> pull) {
    out->requires_grad = true;
    Graph<S>::active()->record(op, std::move(ins), out, std::move(pull));
}

// C[m,n] = A[m,k] @ B[k,n]
template <class S>
void mm_nn(const S* a, const S* b, S* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        S* crow = c + static_cast<int64_t>(i) * n;
        std::fill(crow, crow + n, S(0));
        const S* arow = a + static_cast<int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const S av = arow[p];
            const S* brow = b + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,k] += A[m,n] @ B[k,n]^T
template <class S>
void mm_nt_acc(const S* a, const S* b, S* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<int64_t>(i) * n;
        S* crow = c + static_cast<int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const S* brow = b + static_cast<int64_t>(p) * n;
            S acc = S(0);
            for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T @ B[m,n]
template <class S>
void mm_tn_acc(const S* a, const S* b, S* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<int64_t>(i) * k;
        const S* brow = b + static_cast<int64_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const S av = arow[p];
            S* crow = c + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary

template <class S>
TensorPtr<S> add(const TensorPtr<S>& a, const TensorPtr<S>& b) {
    Shape os = detail::broadcast_shape("add", a->shape, b->shape);
    auto sa = detail::broadcast_strides(os, a->shape);
    auto sb = detail::broadcast_strides(os, b->shape);
    auto out = zeros<S>(os);
    detail::for_each_broadcast(os, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
        out->data[static_cast<size_t>(o)] =
            a->data[static_cast<size_t>(ia)] + b->data[static_cast<size_t>(ib)];
    });
    if (detail::recording<S>({a, b})) {
        detail::record<S>("add", {a, b}, out, [a, b, out, os, sa, sb]() {
            if (a->requires_grad) a->ensure_grad();
            if (b->requires_grad) b->ensure_grad();
            detail::for_each_broadcast(os, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
                S g = out->grad[static_cast<size_t>(o)];
                if (a->requires_grad) a->grad[static_cast<size_t>(ia)] += g;
                if (b->requires_grad) b->grad[static_cast<size_t>(ib)] += g;
            });
        });
    }
    return out;
}

template <class S>
TensorPtr<S> mul(const TensorPtr<S>& a, const TensorPtr<S>& b) {
    Shape os = detail::broadcast_shape("mul", a->shape, b->shape);
    auto sa = detail::broadcast_strides(os, a->shape);
    auto sb = detail::broadcast_strides(os, b->shape);
    auto out = zeros<S>(os);
    detail::for_each_broadcast(os, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
        out->data[static_cast<size_t>(o)] =
            a->data[static_cast<size_t>(ia)] * b->data[static_cast<size_t>(ib)];
    });
    if (detail::recording<S>({a, b})) {
        detail::record<S>("mul", {a, b}, out, [a, b, out, os, sa, sb]() {
            if (a->requires_grad) a->ensure_grad();
            if (b->requires_grad) b->ensure_grad();
            detail::for_each_broadcast(os, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
                S g = out->grad[static_cast<size_t>(o)];
                if (a->requires_grad)
                    a->grad[static_cast<size_t>(ia)] += g * b->data[static_cast<size_t>(ib)];
                if (b->requires_grad)
                    b->grad[static_cast<size_t>(ib)] += g * a->data[static_cast<size_t>(ia)];
            });
        });
    }
    return out;
}

// out = a * constant
template <class S>
TensorPtr<S> scale(const TensorPtr<S>& a, S c) {
    auto out = zeros<S>(a->shape);
    for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] * c;
    if (detail::recording<S>({a})) {
        detail::record<S>("scale", {a}, out, [a, out, c]() {
            a->ensure_grad();
            for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i] * c;
        });
    }
    return out;
}

// a - b, as a composite
template <class S>
TensorPtr<S> sub(const TensorPtr<S>& a, const TensorPtr<S>& b) {
    return add(a, scale(b, S(-1)));
}

// ---------------------------------------------------------------------------
// matmul: [m,k]@[k,n], [B,m,k]@[k,n], [B,m,k]@[B,k,n]

template <class S>
TensorPtr<S> matmul(const TensorPtr<S>& a, const TensorPtr<S>& b) {
    const Shape& as = a->shape;
    const Shape& bs = b->shape;
    int batches = 1, m = 0, k = 0, n = 0;
    bool b_batched = false;
    if (as.size() == 2 && bs.size() == 2) {
        m = as[0]; k = as[1];
        if (bs[0] != k) detail::shape_fail("matmul", "inner extents differ: " + shape_str(as) + " @ " + shape_str(bs));
        n = bs[1];
    } else if (as.size() == 3 && bs.size() == 2) {
        batches = as[0]; m = as[1]; k = as[2];
        if (bs[0] != k) detail::shape_fail("matmul", "inner extents differ: " + shape_str(as) + " @ " + shape_str(bs));
        n = bs[1];
    } else if (as.size() == 3 && bs.size() == 3) {
        if (as[0] != bs[0]) detail::shape_fail("matmul", "batch extents differ: " + shape_str(as) + " @ " + shape_str(bs));
        batches = as[0]; m = as[1]; k = as[2];
        if (bs[1] != k) detail::shape_fail("matmul", "inner extents differ: " + shape_str(as) + " @ " + shape_str(bs));
        n = bs[2];
        b_batched = true;
    } else {
        detail::shape_fail("matmul", "unsupported ranks: " + shape_str(as) + " @ " + shape_str(bs));
    }

    Shape os = as.size() == 2 ? Shape{m, n} : Shape{batches, m, n};
    auto out = zeros<S>(os);
    const int64_t a_step = static_cast<int64_t>(m) * k;
    const int64_t b_step = b_batched ? static_cast<int64_t>(k) * n : 0;
    const int64_t o_step = static_cast<int64_t>(m) * n;
    for (int bi = 0; bi < batches; ++bi)
        detail::mm_nn(a->data.data() + bi * a_step, b->data.data() + bi * b_step,
                      out->data.data() + bi * o_step, m, k, n);

    if (detail::recording<S>({a, b})) {
        detail::record<S>("matmul", {a, b}, out,
                          [a, b, out, batches, m, k, n, a_step, b_step, o_step]() {
            if (a->requires_grad) a->ensure_grad();
            if (b->requires_grad) b->ensure_grad();
            for (int bi = 0; bi < batches; ++bi) {
                const S* g = out->grad.data() + bi * o_step;
                if (a->requires_grad) // dA = g @ B^T
                    detail::mm_nt_acc(g, b->data.data() + bi * b_step,
                                      a->grad.data() + bi * a_step, m, n, k);
                if (b->requires_grad) // dB = A^T @ g  (accumulates across batches when shared)
                    detail::mm_tn_acc(a->data.data() + bi * a_step, g,
                                      b->grad.data() + bi * b_step, m, k, n);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Layout ops

// Swap the last two axes (rank 2 or 3).
template <class S>
TensorPtr<S> transpose(const TensorPtr<S>& a) {
    const Shape& s = a->shape;
    if (s.size() != 2 && s.size() != 3)
        detail::shape_fail("transpose", "needs rank 2 or 3, got " + shape_str(s));
    int batches = s.size() == 3 ? s[0] : 1;
    int m = s[s.size() - 2], n = s[s.size() - 1];
    Shape os = s.size() == 3 ? Shape{batches, n, m} : Shape{n, m};
    auto out = zeros<S>(os);
    for (int bi = 0; bi < batches; ++bi) {
        const S* src = a->data.data() + static_cast<int64_t>(bi) * m * n;
        S* dst = out->data.data() + static_cast<int64_t>(bi) * m * n;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) dst[static_cast<int64_t>(j) * m + i] = src[static_cast<int64_t>(i) * n + j];
    }
    if (detail::recording<S>({a})) {
        detail::record<S>("transpose", {a}, out, [a, out, batches, m, n]() {
            a->ensure_grad();
            for (int bi = 0; bi < batches; ++bi) {
                const S* g = out->grad.data() + static_cast<int64_t>(bi) * m * n;
                S* dst = a->grad.data() + static_cast<int64_t>(bi) * m * n;
                for (int j = 0; j < n; ++j)
                    for (int i = 0; i < m; ++i) dst[static_cast<int64_t>(i) * n + j] += g[static_cast<int64_t>(j) * m + i];
            }
        });
    }
    return out;
}

template <class S>
TensorPtr<S> reshape(const TensorPtr<S>& a, Shape shape) {
    validate_shape(shape);
    if (numel(shape) != a->size())
        detail::shape_fail("reshape", shape_str(a->shape) + " to " + shape_str(shape) + " changes element count");
    auto out = tensor<S>(std::move(shape), a->data);
    if (detail::recording<S>({a})) {
        detail::record<S>("reshape", {a}, out, [a, out]() {
            a->ensure_grad();
            for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += out->grad[i];
        });
    }
    return out;
}

// Contiguous range [begin, end) along one axis.
template <class S>
TensorPtr<S> slice(const TensorPtr<S>& a, int axis, int begin, int end) {
    const Shape& s = a->shape;
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        detail::shape_fail("slice", "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    if (begin < 0 || end <= begin || end > s[static_cast<size_t>(axis)])
        detail::shape_fail("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                                        ") invalid for axis extent " + std::to_string(s[static_cast<size_t>(axis)]));
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
    int extent = s[static_cast<size_t>(axis)];
    int len = end - begin;
    Shape os = s;
    os[static_cast<size_t>(axis)] = len;
    auto out = zeros<S>(os);
    for (int64_t o = 0; o < outer; ++o)
        std::copy_n(a->data.data() + (o * extent + begin) * inner, static_cast<size_t>(len) * inner,
                    out->data.data() + o * len * inner);
    if (detail::recording<S>({a})) {
        detail::record<S>("slice", {a}, out, [a, out, outer, inner, extent, begin, len]() {
            a->ensure_grad();
            for (int64_t o = 0; o < outer; ++o) {
                const S* g = out->grad.data() + o * len * inner;
                S* dst = a->grad.data() + (o * extent + begin) * inner;
                for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
            }
        });
    }
    return out;
}

template <class S>
TensorPtr<S> concat(const std::vector<TensorPtr<S>>& parts, int axis) {
    if (parts.empty()) detail::shape_fail("concat", "no inputs");
    const Shape& ref = parts[0]->shape;
    if (axis < 0 || axis >= static_cast<int>(ref.size()))
        detail::shape_fail("concat", "axis " + std::to_string(axis) + " out of range for " + shape_str(ref));
    int total = 0;
    for (const auto& p : parts) {
        if (p->shape.size() != ref.size())
            detail::shape_fail("concat", "rank mismatch: " + shape_str(ref) + " vs " + shape_str(p->shape));
        for (size_t i = 0; i < ref.size(); ++i)
            if (i != static_cast<size_t>(axis) && p->shape[i] != ref[i])
                detail::shape_fail("concat", "shape mismatch off-axis: " + shape_str(ref) + " vs " + shape_str(p->shape));
        total += p->shape[static_cast<size_t>(axis)];
    }
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= ref[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < ref.size(); ++i) inner *= ref[i];
    Shape os = ref;
    os[static_cast<size_t>(axis)] = total;
    auto out = zeros<S>(os);
    int offset = 0;
    for (const auto& p : parts) {
        int ext = p->shape[static_cast<size_t>(axis)];
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(p->data.data() + o * ext * inner, static_cast<size_t>(ext) * inner,
                        out->data.data() + (o * total + offset) * inner);
        offset += ext;
    }
    bool rec = false;
    for (const auto& p : parts)
        if (p->requires_grad) rec = true;
    if (rec && Graph<S>::active()) {
        auto ins = parts;
        detail::record<S>("concat", parts, out, [ins, out, outer, inner, total]() {
            int off = 0;
            for (const auto& p : ins) {
                int ext = static_cast<int>(p->size() / (outer * inner));
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int64_t o = 0; o < outer; ++o) {
                        const S* g = out->grad.data() + (o * total + off) * inner;
                        S* dst = p->grad.data() + o * ext * inner;
                        for (int64_t i = 0; i < static_cast<int64_t>(ext) * inner; ++i) dst[i] += g[i];
                    }
                }
                off += ext;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full reductions

template <class S>
TensorPtr<S> sum(const TensorPtr<S>& a) {
    S acc = S(0);
    for (S v : a->data) acc += v;
    auto out = scalar<S>(acc);
    if (detail::recording<S>({a})) {
        detail::record<S>("sum", {a}, out, [a, out]() {
            a->ensure_grad();
            S g = out->grad[0];
            for (auto& v : a->grad) v += g;
        });
    }
    return out;
}

template <class S>
TensorPtr<S> mean(const TensorPtr<S>& a) {
    S acc = S(0);
    for (S v : a->data) acc += v;
    S inv = S(1) / static_cast<S>(a->size());
    auto out = scalar<S>(acc * inv);
    if (detail::recording<S>({a})) {
        detail::record<S>("mean", {a}, out, [a, out, inv]() {
            a->ensure_grad();
            S g = out->grad[0] * inv;
            for (auto& v : a->grad) v += g;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

template <class S>
TensorPtr<S> relu(const TensorPtr<S>& a) {
    auto out = zeros<S>(a->shape);
    for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] > S(0) ? a->data[i] : S(0);
    if (detail::recording<S>({a})) {
        detail::record<S>("relu", {a}, out, [a, out]() {
            a->ensure_grad();
            for (size_t i = 0; i < a->data.size(); ++i)
                if (a->data[i] > S(0)) a->grad[i] += out->grad[i];
        });
    }
    return out;
}

template <class S>
TensorPtr<S> gelu(const TensorPtr<S>& a) {
    auto out = zeros<S>(a->shape);
    const S inv_sqrt2 = static_cast<S>(std::numbers::sqrt2 / 2.0);
    for (size_t i = 0; i < a->data.size(); ++i) {
        S x = a->data[i];
        out->data[i] = S(0.5) * x * (S(1) + static_cast<S>(std::erf(static_cast<double>(x) * inv_sqrt2)));
    }
    if (detail::recording<S>({a})) {
        detail::record<S>("gelu", {a}, out, [a, out, inv_sqrt2]() {
            a->ensure_grad();
            const S inv_sqrt2pi = static_cast<S>(1.0 / std::sqrt(2.0 * std::numbers::pi));
            for (size_t i = 0; i < a->data.size(); ++i) {
                S x = a->data[i];
                S cdf = S(0.5) * (S(1) + static_cast<S>(std::erf(static_cast<double>(x) * inv_sqrt2)));
                S pdf = inv_sqrt2pi * static_cast<S>(std::exp(-0.5 * static_cast<double>(x) * static_cast<double>(x)));
                a->grad[i] += out->grad[i] * (cdf + x * pdf);
            }
        });
    }
    return out;
}

template <class S>
TensorPtr<S> exp(const TensorPtr<S>& a) {
    auto out = zeros<S>(a->shape);
    for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = static_cast<S>(std::exp(static_cast<double>(a->data[i])));
    if (detail::recording<S>({a})) {
        detail::record<S>("exp", {a}, out, [a, out]() {
            a->ensure_grad();
            for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i] * out->data[i];
        });
    }
    return out;
}

template <class S>
TensorPtr<S> log(const TensorPtr<S>& a) {
    auto out = zeros<S>(a->shape);
    for (size_t i = 0; i < a->data.size(); ++i) {
        if (!(a->data[i] > S(0)))
            throw DomainError("log: nonpositive input " + std::to_string(static_cast<double>(a->data[i])));
        out->data[i] = static_cast<S>(std::log(static_cast<double>(a->data[i])));
    }
    if (detail::recording<S>({a})) {
        detail::record<S>("log", {a}, out, [a, out]() {
            a->ensure_grad();
            for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i] / a->data[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Last-axis normalisations

template <class S>
TensorPtr<S> softmax_lastdim(const TensorPtr<S>& a) {
    int cols = a->shape.back();
    int64_t rows = a->size() / cols;
    auto out = zeros<S>(a->shape);
    for (int64_t r = 0; r < rows; ++r) {
        const S* x = a->data.data() + r * cols;
        S* y = out->data.data() + r * cols;
        S mx = x[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        S denom = S(0);
        for (int j = 0; j < cols; ++j) {
            y[j] = static_cast<S>(std::exp(static_cast<double>(x[j] - mx)));
            denom += y[j];
        }
        S inv = S(1) / denom;
        for (int j = 0; j < cols; ++j) y[j] *= inv;
    }
    if (detail::recording<S>({a})) {
        detail::record<S>("softmax_lastdim", {a}, out, [a, out, rows, cols]() {
            a->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const S* s = out->data.data() + r * cols;
                const S* g = out->grad.data() + r * cols;
                S* dst = a->grad.data() + r * cols;
                S dot = S(0);
                for (int j = 0; j < cols; ++j) dot += s[j] * g[j];
                for (int j = 0; j < cols; ++j) dst[j] += s[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

// Normalise each last-axis row to zero mean, unit variance. Affine terms are
// applied by callers via mul/add so the normalised moments stay testable.
template <class S>
TensorPtr<S> layernorm_lastdim(const TensorPtr<S>& a, S eps = S(1e-5)) {
    int cols = a->shape.back();
    if (cols < 2) detail::shape_fail("layernorm_lastdim", "last extent must be >= 2 in " + shape_str(a->shape));
    int64_t rows = a->size() / cols;
    auto out = zeros<S>(a->shape);
    std::vector<S> inv_std(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const S* x = a->data.data() + r * cols;
        S* y = out->data.data() + r * cols;
        S mu = S(0);
        for (int j = 0; j < cols; ++j) mu += x[j];
        mu /= static_cast<S>(cols);
        S var = S(0);
        for (int j = 0; j < cols; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<S>(cols);
        S is = S(1) / static_cast<S>(std::sqrt(static_cast<double>(var + eps)));
        inv_std[static_cast<size_t>(r)] = is;
        for (int j = 0; j < cols; ++j) y[j] = (x[j] - mu) * is;
    }
    if (detail::recording<S>({a})) {
        detail::record<S>("layernorm_lastdim", {a}, out, [a, out, rows, cols, inv_std]() {
            a->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const S* y = out->data.data() + r * cols;
                const S* g = out->grad.data() + r * cols;
                S* dst = a->grad.data() + r * cols;
                S gmean = S(0), gymean = S(0);
                for (int j = 0; j < cols; ++j) {
                    gmean += g[j];
                    gymean += g[j] * y[j];
                }
                gmean /= static_cast<S>(cols);
                gymean /= static_cast<S>(cols);
                S is = inv_std[static_cast<size_t>(r)];
                for (int j = 0; j < cols; ++j) dst[j] += is * (g[j] - gmean - y[j] * gymean);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Losses and similarities

// Mean squared error over all elements.
template <class S>
TensorPtr<S> mse(const TensorPtr<S>& a, const TensorPtr<S>& b) {
    if (a->shape != b->shape)
        detail::shape_fail("mse", "shapes differ: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    S acc = S(0);
    for (size_t i = 0; i < a->data.size(); ++i) {
        S d = a->data[i] - b->data[i];
        acc += d * d;
    }
    S inv = S(1) / static_cast<S>(a->size());
    auto out = scalar<S>(acc * inv);
    if (detail::recording<S>({a, b})) {
        detail::record<S>("mse", {a, b}, out, [a, b, out, inv]() {
            if (a->requires_grad) a->ensure_grad();
            if (b->requires_grad) b->ensure_grad();
            S g = out->grad[0] * S(2) * inv;
            for (size_t i = 0; i < a->data.size(); ++i) {
                S d = a->data[i] - b->data[i];
                if (a->requires_grad) a->grad[i] += g * d;
                if (b->requires_grad) b->grad[i] -= g * d;
            }
        });
    }
    return out;
}

// Row-wise cosine similarity over the last axis. Output shape is the leading
// shape ({1} for plain vectors). Zero-norm rows are a domain violation.
template <class S>
TensorPtr<S> cosine_similarity(const TensorPtr<S>& a, const TensorPtr<S>& b) {
    if (a->shape != b->shape)
        detail::shape_fail("cosine_similarity", "shapes differ: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    int cols = a->shape.back();
    int64_t rows = a->size() / cols;
    Shape os = a->shape.size() == 1 ? Shape{1} : Shape(a->shape.begin(), a->shape.end() - 1);
    auto out = zeros<S>(os);
    std::vector<S> nas(static_cast<size_t>(rows)), nbs(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const S* x = a->data.data() + r * cols;
        const S* y = b->data.data() + r * cols;
        S dot = S(0), na = S(0), nb = S(0);
        for (int j = 0; j < cols; ++j) {
            dot += x[j] * y[j];
            na += x[j] * x[j];
            nb += y[j] * y[j];
        }
        na = static_cast<S>(std::sqrt(static_cast<double>(na)));
        nb = static_cast<S>(std::sqrt(static_cast<double>(nb)));
        if (na == S(0) || nb == S(0)) throw DomainError("cosine_similarity: zero-norm row");
        nas[static_cast<size_t>(r)] = na;
        nbs[static_cast<size_t>(r)] = nb;
        out->data[static_cast<size_t>(r)] = dot / (na * nb);
    }
    if (detail::recording<S>({a, b})) {
        detail::record<S>("cosine_similarity", {a, b}, out, [a, b, out, rows, cols, nas, nbs]() {
            if (a->requires_grad) a->ensure_grad();
            if (b->requires_grad) b->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const S* x = a->data.data() + r * cols;
                const S* y = b->data.data() + r * cols;
                S na = nas[static_cast<size_t>(r)], nb = nbs[static_cast<size_t>(r)];
                S c = out->data[static_cast<size_t>(r)];
                S g = out->grad[static_cast<size_t>(r)];
                for (int j = 0; j < cols; ++j) {
                    if (a->requires_grad)
                        a->grad[r * cols + j] += g * (y[j] / (na * nb) - c * x[j] / (na * na));
                    if (b->requires_grad)
                        b->grad[r * cols + j] += g * (x[j] / (na * nb) - c * y[j] / (nb * nb));
                }
            }
        });
    }
    return out;
}

// Mean over rows of -sum(targets * log softmax(logits)). Targets are given as
// per-row distributions (one-hot for plain classification).
template <class S>
TensorPtr<S> cross_entropy_with_logits(const TensorPtr<S>& logits, const TensorPtr<S>& targets) {
    if (logits->shape != targets->shape)
        detail::shape_fail("cross_entropy_with_logits",
                           "shapes differ: " + shape_str(logits->shape) + " vs " + shape_str(targets->shape));
    if (logits->shape.size() != 2)
        detail::shape_fail("cross_entropy_with_logits", "expects rank 2, got " + shape_str(logits->shape));
    int n = logits->shape[0], k = logits->shape[1];
    std::vector<S> lsm(static_cast<size_t>(n) * k);
    S acc = S(0);
    for (int r = 0; r < n; ++r) {
        const S* x = logits->data.data() + static_cast<int64_t>(r) * k;
        S* l = lsm.data() + static_cast<int64_t>(r) * k;
        S mx = x[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, x[j]);
        S denom = S(0);
        for (int j = 0; j < k; ++j) denom += static_cast<S>(std::exp(static_cast<double>(x[j] - mx)));
        S logz = mx + static_cast<S>(std::log(static_cast<double>(denom)));
        for (int j = 0; j < k; ++j) {
            l[j] = x[j] - logz;
            acc -= targets->data[static_cast<int64_t>(r) * k + j] * l[j];
        }
    }
    auto out = scalar<S>(acc / static_cast<S>(n));
    if (detail::recording<S>({logits, targets})) {
        detail::record<S>("cross_entropy_with_logits", {logits, targets}, out,
                          [logits, targets, out, n, k, lsm]() {
            if (logits->requires_grad) logits->ensure_grad();
            if (targets->requires_grad) targets->ensure_grad();
            S g = out->grad[0] / static_cast<S>(n);
            for (int r = 0; r < n; ++r) {
                const S* l = lsm.data() + static_cast<int64_t>(r) * k;
                const S* t = targets->data.data() + static_cast<int64_t>(r) * k;
                S tsum = S(0);
                for (int j = 0; j < k; ++j) tsum += t[j];
                for (int j = 0; j < k; ++j) {
                    S s = static_cast<S>(std::exp(static_cast<double>(l[j])));
                    if (logits->requires_grad)
                        logits->grad[static_cast<int64_t>(r) * k + j] += g * (s * tsum - t[j]);
                    if (targets->requires_grad)
                        targets->grad[static_cast<int64_t>(r) * k + j] -= g * l[j];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Composites used throughout the models (built purely from primitives above)

// Row-wise L2 normalisation over the last axis of a rank-2 tensor.
template <class S>
TensorPtr<S> l2_normalize_rows(const TensorPtr<S>& x, S eps = S(1e-12)) {
    if (x->shape.size() != 2)
        detail::shape_fail("l2_normalize_rows", "expects rank 2, got " + shape_str(x->shape));
    int d = x->shape[1];
    auto sq = mul(x, x);
    auto rowsum = matmul(sq, ones<S>({d, 1}));              // [n,1]
    auto inv = exp(scale(log(add(rowsum, full<S>({1}, eps))), S(-0.5)));
    return mul(x, inv);                                     // broadcast [n,d]*[n,1]
}

// Clamp to [0,1]: 1 - relu(1 - relu(x)). Exact inside the range, flat outside.
template <class S>
TensorPtr<S> clamp01(const TensorPtr<S>& x) {
    auto one = ones<S>({1});
    auto lower = relu(x);
    auto upper = relu(sub(one, lower));
    return sub(one, upper);
}

} // namespace dede
