#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ddad/tape.hpp"
#include "ddad/tensor.hpp"

// Differentiable tensor operations. Every op validates input finiteness,
// creates a fresh output tensor, and (when a tape is active and some input
// requires grad) registers a backward rule that accumulates additively into
// the input grad buffers. Elementwise loops are direct; the convolutions go
// through an im2col/col2im factorization so their hot loops run over long
// contiguous rows.

namespace ddad {

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

inline void require_rank(const char* op, const Tensor& t, std::size_t rank) {
    if (t.shape().size() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
}

inline void check_output_finite(const Tensor& t, const char* op) {
    if (!all_finite(t.values()))
        throw NonFiniteError(std::string(op) + " produced non-finite values");
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("add", a, b);
    check_finite(a, "add");
    check_finite(b, "add");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    Tensor r = Tensor::from_values(a.shape(), std::move(out));
    auto ap = a.ptr(), bp = b.ptr(), rp = r.ptr();
    record_op("add", {a, b}, r, [ap, bp, rp] {
        const auto& go = rp->grad;
        if (auto* ga = grad_sink(ap))
            for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
        if (auto* gb = grad_sink(bp))
            for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += go[i];
    });
    return r;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("sub", a, b);
    check_finite(a, "sub");
    check_finite(b, "sub");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    Tensor r = Tensor::from_values(a.shape(), std::move(out));
    auto ap = a.ptr(), bp = b.ptr(), rp = r.ptr();
    record_op("sub", {a, b}, r, [ap, bp, rp] {
        const auto& go = rp->grad;
        if (auto* ga = grad_sink(ap))
            for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
        if (auto* gb = grad_sink(bp))
            for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] -= go[i];
    });
    return r;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("mul", a, b);
    check_finite(a, "mul");
    check_finite(b, "mul");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    Tensor r = Tensor::from_values(a.shape(), std::move(out));
    auto ap = a.ptr(), bp = b.ptr(), rp = r.ptr();
    record_op("mul", {a, b}, r, [ap, bp, rp] {
        const auto& go = rp->grad;
        if (auto* ga = grad_sink(ap))
            for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] * bp->values[i];
        if (auto* gb = grad_sink(bp))
            for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += go[i] * ap->values[i];
    });
    return r;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("div", a, b);
    check_finite(a, "div");
    check_finite(b, "div");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] / bv[i];
    Tensor r = Tensor::from_values(a.shape(), std::move(out));
    detail::check_output_finite(r, "div");
    auto ap = a.ptr(), bp = b.ptr(), rp = r.ptr();
    record_op("div", {a, b}, r, [ap, bp, rp] {
        const auto& go = rp->grad;
        if (auto* ga = grad_sink(ap))
            for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] / bp->values[i];
        if (auto* gb = grad_sink(bp))
            for (std::size_t i = 0; i < go.size(); ++i)
                (*gb)[i] -= go[i] * ap->values[i] / (bp->values[i] * bp->values[i]);
    });
    return r;
}

inline Tensor scalar_mul(const Tensor& a, double c) {
    check_finite(a, "scalar_mul");
    if (!std::isfinite(c)) throw NonFiniteError("non-finite scalar in scalar_mul");
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
    Tensor r = Tensor::from_values(a.shape(), std::move(out));
    auto ap = a.ptr(), rp = r.ptr();
    record_op("scalar_mul", {a}, r, [ap, rp, c] {
        const auto& go = rp->grad;
        if (auto* ga = grad_sink(ap))
            for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] * c;
    });
    return r;
}

inline Tensor scalar_add(const Tensor& a, double c) {
    check_finite(a, "scalar_add");
    if (!std::isfinite(c)) throw NonFiniteError("non-finite scalar in scalar_add");
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + c;
    Tensor r = Tensor::from_values(a.shape(), std::move(out));
    auto ap = a.ptr(), rp = r.ptr();
    record_op("scalar_add", {a}, r, [ap, rp] {
        const auto& go = rp->grad;
        if (auto* ga = grad_sink(ap))
            for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
    });
    return r;
}

inline Tensor relu(const Tensor& a) {
    check_finite(a, "relu");
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    Tensor r = Tensor::from_values(a.shape(), std::move(out));
    auto ap = a.ptr(), rp = r.ptr();
    record_op("relu", {a}, r, [ap, rp] {
        const auto& go = rp->grad;
        if (auto* ga = grad_sink(ap))
            for (std::size_t i = 0; i < go.size(); ++i)
                if (ap->values[i] > 0.0) (*ga)[i] += go[i];
    });
    return r;
}

inline Tensor tanh(const Tensor& a) {
    check_finite(a, "tanh");
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::tanh(av[i]);
    Tensor r = Tensor::from_values(a.shape(), std::move(out));
    auto ap = a.ptr(), rp = r.ptr();
    record_op("tanh", {a}, r, [ap, rp] {
        const auto& go = rp->grad;
        if (auto* ga = grad_sink(ap))
            for (std::size_t i = 0; i < go.size(); ++i) {
                double y = rp->values[i];
                (*ga)[i] += go[i] * (1.0 - y * y);
            }
    });
    return r;
}

inline Tensor abs(const Tensor& a) {
    check_finite(a, "abs");
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::fabs(av[i]);
    Tensor r = Tensor::from_values(a.shape(), std::move(out));
    auto ap = a.ptr(), rp = r.ptr();
    // subgradient 0 at the kink
    record_op("abs", {a}, r, [ap, rp] {
        const auto& go = rp->grad;
        if (auto* ga = grad_sink(ap))
            for (std::size_t i = 0; i < go.size(); ++i) {
                double x = ap->values[i];
                if (x > 0.0)
                    (*ga)[i] += go[i];
                else if (x < 0.0)
                    (*ga)[i] -= go[i];
            }
    });
    return r;
}

inline Tensor log(const Tensor& a) {
    check_finite(a, "log");
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::log(av[i]);
    Tensor r = Tensor::from_values(a.shape(), std::move(out));
    detail::check_output_finite(r, "log");
    auto ap = a.ptr(), rp = r.ptr();
    record_op("log", {a}, r, [ap, rp] {
        const auto& go = rp->grad;
        if (auto* ga = grad_sink(ap))
            for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] / ap->values[i];
    });
    return r;
}

inline Tensor sqrt(const Tensor& a) {
    check_finite(a, "sqrt");
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::sqrt(av[i]);
    Tensor r = Tensor::from_values(a.shape(), std::move(out));
    detail::check_output_finite(r, "sqrt");
    auto ap = a.ptr(), rp = r.ptr();
    record_op("sqrt", {a}, r, [ap, rp] {
        const auto& go = rp->grad;
        if (auto* ga = grad_sink(ap))
            for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] * 0.5 / rp->values[i];
    });
    return r;
}

inline Tensor reshape(const Tensor& a, Shape target) {
    std::int64_t n = shape_numel(target);
    if (n != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(target));
    check_finite(a, "reshape");
    Tensor r = Tensor::from_values(std::move(target), a.values());
    auto ap = a.ptr(), rp = r.ptr();
    record_op("reshape", {a}, r, [ap, rp] {
        const auto& go = rp->grad;
        if (auto* ga = grad_sink(ap))
            for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
    });
    return r;
}

inline Tensor sum(const Tensor& a) {
    check_finite(a, "sum");
    double s = 0.0;
    for (double v : a.values()) s += v;
    Tensor r = Tensor::scalar(s);
    auto ap = a.ptr(), rp = r.ptr();
    record_op("sum", {a}, r, [ap, rp] {
        double go = rp->grad[0];
        if (auto* ga = grad_sink(ap))
            for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += go;
    });
    return r;
}

inline Tensor mean(const Tensor& a) {
    check_finite(a, "mean");
    double s = 0.0;
    for (double v : a.values()) s += v;
    double inv = 1.0 / static_cast<double>(a.numel());
    Tensor r = Tensor::scalar(s * inv);
    auto ap = a.ptr(), rp = r.ptr();
    record_op("mean", {a}, r, [ap, rp, inv] {
        double go = rp->grad[0] * inv;
        if (auto* ga = grad_sink(ap))
            for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += go;
    });
    return r;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank("matmul", a, 2);
    detail::require_rank("matmul", b, 2);
    const int m = a.shape()[0], k = a.shape()[1];
    const int k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    check_finite(a, "matmul");
    check_finite(b, "matmul");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            double aip = av[static_cast<std::size_t>(i) * k + p];
            if (aip == 0.0) continue;
            const double* brow = &bv[static_cast<std::size_t>(p) * n];
            double* orow = &out[static_cast<std::size_t>(i) * n];
            for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    Tensor r = Tensor::from_values({m, n}, std::move(out));
    auto ap = a.ptr(), bp = b.ptr(), rp = r.ptr();
    record_op("matmul", {a, b}, r, [ap, bp, rp, m, k, n] {
        const auto& go = rp->grad;
        if (auto* ga = grad_sink(ap)) {
            // dA = dOut * B^T
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* grow = &go[static_cast<std::size_t>(i) * n];
                    const double* brow = &bp->values[static_cast<std::size_t>(p) * n];
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    (*ga)[static_cast<std::size_t>(i) * k + p] += acc;
                }
        }
        if (auto* gb = grad_sink(bp)) {
            // dB = A^T * dOut, accumulated row-wise so both factors stream contiguously
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double aip = ap->values[static_cast<std::size_t>(i) * k + p];
                    if (aip == 0.0) continue;
                    const double* grow = &go[static_cast<std::size_t>(i) * n];
                    double* gbrow = &(*gb)[static_cast<std::size_t>(p) * n];
                    for (int j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                }
        }
    });
    return r;
}

namespace detail {

// First index t in [0, limit_out) with t*stride - pad + offset >= 0.
inline int conv_span_lo(int pad, int offset, int stride) {
    int d = pad - offset;
    return d > 0 ? (d + stride - 1) / stride : 0;
}

// One past the last index t with t*stride - pad + offset < limit_in, capped at limit_out.
inline int conv_span_hi(int limit_in, int pad, int offset, int stride, int limit_out) {
    int num = limit_in - 1 + pad - offset;
    if (num < 0) return 0;
    int hi = num / stride + 1;
    return hi < limit_out ? hi : limit_out;
}

// cols[(c,u,v),(gh,gw)] = src[c, gh*stride - pad + u, gw*stride - pad + v], zero outside.
// src is one sample [C, src_h, src_w]; the grid is the set of kernel placements.
inline void im2col_gather(const double* src, int C, int src_h, int src_w, int kh, int kw,
                          int stride, int pad, int grid_h, int grid_w, double* cols) {
    const std::size_t M = static_cast<std::size_t>(grid_h) * grid_w;
    std::fill(cols, cols + static_cast<std::size_t>(C) * kh * kw * M, 0.0);
    for (int c = 0; c < C; ++c) {
        const double* sbase = src + static_cast<std::size_t>(c) * src_h * src_w;
        for (int u = 0; u < kh; ++u) {
            const int gh_lo = conv_span_lo(pad, u, stride);
            const int gh_hi = conv_span_hi(src_h, pad, u, stride, grid_h);
            for (int v = 0; v < kw; ++v) {
                const int gw_lo = conv_span_lo(pad, v, stride);
                const int gw_hi = conv_span_hi(src_w, pad, v, stride, grid_w);
                double* crow = cols + ((static_cast<std::size_t>(c) * kh + u) * kw + v) * M;
                for (int gh = gh_lo; gh < gh_hi; ++gh) {
                    const double* srow = sbase + (gh * stride - pad + u) * src_w - pad + v;
                    double* cdst = crow + static_cast<std::size_t>(gh) * grid_w;
                    if (stride == 1)
                        for (int g = gw_lo; g < gw_hi; ++g) cdst[g] = srow[g];
                    else
                        for (int g = gw_lo; g < gw_hi; ++g) cdst[g] = srow[g * stride];
                }
            }
        }
    }
}

// dst[c, gh*stride - pad + u, gw*stride - pad + v] += cols[(c,u,v),(gh,gw)];
// exact adjoint of im2col_gather, accumulating into dst (one sample [C, dst_h, dst_w]).
inline void col2im_scatter(const double* cols, int C, int dst_h, int dst_w, int kh, int kw,
                           int stride, int pad, int grid_h, int grid_w, double* dst) {
    const std::size_t M = static_cast<std::size_t>(grid_h) * grid_w;
    for (int c = 0; c < C; ++c) {
        double* dbase = dst + static_cast<std::size_t>(c) * dst_h * dst_w;
        for (int u = 0; u < kh; ++u) {
            const int gh_lo = conv_span_lo(pad, u, stride);
            const int gh_hi = conv_span_hi(dst_h, pad, u, stride, grid_h);
            for (int v = 0; v < kw; ++v) {
                const int gw_lo = conv_span_lo(pad, v, stride);
                const int gw_hi = conv_span_hi(dst_w, pad, v, stride, grid_w);
                const double* crow = cols + ((static_cast<std::size_t>(c) * kh + u) * kw + v) * M;
                for (int gh = gh_lo; gh < gh_hi; ++gh) {
                    double* drow = dbase + (gh * stride - pad + u) * dst_w - pad + v;
                    const double* csrc = crow + static_cast<std::size_t>(gh) * grid_w;
                    if (stride == 1)
                        for (int g = gw_lo; g < gw_hi; ++g) drow[g] += csrc[g];
                    else
                        for (int g = gw_lo; g < gw_hi; ++g) drow[g * stride] += csrc[g];
                }
            }
        }
    }
}

// C[R,M] += A[R,K] * B[K,M]; four C rows share each streamed B row.
inline void gemm_accum_axpy(const double* A, const double* B, double* C, int R, int K, int M) {
    int r = 0;
    for (; r + 4 <= R; r += 4) {
        double* c0 = C + static_cast<std::size_t>(r) * M;
        double* c1 = c0 + M;
        double* c2 = c1 + M;
        double* c3 = c2 + M;
        const double* a0 = A + static_cast<std::size_t>(r) * K;
        const double* a1 = a0 + K;
        const double* a2 = a1 + K;
        const double* a3 = a2 + K;
        for (int p = 0; p < K; ++p) {
            const double* brow = B + static_cast<std::size_t>(p) * M;
            const double w0 = a0[p], w1 = a1[p], w2 = a2[p], w3 = a3[p];
            for (int j = 0; j < M; ++j) {
                const double bj = brow[j];
                c0[j] += w0 * bj;
                c1[j] += w1 * bj;
                c2[j] += w2 * bj;
                c3[j] += w3 * bj;
            }
        }
    }
    for (; r < R; ++r) {
        double* crow = C + static_cast<std::size_t>(r) * M;
        const double* arow = A + static_cast<std::size_t>(r) * K;
        for (int p = 0; p < K; ++p) {
            const double w0 = arow[p];
            const double* brow = B + static_cast<std::size_t>(p) * M;
            for (int j = 0; j < M; ++j) crow[j] += w0 * brow[j];
        }
    }
}

// C[R,K] += A[R,M] * B[K,M]^T; four accumulator lanes expose each dot product to SIMD.
inline void gemm_accum_dot(const double* A, const double* B, double* C, int R, int K, int M) {
    for (int r = 0; r < R; ++r) {
        const double* a = A + static_cast<std::size_t>(r) * M;
        double* crow = C + static_cast<std::size_t>(r) * K;
        for (int p = 0; p < K; ++p) {
            const double* b = B + static_cast<std::size_t>(p) * M;
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            int j = 0;
            for (; j + 4 <= M; j += 4) {
                s0 += a[j] * b[j];
                s1 += a[j + 1] * b[j + 1];
                s2 += a[j + 2] * b[j + 2];
                s3 += a[j + 3] * b[j + 3];
            }
            double acc = (s0 + s1) + (s2 + s3);
            for (; j < M; ++j) acc += a[j] * b[j];
            crow[p] += acc;
        }
    }
}

}  // namespace detail

// x: [N, Ci, H, W], w: [Co, Ci, kh, kw] -> [N, Co, Ho, Wo]
inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride = 1, int pad = 0) {
    detail::require_rank("conv2d", x, 4);
    detail::require_rank("conv2d", w, 4);
    if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
    if (pad < 0) throw ValueError("conv2d: pad must be >= 0");
    const int N = x.shape()[0], Ci = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int Co = w.shape()[0], Ciw = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
    if (Ci != Ciw)
        throw ShapeError("conv2d: input channels differ, " + shape_str(x.shape()) +
                         " vs " + shape_str(w.shape()));
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho < 1 || Wo < 1)
        throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " does not fit input " +
                         shape_str(x.shape()));
    check_finite(x, "conv2d");
    check_finite(w, "conv2d");

    const auto& xv = x.values();
    const auto& wv = w.values();
    const int K = Ci * kh * kw;
    const int M = Ho * Wo;
    std::vector<double> out(static_cast<std::size_t>(N) * Co * M, 0.0);
    // Each sample becomes a [Ci*kh*kw, Ho*Wo] patch matrix; the convolution is then a
    // plain product with the [Co, Ci*kh*kw] weight matrix over long contiguous rows.
    {
        std::vector<double> cols(static_cast<std::size_t>(K) * M);
        for (int n = 0; n < N; ++n) {
            detail::im2col_gather(&xv[static_cast<std::size_t>(n) * Ci * H * W], Ci, H, W, kh,
                                  kw, stride, pad, Ho, Wo, cols.data());
            detail::gemm_accum_axpy(wv.data(), cols.data(),
                                    &out[static_cast<std::size_t>(n) * Co * M], Co, K, M);
        }
    }
    Tensor r = Tensor::from_values({N, Co, Ho, Wo}, std::move(out));
    auto xp = x.ptr(), wp = w.ptr(), rp = r.ptr();
    record_op("conv2d", {x, w}, r,
              [xp, wp, rp, N, Ci, H, W, Co, kh, kw, Ho, Wo, stride, pad, K, M] {
                  const auto& go = rp->grad;
                  auto* gx = grad_sink(xp);
                  auto* gw = grad_sink(wp);
                  if (!gx && !gw) return;
                  std::vector<double> cols(gw ? static_cast<std::size_t>(K) * M : 0);
                  std::vector<double> dcols(gx ? static_cast<std::size_t>(K) * M : 0);
                  std::vector<double> wt;
                  if (gx) {
                      // W^T, so the input gradient is an axpy product as well
                      wt.resize(static_cast<std::size_t>(K) * Co);
                      for (int f = 0; f < Co; ++f)
                          for (int p = 0; p < K; ++p)
                              wt[static_cast<std::size_t>(p) * Co + f] =
                                  wp->values[static_cast<std::size_t>(f) * K + p];
                  }
                  for (int n = 0; n < N; ++n) {
                      const double* gon = &go[static_cast<std::size_t>(n) * Co * M];
                      if (gw) {
                          detail::im2col_gather(&xp->values[static_cast<std::size_t>(n) * Ci * H * W],
                                                Ci, H, W, kh, kw, stride, pad, Ho, Wo,
                                                cols.data());
                          detail::gemm_accum_dot(gon, cols.data(), gw->data(), Co, K, M);
                      }
                      if (gx) {
                          std::fill(dcols.begin(), dcols.end(), 0.0);
                          detail::gemm_accum_axpy(wt.data(), gon, dcols.data(), K, Co, M);
                          detail::col2im_scatter(dcols.data(), Ci, H, W, kh, kw, stride, pad,
                                                 Ho, Wo,
                                                 &(*gx)[static_cast<std::size_t>(n) * Ci * H * W]);
                      }
                  }
              });
    return r;
}

// x: [N, Ci, H, W], w: [Ci, Co, kh, kw] -> [N, Co, Ho, Wo] with
// Ho = (H-1)*stride - 2*pad + kh (adjoint of conv2d)
inline Tensor conv2d_transpose(const Tensor& x, const Tensor& w, int stride = 1, int pad = 0) {
    detail::require_rank("conv2d_transpose", x, 4);
    detail::require_rank("conv2d_transpose", w, 4);
    if (stride < 1) throw ValueError("conv2d_transpose: stride must be >= 1");
    if (pad < 0) throw ValueError("conv2d_transpose: pad must be >= 0");
    const int N = x.shape()[0], Ci = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int Ciw = w.shape()[0], Co = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
    if (Ci != Ciw)
        throw ShapeError("conv2d_transpose: input channels differ, " + shape_str(x.shape()) +
                         " vs " + shape_str(w.shape()));
    const int Ho = (H - 1) * stride - 2 * pad + kh;
    const int Wo = (W - 1) * stride - 2 * pad + kw;
    if (Ho < 1 || Wo < 1)
        throw ShapeError("conv2d_transpose: output collapses for input " + shape_str(x.shape()));
    check_finite(x, "conv2d_transpose");
    check_finite(w, "conv2d_transpose");

    const auto& xv = x.values();
    const auto& wv = w.values();
    const int K = Co * kh * kw;
    const int Mx = H * W;
    std::vector<double> out(static_cast<std::size_t>(N) * Co * Ho * Wo, 0.0);
    // Adjoint factorization: expand each sample to a [Co*kh*kw, H*W] column matrix with the
    // transposed weight matrix, then scatter-add the columns into the upsampled output.
    {
        std::vector<double> wt(static_cast<std::size_t>(K) * Ci);
        for (int c = 0; c < Ci; ++c)
            for (int p = 0; p < K; ++p)
                wt[static_cast<std::size_t>(p) * Ci + c] =
                    wv[static_cast<std::size_t>(c) * K + p];
        std::vector<double> cols(static_cast<std::size_t>(K) * Mx);
        for (int n = 0; n < N; ++n) {
            std::fill(cols.begin(), cols.end(), 0.0);
            detail::gemm_accum_axpy(wt.data(), &xv[static_cast<std::size_t>(n) * Ci * Mx],
                                    cols.data(), K, Ci, Mx);
            detail::col2im_scatter(cols.data(), Co, Ho, Wo, kh, kw, stride, pad, H, W,
                                   &out[static_cast<std::size_t>(n) * Co * Ho * Wo]);
        }
    }
    Tensor r = Tensor::from_values({N, Co, Ho, Wo}, std::move(out));
    auto xp = x.ptr(), wp = w.ptr(), rp = r.ptr();
    record_op("conv2d_transpose", {x, w}, r,
              [xp, wp, rp, N, Ci, H, W, Co, kh, kw, Ho, Wo, stride, pad, K, Mx] {
                  const auto& go = rp->grad;
                  auto* gx = grad_sink(xp);
                  auto* gw = grad_sink(wp);
                  if (!gx && !gw) return;
                  std::vector<double> colsg(static_cast<std::size_t>(K) * Mx);
                  for (int n = 0; n < N; ++n) {
                      // colsg[(f,u,v),(hi,wj)] = dOut[f, hi*stride-pad+u, wj*stride-pad+v]
                      detail::im2col_gather(&go[static_cast<std::size_t>(n) * Co * Ho * Wo], Co,
                                            Ho, Wo, kh, kw, stride, pad, H, W, colsg.data());
                      if (gx)
                          detail::gemm_accum_axpy(wp->values.data(), colsg.data(),
                                                  &(*gx)[static_cast<std::size_t>(n) * Ci * Mx],
                                                  Ci, K, Mx);
                      if (gw)
                          detail::gemm_accum_dot(
                              &xp->values[static_cast<std::size_t>(n) * Ci * Mx], colsg.data(),
                              gw->data(), Ci, K, Mx);
                  }
              });
    return r;
}

inline Tensor upsample_nearest2x(const Tensor& x) {
    detail::require_rank("upsample_nearest2x", x, 4);
    check_finite(x, "upsample_nearest2x");
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int Ho = 2 * H, Wo = 2 * W;
    const auto& xv = x.values();
    std::vector<double> out(static_cast<std::size_t>(N) * C * Ho * Wo);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < Ho; ++i)
                for (int j = 0; j < Wo; ++j)
                    out[((static_cast<std::size_t>(n) * C + c) * Ho + i) * Wo + j] =
                        xv[((static_cast<std::size_t>(n) * C + c) * H + i / 2) * W + j / 2];
    Tensor r = Tensor::from_values({N, C, Ho, Wo}, std::move(out));
    auto xp = x.ptr(), rp = r.ptr();
    record_op("upsample_nearest2x", {x}, r, [xp, rp, N, C, H, W, Ho, Wo] {
        const auto& go = rp->grad;
        if (auto* gx = grad_sink(xp))
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int i = 0; i < Ho; ++i)
                        for (int j = 0; j < Wo; ++j)
                            (*gx)[((static_cast<std::size_t>(n) * C + c) * H + i / 2) * W + j / 2] +=
                                go[((static_cast<std::size_t>(n) * C + c) * Ho + i) * Wo + j];
    });
    return r;
}

inline Tensor avgpool2x2(const Tensor& x) {
    detail::require_rank("avgpool2x2", x, 4);
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeError("avgpool2x2: spatial dims must be even, got " + shape_str(x.shape()));
    check_finite(x, "avgpool2x2");
    const int Ho = H / 2, Wo = W / 2;
    const auto& xv = x.values();
    std::vector<double> out(static_cast<std::size_t>(N) * C * Ho * Wo);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < Ho; ++i)
                for (int j = 0; j < Wo; ++j) {
                    std::size_t base = (static_cast<std::size_t>(n) * C + c) * H;
                    double s = xv[(base + 2 * i) * W + 2 * j] + xv[(base + 2 * i) * W + 2 * j + 1] +
                               xv[(base + 2 * i + 1) * W + 2 * j] +
                               xv[(base + 2 * i + 1) * W + 2 * j + 1];
                    out[((static_cast<std::size_t>(n) * C + c) * Ho + i) * Wo + j] = 0.25 * s;
                }
    Tensor r = Tensor::from_values({N, C, Ho, Wo}, std::move(out));
    auto xp = x.ptr(), rp = r.ptr();
    record_op("avgpool2x2", {x}, r, [xp, rp, N, C, H, W, Ho, Wo] {
        const auto& go = rp->grad;
        if (auto* gx = grad_sink(xp))
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int i = 0; i < Ho; ++i)
                        for (int j = 0; j < Wo; ++j) {
                            double g = 0.25 * go[((static_cast<std::size_t>(n) * C + c) * Ho + i) * Wo + j];
                            std::size_t base = (static_cast<std::size_t>(n) * C + c) * H;
                            (*gx)[(base + 2 * i) * W + 2 * j] += g;
                            (*gx)[(base + 2 * i) * W + 2 * j + 1] += g;
                            (*gx)[(base + 2 * i + 1) * W + 2 * j] += g;
                            (*gx)[(base + 2 * i + 1) * W + 2 * j + 1] += g;
                        }
    });
    return r;
}

// mean over every axis except axis 1 (the channel axis); works for [N, C]
// activations and [N, C, H, W] feature maps alike
inline Tensor channel_mean(const Tensor& x) {
    if (x.shape().size() < 2)
        throw ShapeError("channel_mean: need rank >= 2, got " + shape_str(x.shape()));
    check_finite(x, "channel_mean");
    const int N = x.shape()[0], C = x.shape()[1];
    std::int64_t inner = 1;
    for (std::size_t d = 2; d < x.shape().size(); ++d) inner *= x.shape()[d];
    const double inv = 1.0 / static_cast<double>(N * inner);
    const auto& xv = x.values();
    std::vector<double> out(static_cast<std::size_t>(C), 0.0);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* p = &xv[(static_cast<std::size_t>(n) * C + c) * inner];
            double s = 0.0;
            for (std::int64_t k = 0; k < inner; ++k) s += p[k];
            out[c] += s;
        }
    for (int c = 0; c < C; ++c) out[c] *= inv;
    Tensor r = Tensor::from_values({C}, std::move(out));
    auto xp = x.ptr(), rp = r.ptr();
    record_op("channel_mean", {x}, r, [xp, rp, N, C, inner, inv] {
        const auto& go = rp->grad;
        if (auto* gx = grad_sink(xp))
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    double g = go[c] * inv;
                    double* p = &(*gx)[(static_cast<std::size_t>(n) * C + c) * inner];
                    for (std::int64_t k = 0; k < inner; ++k) p[k] += g;
                }
    });
    return r;
}

// v: [C] -> target shape with target[1] == C, replicated over all other axes
inline Tensor broadcast_channel(const Tensor& v, const Shape& target) {
    detail::require_rank("broadcast_channel", v, 1);
    if (target.size() < 2 || target[1] != v.shape()[0])
        throw ShapeError("broadcast_channel: vector " + shape_str(v.shape()) +
                         " does not match channel axis of " + shape_str(target));
    check_finite(v, "broadcast_channel");
    const int N = target[0], C = target[1];
    std::int64_t inner = 1;
    for (std::size_t d = 2; d < target.size(); ++d) inner *= target[d];
    const auto& vv = v.values();
    std::vector<double> out(static_cast<std::size_t>(N) * C * inner);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double* p = &out[(static_cast<std::size_t>(n) * C + c) * inner];
            for (std::int64_t k = 0; k < inner; ++k) p[k] = vv[c];
        }
    Tensor r = Tensor::from_values(target, std::move(out));
    auto vp = v.ptr(), rp = r.ptr();
    record_op("broadcast_channel", {v}, r, [vp, rp, N, C, inner] {
        const auto& go = rp->grad;
        if (auto* gv = grad_sink(vp))
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const double* p = &go[(static_cast<std::size_t>(n) * C + c) * inner];
                    double s = 0.0;
                    for (std::int64_t k = 0; k < inner; ++k) s += p[k];
                    (*gv)[c] += s;
                }
    });
    return r;
}

// Row-wise softmax of logits/tau with max subtraction. Each output row sums
// to 1; fused backward: dx = p * (dy - <dy, p>) / tau.
inline Tensor softmax_with_temperature(const Tensor& logits, double tau) {
    detail::require_rank("softmax_with_temperature", logits, 2);
    if (!(tau > 0.0)) throw ValueError("softmax temperature must be positive");
    check_finite(logits, "softmax_with_temperature");
    const int N = logits.shape()[0], K = logits.shape()[1];
    const auto& lv = logits.values();
    std::vector<double> out(lv.size());
    for (int i = 0; i < N; ++i) {
        const double* row = &lv[static_cast<std::size_t>(i) * K];
        double* orow = &out[static_cast<std::size_t>(i) * K];
        double mx = row[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        double z = 0.0;
        for (int k = 0; k < K; ++k) {
            orow[k] = std::exp((row[k] - mx) / tau);
            z += orow[k];
        }
        for (int k = 0; k < K; ++k) orow[k] /= z;
    }
    Tensor r = Tensor::from_values(logits.shape(), std::move(out));
    auto lp = logits.ptr(), rp = r.ptr();
    record_op("softmax_with_temperature", {logits}, r, [lp, rp, N, K, tau] {
        const auto& go = rp->grad;
        if (auto* gl = grad_sink(lp))
            for (int i = 0; i < N; ++i) {
                const double* p = &rp->values[static_cast<std::size_t>(i) * K];
                const double* g = &go[static_cast<std::size_t>(i) * K];
                double dot = 0.0;
                for (int k = 0; k < K; ++k) dot += g[k] * p[k];
                for (int k = 0; k < K; ++k)
                    (*gl)[static_cast<std::size_t>(i) * K + k] += p[k] * (g[k] - dot) / tau;
            }
    });
    return r;
}

// Row-wise log(softmax(logits/tau)); fused backward: dx = (dy - exp(y) * sum(dy)) / tau.
inline Tensor log_softmax_with_temperature(const Tensor& logits, double tau) {
    detail::require_rank("log_softmax_with_temperature", logits, 2);
    if (!(tau > 0.0)) throw ValueError("softmax temperature must be positive");
    check_finite(logits, "log_softmax_with_temperature");
    const int N = logits.shape()[0], K = logits.shape()[1];
    const auto& lv = logits.values();
    std::vector<double> out(lv.size());
    for (int i = 0; i < N; ++i) {
        const double* row = &lv[static_cast<std::size_t>(i) * K];
        double* orow = &out[static_cast<std::size_t>(i) * K];
        double mx = row[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        double z = 0.0;
        for (int k = 0; k < K; ++k) z += std::exp((row[k] - mx) / tau);
        double lz = std::log(z);
        for (int k = 0; k < K; ++k) orow[k] = (row[k] - mx) / tau - lz;
    }
    Tensor r = Tensor::from_values(logits.shape(), std::move(out));
    auto lp = logits.ptr(), rp = r.ptr();
    record_op("log_softmax_with_temperature", {logits}, r, [lp, rp, N, K, tau] {
        const auto& go = rp->grad;
        if (auto* gl = grad_sink(lp))
            for (int i = 0; i < N; ++i) {
                const double* y = &rp->values[static_cast<std::size_t>(i) * K];
                const double* g = &go[static_cast<std::size_t>(i) * K];
                double gs = 0.0;
                for (int k = 0; k < K; ++k) gs += g[k];
                for (int k = 0; k < K; ++k)
                    (*gl)[static_cast<std::size_t>(i) * K + k] += (g[k] - std::exp(y[k]) * gs) / tau;
            }
    });
    return r;
}

// -(1/N) * sum_i logp[i, labels[i]]
inline Tensor nll_from_log_probs(const Tensor& logp, const std::vector<int>& labels) {
    detail::require_rank("nll_from_log_probs", logp, 2);
    const int N = logp.shape()[0], K = logp.shape()[1];
    if (static_cast<int>(labels.size()) != N)
        throw ShapeError("nll_from_log_probs: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(N));
    for (int y : labels)
        if (y < 0 || y >= K)
            throw ValueError("label " + std::to_string(y) + " out of range [0, " +
                             std::to_string(K) + ")");
    check_finite(logp, "nll_from_log_probs");
    const auto& lv = logp.values();
    double s = 0.0;
    for (int i = 0; i < N; ++i) s -= lv[static_cast<std::size_t>(i) * K + labels[i]];
    Tensor r = Tensor::scalar(s / N);
    auto lp = logp.ptr(), rp = r.ptr();
    record_op("nll_from_log_probs", {logp}, r, [lp, rp, labels, N, K] {
        double go = rp->grad[0];
        if (auto* gl = grad_sink(lp))
            for (int i = 0; i < N; ++i)
                (*gl)[static_cast<std::size_t>(i) * K + labels[i]] -= go / N;
    });
    return r;
}

}  // namespace ddad
