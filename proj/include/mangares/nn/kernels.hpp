#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mangares/image.hpp"  // reflect_index

namespace mr::nn::kern {

// Compute kernels come in _serial/_omp pairs. Both variants drive the same
// per-slice helper in the same order, and the OpenMP loops only split across
// outputs owned by a single iteration, so the two produce bitwise-identical
// results; tests and the benchmark target rely on that. The helpers are
// noinline+noclone so both callers run one shared instantiation — separate
// inlined or constprop copies let FP contraction fuse differently per caller.

// ---------------------------------------------------------------- conv2d --
// NCHW convolution with reflect padding.
// out[n,co,oy,ox], oy in [0, (H + 2p - K)/s + 1).
//
// All three kernels iterate ox innermost over whole rows so the compiler can
// vectorize: for a fixed tap (ci,ky,kx) the row update is an independent
// elementwise multiply-add. Reflected border columns are peeled off into
// scalar prologue/epilogue loops; [lo,hi) is the ox range whose input column
// ox*stride + kx - pad lands inside [0,W).

inline void conv2d_span(int base, int stride, int W, int Wo, int* lo, int* hi) {
    *lo = base < 0 ? std::min(Wo, (-base + stride - 1) / stride) : 0;
    *hi = W - 1 - base < 0 ? *lo : std::clamp((W - 1 - base) / stride + 1, *lo, Wo);
}

template <typename T>
[[gnu::noinline, gnu::noclone]] inline void conv2d_fwd_plane(const T* in, const T* w, const T* bias, T* out,
                             int Ci, int H, int W, int Co, int K, int stride,
                             int pad, int Ho, int Wo, int n, int co) {
    T* op = out + (static_cast<size_t>(n) * Co + co) * Ho * Wo;
    const T b = bias ? bias[co] : T(0);
    for (int oy = 0; oy < Ho; ++oy) {
        T* orow = op + static_cast<size_t>(oy) * Wo;
        for (int ox = 0; ox < Wo; ++ox) orow[ox] = b;
        const int y0 = oy * stride - pad;
        for (int ci = 0; ci < Ci; ++ci) {
            const T* inp = in + (static_cast<size_t>(n) * Ci + ci) * H * W;
            const T* wp = w + (static_cast<size_t>(co) * Ci + ci) * K * K;
            for (int ky = 0; ky < K; ++ky) {
                const T* irow = inp + static_cast<size_t>(reflect_index(y0 + ky, H)) * W;
                for (int kx = 0; kx < K; ++kx) {
                    const T wv = wp[ky * K + kx];
                    const int base = kx - pad;
                    int lo, hi;
                    conv2d_span(base, stride, W, Wo, &lo, &hi);
                    for (int ox = 0; ox < lo; ++ox)
                        orow[ox] += wv * irow[reflect_index(ox * stride + base, W)];
                    if (stride == 1) {
                        for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox + base];
                    } else {
                        for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox * stride + base];
                    }
                    for (int ox = hi; ox < Wo; ++ox)
                        orow[ox] += wv * irow[reflect_index(ox * stride + base, W)];
                }
            }
        }
    }
}

template <typename T>
void conv2d_fwd_serial(const T* in, const T* w, const T* bias, T* out, int N,
                       int Ci, int H, int W, int Co, int K, int stride, int pad,
                       int Ho, int Wo) {
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co)
            conv2d_fwd_plane(in, w, bias, out, Ci, H, W, Co, K, stride, pad, Ho, Wo, n, co);
}

template <typename T>
void conv2d_fwd_omp(const T* in, const T* w, const T* bias, T* out, int N,
                    int Ci, int H, int W, int Co, int K, int stride, int pad,
                    int Ho, int Wo) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co)
            conv2d_fwd_plane(in, w, bias, out, Ci, H, W, Co, K, stride, pad, Ho, Wo, n, co);
}

// Accumulates into gin (callers zero or reuse autograd buffers). Each (n,ci)
// slice is written by exactly one iteration, so the omp split is race-free.
template <typename T>
[[gnu::noinline, gnu::noclone]] inline void conv2d_bwd_input_slice(const T* gout, const T* w, T* gin, int Ci,
                                   int H, int W, int Co, int K, int stride,
                                   int pad, int Ho, int Wo, int n, int ci) {
    T* gp = gin + (static_cast<size_t>(n) * Ci + ci) * H * W;
    for (int co = 0; co < Co; ++co) {
        const T* op = gout + (static_cast<size_t>(n) * Co + co) * Ho * Wo;
        const T* wp = w + (static_cast<size_t>(co) * Ci + ci) * K * K;
        for (int oy = 0; oy < Ho; ++oy) {
            const T* grow = op + static_cast<size_t>(oy) * Wo;
            const int y0 = oy * stride - pad;
            for (int ky = 0; ky < K; ++ky) {
                T* gr = gp + static_cast<size_t>(reflect_index(y0 + ky, H)) * W;
                for (int kx = 0; kx < K; ++kx) {
                    const T wv = wp[ky * K + kx];
                    const int base = kx - pad;
                    int lo, hi;
                    conv2d_span(base, stride, W, Wo, &lo, &hi);
                    for (int ox = 0; ox < lo; ++ox)
                        gr[reflect_index(ox * stride + base, W)] += wv * grow[ox];
                    if (stride == 1) {
                        for (int ox = lo; ox < hi; ++ox) gr[ox + base] += wv * grow[ox];
                    } else {
                        for (int ox = lo; ox < hi; ++ox) gr[ox * stride + base] += wv * grow[ox];
                    }
                    for (int ox = hi; ox < Wo; ++ox)
                        gr[reflect_index(ox * stride + base, W)] += wv * grow[ox];
                }
            }
        }
    }
}

template <typename T>
void conv2d_bwd_input_serial(const T* gout, const T* w, T* gin, int N, int Ci,
                             int H, int W, int Co, int K, int stride, int pad,
                             int Ho, int Wo) {
    for (int n = 0; n < N; ++n)
        for (int ci = 0; ci < Ci; ++ci)
            conv2d_bwd_input_slice(gout, w, gin, Ci, H, W, Co, K, stride, pad, Ho, Wo, n, ci);
}

template <typename T>
void conv2d_bwd_input_omp(const T* gout, const T* w, T* gin, int N, int Ci,
                          int H, int W, int Co, int K, int stride, int pad,
                          int Ho, int Wo) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n)
        for (int ci = 0; ci < Ci; ++ci)
            conv2d_bwd_input_slice(gout, w, gin, Ci, H, W, Co, K, stride, pad, Ho, Wo, n, ci);
}

// Accumulates into gw/gb. Each co slice is owned by one iteration. The tap
// gradients are reductions over (n,oy,ox); a bank of independent partial sums
// keeps the inner loop vectorizable without reassociating a single chain.
template <typename T>
[[gnu::noinline, gnu::noclone]] inline void conv2d_bwd_weight_slice(const T* gout, const T* in, T* gw, T* gb,
                                    int N, int Ci, int H, int W, int Co, int K,
                                    int stride, int pad, int Ho, int Wo, int co) {
    constexpr int kLanes = 16;
    T* gwp = gw + static_cast<size_t>(co) * Ci * K * K;

    if (gb) {
        T lanes[kLanes] = {};
        T tail = T(0);
        for (int n = 0; n < N; ++n) {
            const T* op = gout + (static_cast<size_t>(n) * Co + co) * Ho * Wo;
            const size_t total = static_cast<size_t>(Ho) * Wo;
            size_t i = 0;
            for (; i + kLanes <= total; i += kLanes)
                for (int l = 0; l < kLanes; ++l) lanes[l] += op[i + l];
            for (; i < total; ++i) tail += op[i];
        }
        for (int l = 0; l < kLanes; ++l) tail += lanes[l];
        gb[co] += tail;
    }

    for (int ci = 0; ci < Ci; ++ci) {
        const T* inb = in + static_cast<size_t>(ci) * H * W;
        T* gk = gwp + static_cast<size_t>(ci) * K * K;
        for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx) {
                const int base = kx - pad;
                int lo, hi;
                conv2d_span(base, stride, W, Wo, &lo, &hi);
                T lanes[kLanes] = {};
                T acc = T(0);
                for (int n = 0; n < N; ++n) {
                    const T* op = gout + (static_cast<size_t>(n) * Co + co) * Ho * Wo;
                    const T* inp = inb + static_cast<size_t>(n) * Ci * H * W;
                    for (int oy = 0; oy < Ho; ++oy) {
                        const T* grow = op + static_cast<size_t>(oy) * Wo;
                        const T* irow =
                            inp +
                            static_cast<size_t>(reflect_index(oy * stride - pad + ky, H)) * W;
                        for (int ox = 0; ox < lo; ++ox)
                            acc += grow[ox] * irow[reflect_index(ox * stride + base, W)];
                        int ox = lo;
                        if (stride == 1) {
                            for (; ox + kLanes <= hi; ox += kLanes)
                                for (int l = 0; l < kLanes; ++l)
                                    lanes[l] += grow[ox + l] * irow[ox + l + base];
                            for (; ox < hi; ++ox) acc += grow[ox] * irow[ox + base];
                        } else {
                            for (; ox + kLanes <= hi; ox += kLanes)
                                for (int l = 0; l < kLanes; ++l)
                                    lanes[l] += grow[ox + l] * irow[(ox + l) * stride + base];
                            for (; ox < hi; ++ox) acc += grow[ox] * irow[ox * stride + base];
                        }
                        for (ox = std::max(hi, lo); ox < Wo; ++ox)
                            acc += grow[ox] * irow[reflect_index(ox * stride + base, W)];
                    }
                }
                for (int l = 0; l < kLanes; ++l) acc += lanes[l];
                gk[ky * K + kx] += acc;
            }
    }
}

template <typename T>
void conv2d_bwd_weight_serial(const T* gout, const T* in, T* gw, T* gb, int N,
                              int Ci, int H, int W, int Co, int K, int stride,
                              int pad, int Ho, int Wo) {
    for (int co = 0; co < Co; ++co)
        conv2d_bwd_weight_slice(gout, in, gw, gb, N, Ci, H, W, Co, K, stride, pad, Ho, Wo, co);
}

template <typename T>
void conv2d_bwd_weight_omp(const T* gout, const T* in, T* gw, T* gb, int N,
                           int Ci, int H, int W, int Co, int K, int stride,
                           int pad, int Ho, int Wo) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < Co; ++co)
        conv2d_bwd_weight_slice(gout, in, gw, gb, N, Ci, H, W, Co, K, stride, pad, Ho, Wo, co);
}

// ------------------------------------------------------- convex upsample --
// Target pixel (ty,tx) maps to source coordinate (ty*H/Ht, tx*W/Wt); the 3x3
// neighborhood around the nearest source pixel is blended with softmax
// weights over 9 logit channels bilinearly sampled at that coordinate.

template <typename T>
inline void convex_weights(const T* logits, int H, int W, size_t plane, double sy,
                           double sx, T* alpha) {
    const int fy = static_cast<int>(std::floor(sy)), fx = static_cast<int>(std::floor(sx));
    const T wy1 = static_cast<T>(sy - fy), wx1 = static_cast<T>(sx - fx);
    const T wy0 = T(1) - wy1, wx0 = T(1) - wx1;
    const int y0 = reflect_index(fy, H), y1 = reflect_index(fy + 1, H);
    const int x0 = reflect_index(fx, W), x1 = reflect_index(fx + 1, W);
    T mx = T(0);
    for (int k = 0; k < 9; ++k) {
        const T* lp = logits + (plane * 9 + k) * H * W;
        alpha[k] = wy0 * (wx0 * lp[static_cast<size_t>(y0) * W + x0] +
                          wx1 * lp[static_cast<size_t>(y0) * W + x1]) +
                   wy1 * (wx0 * lp[static_cast<size_t>(y1) * W + x0] +
                          wx1 * lp[static_cast<size_t>(y1) * W + x1]);
        if (k == 0 || alpha[k] > mx) mx = alpha[k];
    }
    T sum = T(0);
    for (int k = 0; k < 9; ++k) {
        alpha[k] = std::exp(alpha[k] - mx);
        sum += alpha[k];
    }
    for (int k = 0; k < 9; ++k) alpha[k] /= sum;
}

template <typename T>
inline void convex_up_cell(const T* feat, const T* logits, T* out, int C, int H,
                           int W, int Ht, int Wt, int n, int ty, int tx) {
    const double sy = static_cast<double>(ty) * H / Ht;
    const double sx = static_cast<double>(tx) * W / Wt;
    T alpha[9];
    convex_weights(logits, H, W, static_cast<size_t>(n), sy, sx, alpha);
    const int cy = static_cast<int>(std::floor(sy + 0.5));
    const int cx = static_cast<int>(std::floor(sx + 0.5));
    int idx[9];
    for (int dy = -1, k = 0; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx, ++k)
            idx[k] = reflect_index(cy + dy, H) * W + reflect_index(cx + dx, W);
    for (int c = 0; c < C; ++c) {
        const T* fp = feat + (static_cast<size_t>(n) * C + c) * H * W;
        T acc = T(0);
        for (int k = 0; k < 9; ++k) acc += alpha[k] * fp[idx[k]];
        out[(static_cast<size_t>(n) * C + c) * Ht * Wt + static_cast<size_t>(ty) * Wt + tx] = acc;
    }
}

template <typename T>
void convex_up_fwd_serial(const T* feat, const T* logits, T* out, int N, int C,
                          int H, int W, int Ht, int Wt) {
    for (int n = 0; n < N; ++n)
        for (int ty = 0; ty < Ht; ++ty)
            for (int tx = 0; tx < Wt; ++tx)
                convex_up_cell(feat, logits, out, C, H, W, Ht, Wt, n, ty, tx);
}

template <typename T>
void convex_up_fwd_omp(const T* feat, const T* logits, T* out, int N, int C,
                       int H, int W, int Ht, int Wt) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n)
        for (int ty = 0; ty < Ht; ++ty)
            for (int tx = 0; tx < Wt; ++tx)
                convex_up_cell(feat, logits, out, C, H, W, Ht, Wt, n, ty, tx);
}

// Backward scatters into overlapping source cells, so parallelism stays on
// the batch axis only; per sample the order is fixed.
template <typename T>
inline void convex_up_bwd_sample(const T* gout, const T* feat, const T* logits,
                                 T* gfeat, T* glogits, int C, int H, int W,
                                 int Ht, int Wt, int n) {
    for (int ty = 0; ty < Ht; ++ty)
        for (int tx = 0; tx < Wt; ++tx) {
            const double sy = static_cast<double>(ty) * H / Ht;
            const double sx = static_cast<double>(tx) * W / Wt;
            T alpha[9];
            convex_weights(logits, H, W, static_cast<size_t>(n), sy, sx, alpha);
            const int cy = static_cast<int>(std::floor(sy + 0.5));
            const int cx = static_cast<int>(std::floor(sx + 0.5));
            int idx[9];
            for (int dy = -1, k = 0; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx, ++k)
                    idx[k] = reflect_index(cy + dy, H) * W + reflect_index(cx + dx, W);

            T dalpha[9] = {};
            for (int c = 0; c < C; ++c) {
                const size_t fbase = (static_cast<size_t>(n) * C + c) * H * W;
                const T g = gout[(static_cast<size_t>(n) * C + c) * Ht * Wt +
                                 static_cast<size_t>(ty) * Wt + tx];
                for (int k = 0; k < 9; ++k) {
                    dalpha[k] += g * feat[fbase + idx[k]];
                    if (gfeat) gfeat[fbase + idx[k]] += alpha[k] * g;
                }
            }
            if (!glogits) continue;

            T dot = T(0);
            for (int k = 0; k < 9; ++k) dot += alpha[k] * dalpha[k];
            const int fy = static_cast<int>(std::floor(sy)), fx = static_cast<int>(std::floor(sx));
            const T wy1 = static_cast<T>(sy - fy), wx1 = static_cast<T>(sx - fx);
            const T wy0 = T(1) - wy1, wx0 = T(1) - wx1;
            const int y0 = reflect_index(fy, H), y1 = reflect_index(fy + 1, H);
            const int x0 = reflect_index(fx, W), x1 = reflect_index(fx + 1, W);
            for (int k = 0; k < 9; ++k) {
                const T dl = alpha[k] * (dalpha[k] - dot);
                T* lp = glogits + (static_cast<size_t>(n) * 9 + k) * H * W;
                lp[static_cast<size_t>(y0) * W + x0] += wy0 * wx0 * dl;
                lp[static_cast<size_t>(y0) * W + x1] += wy0 * wx1 * dl;
                lp[static_cast<size_t>(y1) * W + x0] += wy1 * wx0 * dl;
                lp[static_cast<size_t>(y1) * W + x1] += wy1 * wx1 * dl;
            }
        }
}

template <typename T>
void convex_up_bwd_serial(const T* gout, const T* feat, const T* logits,
                          T* gfeat, T* glogits, int N, int C, int H, int W,
                          int Ht, int Wt) {
    for (int n = 0; n < N; ++n)
        convex_up_bwd_sample(gout, feat, logits, gfeat, glogits, C, H, W, Ht, Wt, n);
}

template <typename T>
void convex_up_bwd_omp(const T* gout, const T* feat, const T* logits, T* gfeat,
                       T* glogits, int N, int C, int H, int W, int Ht, int Wt) {
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n)
        convex_up_bwd_sample(gout, feat, logits, gfeat, glogits, C, H, W, Ht, Wt, n);
}

// ------------------------------------------------------ nearest upsample --
// Same coordinate map as the convex path (one-hot center logits reduce to
// exactly this operator).

inline int nearest_src(int t, int src, int dst) {
    const double s = static_cast<double>(t) * src / dst;
    return reflect_index(static_cast<int>(std::floor(s + 0.5)), src);
}

template <typename T>
void nearest_up_fwd(const T* in, T* out, int N, int C, int H, int W, int Ht, int Wt) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* ip = in + (static_cast<size_t>(n) * C + c) * H * W;
            T* op = out + (static_cast<size_t>(n) * C + c) * Ht * Wt;
            for (int ty = 0; ty < Ht; ++ty) {
                const int iy = nearest_src(ty, H, Ht);
                for (int tx = 0; tx < Wt; ++tx)
                    op[static_cast<size_t>(ty) * Wt + tx] =
                        ip[static_cast<size_t>(iy) * W + nearest_src(tx, W, Wt)];
            }
        }
}

template <typename T>
void nearest_up_bwd(const T* gout, T* gin, int N, int C, int H, int W, int Ht, int Wt) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* op = gout + (static_cast<size_t>(n) * C + c) * Ht * Wt;
            T* ip = gin + (static_cast<size_t>(n) * C + c) * H * W;
            for (int ty = 0; ty < Ht; ++ty) {
                const int iy = nearest_src(ty, H, Ht);
                for (int tx = 0; tx < Wt; ++tx)
                    ip[static_cast<size_t>(iy) * W + nearest_src(tx, W, Wt)] +=
                        op[static_cast<size_t>(ty) * Wt + tx];
            }
        }
}

// --------------------------------------------------------------- box blur --
// Separable per-channel box mean with reflect edges; used by the screen
// embedding's pooling stage. Slices are independent, so the omp split over
// (n,c) is race-free and bitwise stable.

template <typename T>
inline void box_blur_slice(const T* in, T* tmp, T* out, int H, int W, int r) {
    const T inv = T(1) / static_cast<T>(2 * r + 1);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            T acc = T(0);
            for (int d = -r; d <= r; ++d) acc += in[static_cast<size_t>(y) * W + reflect_index(x + d, W)];
            tmp[static_cast<size_t>(y) * W + x] = acc * inv;
        }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            T acc = T(0);
            for (int d = -r; d <= r; ++d) acc += tmp[static_cast<size_t>(reflect_index(y + d, H)) * W + x];
            out[static_cast<size_t>(y) * W + x] = acc * inv;
        }
}

// Adjoint: scatter rows then columns (reflect gather transposed).
template <typename T>
inline void box_blur_adjoint_slice(const T* gout, T* tmp, T* gin, int H, int W, int r) {
    const T inv = T(1) / static_cast<T>(2 * r + 1);
    std::fill(tmp, tmp + static_cast<size_t>(H) * W, T(0));
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const T g = gout[static_cast<size_t>(y) * W + x] * inv;
            for (int d = -r; d <= r; ++d) tmp[static_cast<size_t>(reflect_index(y + d, H)) * W + x] += g;
        }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const T g = tmp[static_cast<size_t>(y) * W + x] * inv;
            for (int d = -r; d <= r; ++d) gin[static_cast<size_t>(y) * W + reflect_index(x + d, W)] += g;
        }
}

template <typename T>
void box_blur_fwd(const T* in, T* out, int N, int C, int H, int W, int win) {
    const int r = win / 2;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            std::vector<T> tmp(static_cast<size_t>(H) * W);
            const size_t base = (static_cast<size_t>(n) * C + c) * H * W;
            box_blur_slice(in + base, tmp.data(), out + base, H, W, r);
        }
}

template <typename T>
void box_blur_bwd(const T* gout, T* gin, int N, int C, int H, int W, int win) {
    const int r = win / 2;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            std::vector<T> tmp(static_cast<size_t>(H) * W);
            const size_t base = (static_cast<size_t>(n) * C + c) * H * W;
            box_blur_adjoint_slice(gout + base, tmp.data(), gin + base, H, W, r);
        }
}

}  // namespace mr::nn::kern
