#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradweave/tensor.hpp"

// Forward/backward kernels for the op set the model needs. Inner loops run
// over the innermost (width) axis with unit stride so the compiler can
// vectorize them.
namespace gradweave::kernels {

inline int conv_out_extent(int in, int k, int stride, int pad, const char* axis) {
    int span = in + 2 * pad - k;
    if (span < 0)
        throw std::invalid_argument(std::string("conv2d: kernel larger than padded input on ") + axis);
    if (span % stride != 0)
        throw std::invalid_argument(std::string("conv2d: non-exact output extent on ") + axis);
    return span / stride + 1;
}

// Copies one channel into a zero-padded scratch plane.
template <typename T>
void pad_plane(const T* src, int h, int w, int pad_h, int pad_w, T* dst) {
    const int wp = w + 2 * pad_w;
    std::fill(dst, dst + static_cast<size_t>(h + 2 * pad_h) * wp, T(0));
    for (int y = 0; y < h; ++y)
        std::copy(src + static_cast<size_t>(y) * w, src + static_cast<size_t>(y + 1) * w,
                  dst + static_cast<size_t>(y + pad_h) * wp + pad_w);
}

template <typename T>
void pad_plane(const T* src, int h, int w, int pad, T* dst) {
    pad_plane(src, h, w, pad, pad, dst);
}

// Reference implementation, any stride. out must be preallocated [N,F,Ho,Wo].
template <typename T>
void conv2d_forward_generic(const T* in, int n, int c, int h, int w,
                            const T* weight, int f, int kh, int kw,
                            const T* bias, int stride, int pad,
                            T* out, int ho, int wo) {
    const int hp = h + 2 * pad, wp = w + 2 * pad;
    std::vector<T> padded(static_cast<size_t>(hp) * wp);
    const size_t in_plane = static_cast<size_t>(h) * w;
    const size_t out_plane = static_cast<size_t>(ho) * wo;

    for (int ni = 0; ni < n; ++ni) {
        T* out_n = out + static_cast<size_t>(ni) * f * out_plane;
        for (int fi = 0; fi < f; ++fi)
            std::fill(out_n + fi * out_plane, out_n + (fi + 1) * out_plane, bias[fi]);
        for (int ci = 0; ci < c; ++ci) {
            pad_plane(in + (static_cast<size_t>(ni) * c + ci) * in_plane, h, w, pad, padded.data());
            for (int fi = 0; fi < f; ++fi) {
                const T* wk = weight + ((static_cast<size_t>(fi) * c + ci) * kh) * kw;
                T* out_f = out_n + fi * out_plane;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        const T wv = wk[ky * kw + kx];
                        for (int y = 0; y < ho; ++y) {
                            const T* __restrict prow =
                                padded.data() + static_cast<size_t>(y * stride + ky) * wp + kx;
                            T* __restrict orow = out_f + static_cast<size_t>(y) * wo;
                            if (stride == 1) {
                                for (int x = 0; x < wo; ++x) orow[x] += wv * prow[x];
                            } else {
                                for (int x = 0; x < wo; ++x) orow[x] += wv * prow[x * stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

// Stride-1 path. Weights are pre-transposed to [C,kh,kw,F] so the innermost
// loop runs over output channels with unit stride; spatial extents at the
// deep layers are too small to vectorize over. Accumulators live in a stack
// buffer of F values per output pixel.
template <typename T, bool kAccumulate>
void conv2d_forward_s1(const T* in, int n, int c, int h, int w,
                       const T* wt_clast, int f, int kh, int kw,
                       const T* bias, int pad_h, int pad_w, T* out, int ho, int wo) {
    const int hp = h + 2 * pad_h, wp = w + 2 * pad_w;
    std::vector<T> padded(static_cast<size_t>(c) * hp * wp);
    std::vector<T> acc(static_cast<size_t>(f));
    const size_t in_plane = static_cast<size_t>(h) * w;
    const size_t out_plane = static_cast<size_t>(ho) * wo;

    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci)
            pad_plane(in + (static_cast<size_t>(ni) * c + ci) * in_plane, h, w, pad_h, pad_w,
                      padded.data() + static_cast<size_t>(ci) * hp * wp);
        T* out_n = out + static_cast<size_t>(ni) * f * out_plane;
        for (int y = 0; y < ho; ++y) {
            for (int x = 0; x < wo; ++x) {
                T* __restrict a = acc.data();
                if (bias)
                    std::copy(bias, bias + f, a);
                else
                    std::fill(a, a + f, T(0));
                for (int ci = 0; ci < c; ++ci) {
                    const T* pbase = padded.data() + (static_cast<size_t>(ci) * hp + y) * wp + x;
                    const T* wbase = wt_clast + static_cast<size_t>(ci) * kh * kw * f;
                    for (int ky = 0; ky < kh; ++ky) {
                        const T* __restrict prow = pbase + static_cast<size_t>(ky) * wp;
                        const T* __restrict wrow = wbase + static_cast<size_t>(ky) * kw * f;
                        for (int kx = 0; kx < kw; ++kx) {
                            const T v = prow[kx];
                            const T* __restrict wv = wrow + static_cast<size_t>(kx) * f;
                            for (int fi = 0; fi < f; ++fi) a[fi] += v * wv[fi];
                        }
                    }
                }
                T* o = out_n + static_cast<size_t>(y) * wo + x;
                if (kAccumulate)
                    for (int fi = 0; fi < f; ++fi) o[static_cast<size_t>(fi) * out_plane] += a[fi];
                else
                    for (int fi = 0; fi < f; ++fi) o[static_cast<size_t>(fi) * out_plane] = a[fi];
            }
        }
    }
}

template <typename T>
void conv2d_forward(const T* in, int n, int c, int h, int w,
                    const T* weight, int f, int kh, int kw,
                    const T* bias, int stride, int pad,
                    T* out, int ho, int wo) {
    if (stride != 1) {
        conv2d_forward_generic(in, n, c, h, w, weight, f, kh, kw, bias, stride, pad, out, ho, wo);
        return;
    }
    if (c <= 4 && wo >= 16) {
        // Few input channels: vectorize along output rows instead.
        const int hp = h + 2 * pad, wp = w + 2 * pad;
        std::vector<T> padded(static_cast<size_t>(c) * hp * wp);
        const size_t in_plane = static_cast<size_t>(h) * w;
        const size_t out_plane = static_cast<size_t>(ho) * wo;
        for (int ni = 0; ni < n; ++ni) {
            for (int ci = 0; ci < c; ++ci)
                pad_plane(in + (static_cast<size_t>(ni) * c + ci) * in_plane, h, w, pad,
                          padded.data() + static_cast<size_t>(ci) * hp * wp);
            for (int fi = 0; fi < f; ++fi) {
                T* oplane = out + (static_cast<size_t>(ni) * f + fi) * out_plane;
                std::fill(oplane, oplane + out_plane, bias ? bias[fi] : T(0));
                for (int ci = 0; ci < c; ++ci) {
                    const T* pplane = padded.data() + static_cast<size_t>(ci) * hp * wp;
                    const T* wk = weight + ((static_cast<size_t>(fi) * c + ci) * kh) * kw;
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const T wv = wk[ky * kw + kx];
                            for (int y = 0; y < ho; ++y) {
                                const T* __restrict prow =
                                    pplane + static_cast<size_t>(y + ky) * wp + kx;
                                T* __restrict orow = oplane + static_cast<size_t>(y) * wo;
                                for (int x = 0; x < wo; ++x) orow[x] += wv * prow[x];
                            }
                        }
                }
            }
        }
        return;
    }
    std::vector<T> wt(static_cast<size_t>(c) * kh * kw * f);
    for (int fi = 0; fi < f; ++fi)
        for (int ci = 0; ci < c; ++ci)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx)
                    wt[((static_cast<size_t>(ci) * kh + ky) * kw + kx) * f + fi] =
                        weight[((static_cast<size_t>(fi) * c + ci) * kh + ky) * kw + kx];
    conv2d_forward_s1<T, false>(in, n, c, h, w, wt.data(), f, kh, kw, bias, pad, pad, out, ho, wo);
}

// Reference backward, any stride. Accumulates into gin/gweight/gbias.
// gin may be null when the input gradient is not needed.
template <typename T>
void conv2d_backward_generic(const T* in, int n, int c, int h, int w,
                             const T* weight, int f, int kh, int kw,
                             int stride, int pad,
                             const T* gout, int ho, int wo,
                             T* gin, T* gweight, T* gbias) {
    const int hp = h + 2 * pad, wp = w + 2 * pad;
    std::vector<T> padded(static_cast<size_t>(hp) * wp);
    std::vector<T> gpadded(gin ? static_cast<size_t>(hp) * wp : 0);
    const size_t in_plane = static_cast<size_t>(h) * w;
    const size_t out_plane = static_cast<size_t>(ho) * wo;

    for (int ni = 0; ni < n; ++ni) {
        const T* gout_n = gout + static_cast<size_t>(ni) * f * out_plane;
        for (int fi = 0; fi < f; ++fi) {
            const T* g = gout_n + fi * out_plane;
            T acc = 0;
            for (size_t i = 0; i < out_plane; ++i) acc += g[i];
            gbias[fi] += acc;
        }
        for (int ci = 0; ci < c; ++ci) {
            pad_plane(in + (static_cast<size_t>(ni) * c + ci) * in_plane, h, w, pad, padded.data());
            if (gin) std::fill(gpadded.begin(), gpadded.end(), T(0));
            for (int fi = 0; fi < f; ++fi) {
                const T* wk = weight + ((static_cast<size_t>(fi) * c + ci) * kh) * kw;
                T* gwk = gweight + ((static_cast<size_t>(fi) * c + ci) * kh) * kw;
                const T* gout_f = gout_n + fi * out_plane;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        const T wv = wk[ky * kw + kx];
                        T gw = 0;
                        for (int y = 0; y < ho; ++y) {
                            const T* __restrict prow =
                                padded.data() + static_cast<size_t>(y * stride + ky) * wp + kx;
                            T* __restrict gprow =
                                gin ? gpadded.data() + static_cast<size_t>(y * stride + ky) * wp + kx
                                    : nullptr;
                            const T* __restrict grow = gout_f + static_cast<size_t>(y) * wo;
                            if (!gin) {
                                for (int x = 0; x < wo; ++x) gw += grow[x] * prow[x * stride];
                            } else if (stride == 1) {
                                for (int x = 0; x < wo; ++x) {
                                    gw += grow[x] * prow[x];
                                    gprow[x] += wv * grow[x];
                                }
                            } else {
                                for (int x = 0; x < wo; ++x) {
                                    gw += grow[x] * prow[x * stride];
                                    gprow[x * stride] += wv * grow[x];
                                }
                            }
                        }
                        gwk[ky * kw + kx] += gw;
                    }
                }
            }
            if (!gin) continue;
            // un-pad
            T* gin_c = gin + (static_cast<size_t>(ni) * c + ci) * in_plane;
            for (int y = 0; y < h; ++y) {
                const T* __restrict src = gpadded.data() + static_cast<size_t>(y + pad) * wp + pad;
                T* __restrict dst = gin_c + static_cast<size_t>(y) * w;
                for (int x = 0; x < w; ++x) dst[x] += src[x];
            }
        }
    }
}

// Stride-1 backward. The input gradient is itself a stride-1 correlation of
// the output gradient with flipped, channel-transposed weights, so it reuses
// the fast forward kernel. Weight gradients accumulate per-tap outer
// products into a local buffer, vectorized over whichever of C and F is
// wider.
template <typename T>
void conv2d_backward_s1(const T* in, int n, int c, int h, int w,
                        const T* weight, int f, int kh, int kw, int pad,
                        const T* gout, int ho, int wo,
                        T* gin, T* gweight, T* gbias) {
    const int hp = h + 2 * pad, wp = w + 2 * pad;
    const size_t in_plane = static_cast<size_t>(h) * w;
    const size_t out_plane = static_cast<size_t>(ho) * wo;

    for (int ni = 0; ni < n; ++ni) {
        const T* gout_n = gout + static_cast<size_t>(ni) * f * out_plane;
        for (int fi = 0; fi < f; ++fi) {
            const T* g = gout_n + fi * out_plane;
            T acc = 0;
            for (size_t i = 0; i < out_plane; ++i) acc += g[i];
            gbias[fi] += acc;
        }
    }

    if (gin) {
        // gin += gout (*) flip(W)^T
        std::vector<T> wflip(static_cast<size_t>(f) * kh * kw * c);
        for (int fi = 0; fi < f; ++fi)
            for (int ci = 0; ci < c; ++ci)
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx)
                        wflip[((static_cast<size_t>(fi) * kh + ky) * kw + kx) * c + ci] =
                            weight[((static_cast<size_t>(fi) * c + ci) * kh + (kh - 1 - ky)) * kw +
                                   (kw - 1 - kx)];
        conv2d_forward_s1<T, true>(gout, n, f, ho, wo, wflip.data(), c, kh, kw, nullptr,
                                   kh - 1 - pad, kw - 1 - pad, gin, h, w);
    }

    // Few-channel wide layers vectorize better along output rows.
    if (c <= 4 && wo >= 16) {
        std::vector<T> padded(static_cast<size_t>(c) * hp * wp);
        for (int ni = 0; ni < n; ++ni) {
            const T* in_n = in + static_cast<size_t>(ni) * c * in_plane;
            const T* gout_n = gout + static_cast<size_t>(ni) * f * out_plane;
            for (int ci = 0; ci < c; ++ci)
                pad_plane(in_n + static_cast<size_t>(ci) * in_plane, h, w, pad,
                          padded.data() + static_cast<size_t>(ci) * hp * wp);
            for (int fi = 0; fi < f; ++fi) {
                const T* gplane = gout_n + static_cast<size_t>(fi) * out_plane;
                for (int ci = 0; ci < c; ++ci) {
                    const T* pplane = padded.data() + static_cast<size_t>(ci) * hp * wp;
                    T* gwk = gweight + ((static_cast<size_t>(fi) * c + ci) * kh) * kw;
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            T acc = 0;
                            for (int y = 0; y < ho; ++y) {
                                const T* __restrict prow =
                                    pplane + static_cast<size_t>(y + ky) * wp + kx;
                                const T* __restrict grow = gplane + static_cast<size_t>(y) * wo;
                                for (int x = 0; x < wo; ++x) acc += grow[x] * prow[x];
                            }
                            gwk[ky * kw + kx] += acc;
                        }
                }
            }
        }
        return;
    }

    const bool f_inner = f >= c;
    std::vector<T> lgw(static_cast<size_t>(kh) * kw * f * c, T(0));
    std::vector<T> padded(static_cast<size_t>(c) * hp * wp);
    std::vector<T> nhwc(f_inner ? out_plane * static_cast<size_t>(f)
                                : static_cast<size_t>(hp) * wp * c);

    for (int ni = 0; ni < n; ++ni) {
        const T* in_n = in + static_cast<size_t>(ni) * c * in_plane;
        const T* gout_n = gout + static_cast<size_t>(ni) * f * out_plane;
        if (f_inner) {
            // native padded input, gradient transposed to [y][x][f]
            for (int ci = 0; ci < c; ++ci)
                pad_plane(in_n + static_cast<size_t>(ci) * in_plane, h, w, pad,
                          padded.data() + static_cast<size_t>(ci) * hp * wp);
            for (int fi = 0; fi < f; ++fi)
                for (size_t i = 0; i < out_plane; ++i)
                    nhwc[i * f + fi] = gout_n[static_cast<size_t>(fi) * out_plane + i];
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    T* lg_tap = lgw.data() + (static_cast<size_t>(ky) * kw + kx) * f * c;
                    for (int ci = 0; ci < c; ++ci) {
                        const T* pplane = padded.data() + static_cast<size_t>(ci) * hp * wp;
                        T* __restrict lg = lg_tap + static_cast<size_t>(ci) * f;
                        for (int y = 0; y < ho; ++y) {
                            const T* prow = pplane + static_cast<size_t>(y + ky) * wp + kx;
                            const T* __restrict grow = nhwc.data() + static_cast<size_t>(y) * wo * f;
                            for (int x = 0; x < wo; ++x) {
                                const T v = prow[x];
                                const T* __restrict gx = grow + static_cast<size_t>(x) * f;
                                for (int fi = 0; fi < f; ++fi) lg[fi] += v * gx[fi];
                            }
                        }
                    }
                }
        } else {
            // padded input transposed to [y][x][c], native gradient
            std::fill(nhwc.begin(), nhwc.end(), T(0));
            for (int ci = 0; ci < c; ++ci)
                for (int y = 0; y < h; ++y) {
                    const T* src = in_n + (static_cast<size_t>(ci) * h + y) * w;
                    T* dst = nhwc.data() + ((static_cast<size_t>(y + pad)) * wp + pad) * c + ci;
                    for (int x = 0; x < w; ++x) dst[static_cast<size_t>(x) * c] = src[x];
                }
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    T* lg_tap = lgw.data() + (static_cast<size_t>(ky) * kw + kx) * f * c;
                    for (int fi = 0; fi < f; ++fi) {
                        const T* gplane = gout_n + static_cast<size_t>(fi) * out_plane;
                        T* __restrict lg = lg_tap + static_cast<size_t>(fi) * c;
                        for (int y = 0; y < ho; ++y) {
                            const T* __restrict grow = gplane + static_cast<size_t>(y) * wo;
                            const T* prow =
                                nhwc.data() + ((static_cast<size_t>(y + ky)) * wp + kx) * c;
                            for (int x = 0; x < wo; ++x) {
                                const T v = grow[x];
                                const T* __restrict pc = prow + static_cast<size_t>(x) * c;
                                for (int ci = 0; ci < c; ++ci) lg[ci] += v * pc[ci];
                            }
                        }
                    }
                }
        }
    }

    for (int fi = 0; fi < f; ++fi)
        for (int ci = 0; ci < c; ++ci)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    const size_t tap = (static_cast<size_t>(ky) * kw + kx) * f * c;
                    const size_t idx = f_inner ? tap + static_cast<size_t>(ci) * f + fi
                                               : tap + static_cast<size_t>(fi) * c + ci;
                    gweight[((static_cast<size_t>(fi) * c + ci) * kh + ky) * kw + kx] += lgw[idx];
                }
}

template <typename T>
void conv2d_backward(const T* in, int n, int c, int h, int w,
                     const T* weight, int f, int kh, int kw,
                     int stride, int pad,
                     const T* gout, int ho, int wo,
                     T* gin, T* gweight, T* gbias) {
    if (stride == 1 && kh - 1 - pad >= 0 && kw - 1 - pad >= 0)
        conv2d_backward_s1(in, n, c, h, w, weight, f, kh, kw, pad, gout, ho, wo, gin, gweight,
                           gbias);
    else
        conv2d_backward_generic(in, n, c, h, w, weight, f, kh, kw, stride, pad, gout, ho, wo, gin,
                                gweight, gbias);
}

// y[n,o] = sum_i w[o,i] x[n,i] + b[o]
template <typename T>
void dense_forward(const T* in, int n, int din, const T* weight, int dout,
                   const T* bias, T* out) {
    for (int ni = 0; ni < n; ++ni) {
        const T* __restrict x = in + static_cast<size_t>(ni) * din;
        T* __restrict y = out + static_cast<size_t>(ni) * dout;
        for (int o = 0; o < dout; ++o) {
            const T* __restrict wr = weight + static_cast<size_t>(o) * din;
            T acc = bias[o];
            for (int i = 0; i < din; ++i) acc += wr[i] * x[i];
            y[o] = acc;
        }
    }
}

template <typename T>
void dense_backward(const T* in, int n, int din, const T* weight, int dout,
                    const T* gout, T* gin, T* gweight, T* gbias) {
    for (int ni = 0; ni < n; ++ni) {
        const T* __restrict x = in + static_cast<size_t>(ni) * din;
        const T* __restrict g = gout + static_cast<size_t>(ni) * dout;
        T* __restrict gx = gin ? gin + static_cast<size_t>(ni) * din : nullptr;
        for (int o = 0; o < dout; ++o) {
            const T go = g[o];
            gbias[o] += go;
            const T* __restrict wr = weight + static_cast<size_t>(o) * din;
            T* __restrict gwr = gweight + static_cast<size_t>(o) * din;
            if (gx)
                for (int i = 0; i < din; ++i) {
                    gwr[i] += go * x[i];
                    gx[i] += go * wr[i];
                }
            else
                for (int i = 0; i < din; ++i) gwr[i] += go * x[i];
        }
    }
}

template <typename T>
void relu_forward(const T* in, size_t n, T* out) {
    for (size_t i = 0; i < n; ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
}

template <typename T>
void relu_backward(const T* in, size_t n, const T* gout, T* gin) {
    for (size_t i = 0; i < n; ++i) gin[i] += in[i] > T(0) ? gout[i] : T(0);
}

// 2x2 max pooling, stride 2. Records the flat input index of each maximum.
template <typename T>
void maxpool2x2_forward(const T* in, int n, int c, int h, int w, T* out, int* argmax) {
    const int ho = h / 2, wo = w / 2;
    for (int p = 0; p < n * c; ++p) {
        const T* plane = in + static_cast<size_t>(p) * h * w;
        T* oplane = out + static_cast<size_t>(p) * ho * wo;
        int* aplane = argmax + static_cast<size_t>(p) * ho * wo;
        for (int y = 0; y < ho; ++y) {
            for (int x = 0; x < wo; ++x) {
                int base = (2 * y) * w + 2 * x;
                int best = base;
                T bv = plane[base];
                const int cand[3] = {base + 1, base + w, base + w + 1};
                for (int k = 0; k < 3; ++k)
                    if (plane[cand[k]] > bv) { bv = plane[cand[k]]; best = cand[k]; }
                oplane[y * wo + x] = bv;
                aplane[y * wo + x] = best;
            }
        }
    }
}

template <typename T>
void maxpool2x2_backward(int n, int c, int h, int w, const T* gout, const int* argmax, T* gin) {
    const int ho = h / 2, wo = w / 2;
    for (int p = 0; p < n * c; ++p) {
        const T* gop = gout + static_cast<size_t>(p) * ho * wo;
        const int* ap = argmax + static_cast<size_t>(p) * ho * wo;
        T* gip = gin + static_cast<size_t>(p) * h * w;
        for (int i = 0; i < ho * wo; ++i) gip[ap[i]] += gop[i];
    }
}

// [N,C,H,W] -> [N,C]
template <typename T>
void global_avg_pool_forward(const T* in, int n, int c, int h, int w, T* out) {
    const size_t plane = static_cast<size_t>(h) * w;
    const T inv = T(1) / static_cast<T>(plane);
    for (int p = 0; p < n * c; ++p) {
        const T* __restrict src = in + p * plane;
        T acc = 0;
        for (size_t i = 0; i < plane; ++i) acc += src[i];
        out[p] = acc * inv;
    }
}

template <typename T>
void global_avg_pool_backward(int n, int c, int h, int w, const T* gout, T* gin) {
    const size_t plane = static_cast<size_t>(h) * w;
    const T inv = T(1) / static_cast<T>(plane);
    for (int p = 0; p < n * c; ++p) {
        const T g = gout[p] * inv;
        T* __restrict dst = gin + p * plane;
        for (size_t i = 0; i < plane; ++i) dst[i] += g;
    }
}

inline constexpr double kL2NormalizeEps = 1e-12;

// Row-wise x / ||x||; rows with norm < eps map to zero (and get zero grad).
template <typename T>
void l2_normalize_forward(const T* in, int n, int d, T* out, T* norms) {
    for (int ni = 0; ni < n; ++ni) {
        const T* __restrict x = in + static_cast<size_t>(ni) * d;
        T* __restrict y = out + static_cast<size_t>(ni) * d;
        double acc = 0;
        for (int i = 0; i < d; ++i) acc += static_cast<double>(x[i]) * x[i];
        const T nrm = static_cast<T>(std::sqrt(acc));
        norms[ni] = nrm;
        if (nrm < static_cast<T>(kL2NormalizeEps)) {
            for (int i = 0; i < d; ++i) y[i] = T(0);
        } else {
            const T inv = T(1) / nrm;
            for (int i = 0; i < d; ++i) y[i] = x[i] * inv;
        }
    }
}

// grad_x = (g - y (y.g)) / ||x||
template <typename T>
void l2_normalize_backward(const T* out, const T* norms, int n, int d, const T* gout, T* gin) {
    for (int ni = 0; ni < n; ++ni) {
        const T nrm = norms[ni];
        if (nrm < static_cast<T>(kL2NormalizeEps)) continue;
        const T* __restrict y = out + static_cast<size_t>(ni) * d;
        const T* __restrict g = gout + static_cast<size_t>(ni) * d;
        T* __restrict gx = gin + static_cast<size_t>(ni) * d;
        T dotyg = 0;
        for (int i = 0; i < d; ++i) dotyg += y[i] * g[i];
        const T inv = T(1) / nrm;
        for (int i = 0; i < d; ++i) gx[i] += (g[i] - y[i] * dotyg) * inv;
    }
}

template <typename T>
void logistic_forward(const T* in, size_t n, T* out) {
    for (size_t i = 0; i < n; ++i) out[i] = T(1) / (T(1) + std::exp(-in[i]));
}

template <typename T>
void logistic_backward(const T* out, size_t n, const T* gout, T* gin) {
    for (size_t i = 0; i < n; ++i) gin[i] += gout[i] * out[i] * (T(1) - out[i]);
}

}  // namespace gradweave::kernels
