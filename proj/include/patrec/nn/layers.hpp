#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "patrec/nn/tensor.hpp"
#include "patrec/parallel.hpp"
#include "patrec/rng.hpp"

namespace patrec::nn {

// ---------------------------------------------------------------------------
// Dense kernels. Row-major; each output element is owned by one loop
// iteration with a fixed reduction order, so results do not depend on the
// thread count.

/// C(O×P) += A(O×Q) · B(Q×P)
template <class T>
void gemm_nn(int O, int Q, int P, const T* A, const T* B, T* C)
{
    parallel_for((O + 3) / 4, [&](std::int64_t blk) {
        const int o0 = static_cast<int>(blk) * 4;
        const int rows = std::min(4, O - o0);
        T* c0 = C + static_cast<std::size_t>(o0) * P;
        if (rows == 4) {
            T* c1 = c0 + P;
            T* c2 = c1 + P;
            T* c3 = c2 + P;
            for (int q = 0; q < Q; ++q) {
                const T a0 = A[static_cast<std::size_t>(o0) * Q + q];
                const T a1 = A[static_cast<std::size_t>(o0 + 1) * Q + q];
                const T a2 = A[static_cast<std::size_t>(o0 + 2) * Q + q];
                const T a3 = A[static_cast<std::size_t>(o0 + 3) * Q + q];
                const T* b = B + static_cast<std::size_t>(q) * P;
#pragma omp simd
                for (int p = 0; p < P; ++p) {
                    const T bv = b[p];
                    c0[p] += a0 * bv;
                    c1[p] += a1 * bv;
                    c2[p] += a2 * bv;
                    c3[p] += a3 * bv;
                }
            }
        } else {
            for (int r = 0; r < rows; ++r) {
                T* c = c0 + static_cast<std::size_t>(r) * P;
                for (int q = 0; q < Q; ++q) {
                    const T a = A[static_cast<std::size_t>(o0 + r) * Q + q];
                    const T* b = B + static_cast<std::size_t>(q) * P;
#pragma omp simd
                    for (int p = 0; p < P; ++p) c[p] += a * b[p];
                }
            }
        }
    });
}

/// C(O×Q) += A(O×P) · B(Q×P)ᵀ
template <class T>
void gemm_nt(int O, int Q, int P, const T* A, const T* B, T* C)
{
    parallel_for(O, [&](std::int64_t o) {
        const T* a = A + o * P;
        for (int q = 0; q < Q; ++q) {
            const T* b = B + static_cast<std::size_t>(q) * P;
            T s = T{};
#pragma omp simd reduction(+ : s)
            for (int p = 0; p < P; ++p) s += a[p] * b[p];
            C[o * Q + q] += s;
        }
    });
}

/// C(Q×P) += A(O×Q)ᵀ · B(O×P)
template <class T>
void gemm_tn(int O, int Q, int P, const T* A, const T* B, T* C)
{
    parallel_for(Q, [&](std::int64_t q) {
        T* c = C + q * P;
        for (int o = 0; o < O; ++o) {
            const T a = A[static_cast<std::size_t>(o) * Q + q];
            if (a == T{}) continue;
            const T* b = B + static_cast<std::size_t>(o) * P;
#pragma omp simd
            for (int p = 0; p < P; ++p) c[p] += a * b[p];
        }
    });
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip)

template <class T>
struct ConvParams {
    int out_channels = 1;
    int in_channels = 1;
    int kernel = 3;
    int stride = 1;
    int padding = 1;
    std::vector<T> weight;  // out × in × k × k
    std::vector<T> bias;    // out

    ConvParams() = default;
    ConvParams(int out, int in, int k, int stride_, int padding_)
        : out_channels(out), in_channels(in), kernel(k), stride(stride_), padding(padding_),
          weight(static_cast<std::size_t>(out) * in * k * k, T{}), bias(out, T{})
    {
        require(out >= 1 && in >= 1 && k >= 1 && stride_ >= 1 && padding_ >= 0, "ConvParams: invalid shape");
    }

    /// Stride-1 convolution that preserves spatial size; k must be odd.
    static ConvParams same(int out, int in, int k)
    {
        require(k % 2 == 1, "ConvParams::same: kernel size must be odd");
        return ConvParams(out, in, k, 1, k / 2);
    }

    int output_size(int input) const { return (input + 2 * padding - kernel) / stride + 1; }
    int fan_in() const { return kernel * kernel * in_channels; }
    int fan_out() const { return kernel * kernel * out_channels; }
};

template <class T>
struct ConvGrads {
    Tensor4<T> input;
    std::vector<T> weight;
    std::vector<T> bias;
};

namespace detail {

template <class T>
void im2col(const T* x, int C, int H, int W, const ConvParams<T>& p, int Ho, int Wo, T* col)
{
    const int k = p.kernel;
    parallel_for(C, [&](std::int64_t c) {
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + ((c * k + ky) * k + kx) * static_cast<std::size_t>(Ho) * Wo;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * p.stride - p.padding + ky;
                    T* r = row + static_cast<std::size_t>(oy) * Wo;
                    if (iy < 0 || iy >= H) {
                        std::fill(r, r + Wo, T{});
                        continue;
                    }
                    const T* xr = x + (c * H + iy) * static_cast<std::size_t>(W);
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * p.stride - p.padding + kx;
                        r[ox] = (ix >= 0 && ix < W) ? xr[ix] : T{};
                    }
                }
            }
    });
}

template <class T>
void col2im(const T* col, int C, int H, int W, const ConvParams<T>& p, int Ho, int Wo, T* x)
{
    const int k = p.kernel;
    parallel_for(C, [&](std::int64_t c) {
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const T* row = col + ((c * k + ky) * k + kx) * static_cast<std::size_t>(Ho) * Wo;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * p.stride - p.padding + ky;
                    if (iy < 0 || iy >= H) continue;
                    const T* r = row + static_cast<std::size_t>(oy) * Wo;
                    T* xr = x + (c * H + iy) * static_cast<std::size_t>(W);
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * p.stride - p.padding + kx;
                        if (ix >= 0 && ix < W) xr[ix] += r[ox];
                    }
                }
            }
    });
}

inline bool is_pointwise(int kernel, int stride, int padding) { return kernel == 1 && stride == 1 && padding == 0; }

}  // namespace detail

template <class T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const ConvParams<T>& p)
{
    require(x.c == p.in_channels, "conv2d_forward: input has " + std::to_string(x.c) + " channels, layer expects " +
                                      std::to_string(p.in_channels));
    const int Ho = p.output_size(x.h);
    const int Wo = p.output_size(x.w);
    require(Ho >= 1 && Wo >= 1, "conv2d_forward: input smaller than kernel");
    const int Q = p.in_channels * p.kernel * p.kernel;
    const int P = Ho * Wo;
    Tensor4<T> y(x.n, p.out_channels, Ho, Wo);
    std::vector<T> col;
    const bool pointwise = detail::is_pointwise(p.kernel, p.stride, p.padding);
    if (!pointwise) col.resize(static_cast<std::size_t>(Q) * P);
    for (int n = 0; n < x.n; ++n) {
        T* out = y.sample(n);
        for (int o = 0; o < p.out_channels; ++o) std::fill(out + o * P, out + (o + 1) * P, p.bias[o]);
        const T* src = x.sample(n);
        if (!pointwise) {
            detail::im2col(src, x.c, x.h, x.w, p, Ho, Wo, col.data());
            src = col.data();
        }
        gemm_nn(p.out_channels, Q, P, p.weight.data(), src, out);
    }
    return y;
}

template <class T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& grad_out, const Tensor4<T>& x, const ConvParams<T>& p,
                             bool need_input_grad = true)
{
    const int Ho = p.output_size(x.h);
    const int Wo = p.output_size(x.w);
    require(grad_out.n == x.n && grad_out.c == p.out_channels && grad_out.h == Ho && grad_out.w == Wo,
            "conv2d_backward: gradient shape mismatch");
    const int Q = p.in_channels * p.kernel * p.kernel;
    const int P = Ho * Wo;
    ConvGrads<T> g;
    g.weight.assign(p.weight.size(), T{});
    g.bias.assign(p.bias.size(), T{});
    if (need_input_grad) g.input = Tensor4<T>(x.n, x.c, x.h, x.w);
    const bool pointwise = detail::is_pointwise(p.kernel, p.stride, p.padding);
    std::vector<T> col;
    if (!pointwise) col.resize(static_cast<std::size_t>(Q) * P);
    for (int n = 0; n < x.n; ++n) {
        const T* go = grad_out.sample(n);
        for (int o = 0; o < p.out_channels; ++o) {
            T s = T{};
            for (int i = 0; i < P; ++i) s += go[static_cast<std::size_t>(o) * P + i];
            g.bias[o] += s;
        }
        const T* src = x.sample(n);
        if (!pointwise) {
            detail::im2col(src, x.c, x.h, x.w, p, Ho, Wo, col.data());
            src = col.data();
        }
        gemm_nt(p.out_channels, Q, P, go, src, g.weight.data());
        if (!need_input_grad) continue;
        if (pointwise) {
            gemm_tn(p.out_channels, Q, P, p.weight.data(), go, g.input.sample(n));
        } else {
            std::fill(col.begin(), col.end(), T{});
            gemm_tn(p.out_channels, Q, P, p.weight.data(), go, col.data());
            detail::col2im(col.data(), x.c, x.h, x.w, p, Ho, Wo, g.input.sample(n));
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// 2×2 transposed convolution with stride 2

template <class T>
struct UpconvParams {
    int in_channels = 1;
    int out_channels = 1;
    std::vector<T> weight;  // in × out × 2 × 2
    std::vector<T> bias;    // out

    UpconvParams() = default;
    UpconvParams(int in, int out)
        : in_channels(in), out_channels(out), weight(static_cast<std::size_t>(in) * out * 4, T{}), bias(out, T{})
    {
        require(in >= 1 && out >= 1, "UpconvParams: invalid shape");
    }

    int fan_in() const { return 4 * in_channels; }
    int fan_out() const { return 4 * out_channels; }
};

namespace detail {

/// Weight tap (a, b) as an out×in matrix.
template <class T>
std::vector<T> upconv_tap(const UpconvParams<T>& p, int tap)
{
    std::vector<T> m(static_cast<std::size_t>(p.out_channels) * p.in_channels);
    for (int c = 0; c < p.in_channels; ++c)
        for (int o = 0; o < p.out_channels; ++o)
            m[static_cast<std::size_t>(o) * p.in_channels + c] =
                p.weight[(static_cast<std::size_t>(c) * p.out_channels + o) * 4 + tap];
    return m;
}

}  // namespace detail

template <class T>
Tensor4<T> upconv2_forward(const Tensor4<T>& x, const UpconvParams<T>& p)
{
    require(x.c == p.in_channels, "upconv2_forward: channel mismatch");
    const int P = x.h * x.w;
    Tensor4<T> y(x.n, p.out_channels, 2 * x.h, 2 * x.w);
    std::vector<T> tmp(static_cast<std::size_t>(p.out_channels) * P);
    for (int tap = 0; tap < 4; ++tap) {
        const auto wt = detail::upconv_tap(p, tap);
        const int a = tap / 2, b = tap % 2;
        for (int n = 0; n < x.n; ++n) {
            std::fill(tmp.begin(), tmp.end(), T{});
            gemm_nn(p.out_channels, p.in_channels, P, wt.data(), x.sample(n), tmp.data());
            for (int o = 0; o < p.out_channels; ++o)
                for (int i = 0; i < x.h; ++i)
                    for (int j = 0; j < x.w; ++j)
                        y.at(n, o, 2 * i + a, 2 * j + b) =
                            tmp[static_cast<std::size_t>(o) * P + i * x.w + j] + p.bias[o];
        }
    }
    return y;
}

template <class T>
struct UpconvGrads {
    Tensor4<T> input;
    std::vector<T> weight;
    std::vector<T> bias;
};

template <class T>
UpconvGrads<T> upconv2_backward(const Tensor4<T>& grad_out, const Tensor4<T>& x, const UpconvParams<T>& p)
{
    require(grad_out.n == x.n && grad_out.c == p.out_channels && grad_out.h == 2 * x.h && grad_out.w == 2 * x.w,
            "upconv2_backward: gradient shape mismatch");
    const int P = x.h * x.w;
    UpconvGrads<T> g;
    g.input = Tensor4<T>(x.n, x.c, x.h, x.w);
    g.weight.assign(p.weight.size(), T{});
    g.bias.assign(p.bias.size(), T{});
    std::vector<T> gtap(static_cast<std::size_t>(p.out_channels) * P);
    std::vector<T> gw(static_cast<std::size_t>(p.out_channels) * p.in_channels);
    for (int n = 0; n < x.n; ++n)
        for (int o = 0; o < p.out_channels; ++o) {
            T s = T{};
            for (int i = 0; i < 2 * x.h; ++i)
                for (int j = 0; j < 2 * x.w; ++j) s += grad_out.at(n, o, i, j);
            g.bias[o] += s;
        }
    for (int tap = 0; tap < 4; ++tap) {
        const auto wt = detail::upconv_tap(p, tap);
        const int a = tap / 2, b = tap % 2;
        std::fill(gw.begin(), gw.end(), T{});
        for (int n = 0; n < x.n; ++n) {
            for (int o = 0; o < p.out_channels; ++o)
                for (int i = 0; i < x.h; ++i)
                    for (int j = 0; j < x.w; ++j)
                        gtap[static_cast<std::size_t>(o) * P + i * x.w + j] = grad_out.at(n, o, 2 * i + a, 2 * j + b);
            gemm_tn(p.out_channels, p.in_channels, P, wt.data(), gtap.data(), g.input.sample(n));
            gemm_nt(p.out_channels, p.in_channels, P, gtap.data(), x.sample(n), gw.data());
        }
        for (int c = 0; c < p.in_channels; ++c)
            for (int o = 0; o < p.out_channels; ++o)
                g.weight[(static_cast<std::size_t>(c) * p.out_channels + o) * 4 + tap] +=
                    gw[static_cast<std::size_t>(o) * p.in_channels + c];
    }
    return g;
}

// ---------------------------------------------------------------------------
// Pointwise and structural layers

template <class T>
Tensor4<T> relu_forward(const Tensor4<T>& x)
{
    Tensor4<T> y = x;
    for (auto& v : y.data) v = v > T{} ? v : T{};
    return y;
}

/// Gradient masked by (x > 0); the subgradient at 0 is 0.
template <class T>
Tensor4<T> relu_backward(const Tensor4<T>& grad_out, const Tensor4<T>& x)
{
    require(grad_out.same_shape(x), "relu_backward: shape mismatch");
    Tensor4<T> g = grad_out;
    for (std::size_t i = 0; i < g.data.size(); ++i)
        if (!(x.data[i] > T{})) g.data[i] = T{};
    return g;
}

template <class T>
struct PoolResult {
    Tensor4<T> output;
    std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// 2×2 max pooling with stride 2; ties go to the first element in row-major window order.
template <class T>
PoolResult<T> maxpool2_forward(const Tensor4<T>& x)
{
    require(x.h % 2 == 0 && x.w % 2 == 0, "maxpool2_forward: spatial dimensions must be even, got " +
                                              shape_string(x));
    PoolResult<T> r{Tensor4<T>(x.n, x.c, x.h / 2, x.w / 2), {}};
    r.argmax.resize(r.output.size());
    std::size_t out = 0;
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c)
            for (int i = 0; i < x.h / 2; ++i)
                for (int j = 0; j < x.w / 2; ++j, ++out) {
                    std::size_t best = ((static_cast<std::size_t>(n) * x.c + c) * x.h + 2 * i) * x.w + 2 * j;
                    const std::size_t cand[3] = {best + 1, best + x.w, best + x.w + 1};
                    for (auto k : cand)
                        if (x.data[k] > x.data[best]) best = k;
                    r.output.data[out] = x.data[best];
                    r.argmax[out] = static_cast<std::uint32_t>(best);
                }
    return r;
}

template <class T>
Tensor4<T> maxpool2_backward(const Tensor4<T>& grad_out, const std::vector<std::uint32_t>& argmax,
                             const std::array<int, 4>& input_shape)
{
    require(grad_out.size() == argmax.size(), "maxpool2_backward: gradient shape mismatch");
    Tensor4<T> g(input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    for (std::size_t i = 0; i < argmax.size(); ++i) g.data[argmax[i]] += grad_out.data[i];
    return g;
}

template <class T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b)
{
    require(a.n == b.n && a.h == b.h && a.w == b.w,
            "concat_channels: incompatible shapes " + shape_string(a) + " and " + shape_string(b));
    Tensor4<T> y(a.n, a.c + b.c, a.h, a.w);
    for (int n = 0; n < a.n; ++n) {
        std::copy(a.sample(n), a.sample(n) + a.sample_size(), y.sample(n));
        std::copy(b.sample(n), b.sample(n) + b.sample_size(), y.sample(n) + a.sample_size());
    }
    return y;
}

/// Inverse of concat_channels: splits the first `first_channels` channels from the rest.
template <class T>
std::pair<Tensor4<T>, Tensor4<T>> split_channels(const Tensor4<T>& y, int first_channels)
{
    require(first_channels >= 1 && first_channels < y.c, "split_channels: invalid split point");
    Tensor4<T> a(y.n, first_channels, y.h, y.w);
    Tensor4<T> b(y.n, y.c - first_channels, y.h, y.w);
    for (int n = 0; n < y.n; ++n) {
        std::copy(y.sample(n), y.sample(n) + a.sample_size(), a.sample(n));
        std::copy(y.sample(n) + a.sample_size(), y.sample(n) + y.sample_size(), b.sample(n));
    }
    return {std::move(a), std::move(b)};
}

template <class T>
struct LossResult {
    T loss;
    Tensor4<T> grad;
};

/// Mean absolute error; gradient sign(pred − target)/count, 0 at ties.
template <class T>
LossResult<T> l1_loss(const Tensor4<T>& pred, const Tensor4<T>& target)
{
    require(pred.same_shape(target), "l1_loss: shape mismatch");
    const T inv = T(1) / static_cast<T>(pred.size());
    LossResult<T> r{T{}, Tensor4<T>(pred.n, pred.c, pred.h, pred.w)};
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const T e = pred.data[i] - target.data[i];
        s += std::abs(static_cast<double>(e));
        r.grad.data[i] = e > T{} ? inv : (e < T{} ? -inv : T{});
    }
    r.loss = static_cast<T>(s / static_cast<double>(pred.size()));
    return r;
}

// ---------------------------------------------------------------------------
// Initialization

/// Uniform on [−H, H] with H = √6 / √(fan_in + fan_out).
template <class T>
std::vector<T> glorot_uniform(int fan_in, int fan_out, std::size_t count, std::uint64_t seed)
{
    require(fan_in >= 1 && fan_out >= 1, "glorot_uniform: fans must be positive");
    const double bound = std::sqrt(6.0) / std::sqrt(static_cast<double>(fan_in + fan_out));
    CounterRng rng(seed);
    std::vector<T> w(count);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    return w;
}

}  // namespace patrec::nn
