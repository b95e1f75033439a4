#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "stvad/tensor.hpp"

// Forward/backward compute kernels. Feature maps are {T, H, W, C} with C
// innermost; convolutions share weights over the T axis. Conv weights are
// {k*k*Cin, Cout} with row index (ky*k + kx)*Cin + cin, so the forward pass
// is a single GEMM against the im2col matrix.
namespace stvad::kernels {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct ConvGeom {
    int k = 3;
    int stride = 1;
    int pad = 1;
    int h_in = 0, w_in = 0;
    int h_out = 0, w_out = 0;

    ConvGeom(int k_, int stride_, int pad_, int h, int w)
        : k(k_), stride(stride_), pad(pad_), h_in(h), w_in(w) {
        h_out = (h + 2 * pad - k) / stride + 1;
        w_out = (w + 2 * pad - k) / stride + 1;
        if (h_out < 1 || w_out < 1) throw std::invalid_argument("conv: output collapses to zero");
    }
};

// cols: {T*h_out*w_out, k*k*C} patch matrix of x {T,h_in,w_in,C}.
template <typename T>
void im2col(const Tensor<T>& x, const ConvGeom& g, Tensor<T>& cols) {
    const int tdim = x.dim(0), c = x.dim(3);
    const int patch = g.k * g.k * c;
    const T* xp = x.data();
    T* cp = cols.data();
    for (int t = 0; t < tdim; ++t) {
        const T* xt = xp + static_cast<std::size_t>(t) * g.h_in * g.w_in * c;
        for (int ho = 0; ho < g.h_out; ++ho) {
            for (int wo = 0; wo < g.w_out; ++wo) {
                T* row = cp + (static_cast<std::size_t>(t) * g.h_out * g.w_out +
                               static_cast<std::size_t>(ho) * g.w_out + wo) *
                                  patch;
                for (int ky = 0; ky < g.k; ++ky) {
                    const int hi = ho * g.stride - g.pad + ky;
                    for (int kx = 0; kx < g.k; ++kx) {
                        const int wi = wo * g.stride - g.pad + kx;
                        T* dst = row + (ky * g.k + kx) * c;
                        if (hi >= 0 && hi < g.h_in && wi >= 0 && wi < g.w_in) {
                            const T* src = xt + (static_cast<std::size_t>(hi) * g.w_in + wi) * c;
                            std::copy(src, src + c, dst);
                        } else {
                            std::fill(dst, dst + c, T(0));
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add of a patch matrix back onto the {T,h_in,w_in,C} grid.
template <typename T>
void col2im_add(const Tensor<T>& cols, const ConvGeom& g, Tensor<T>& x) {
    const int tdim = x.dim(0), c = x.dim(3);
    const int patch = g.k * g.k * c;
    const T* cp = cols.data();
    T* xp = x.data();
    for (int t = 0; t < tdim; ++t) {
        T* xt = xp + static_cast<std::size_t>(t) * g.h_in * g.w_in * c;
        for (int ho = 0; ho < g.h_out; ++ho) {
            for (int wo = 0; wo < g.w_out; ++wo) {
                const T* row = cp + (static_cast<std::size_t>(t) * g.h_out * g.w_out +
                                     static_cast<std::size_t>(ho) * g.w_out + wo) *
                                        patch;
                for (int ky = 0; ky < g.k; ++ky) {
                    const int hi = ho * g.stride - g.pad + ky;
                    if (hi < 0 || hi >= g.h_in) continue;
                    for (int kx = 0; kx < g.k; ++kx) {
                        const int wi = wo * g.stride - g.pad + kx;
                        if (wi < 0 || wi >= g.w_in) continue;
                        const T* src = row + (ky * g.k + kx) * c;
                        T* dst = xt + (static_cast<std::size_t>(hi) * g.w_in + wi) * c;
                        for (int i = 0; i < c; ++i) dst[i] += src[i];
                    }
                }
            }
        }
    }
}

// y = conv(x, w) + b. x {T,H,W,Cin}, w {k*k*Cin, Cout}, b {Cout}.
// cols_out, when non-null, receives the im2col matrix for reuse in backward.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad,
                 Tensor<T>* cols_out = nullptr) {
    if (x.rank() != 4) throw std::invalid_argument("conv2d: expected {T,H,W,C} input");
    const int tdim = x.dim(0), cin = x.dim(3);
    const int k = static_cast<int>(std::lround(std::sqrt(double(w.dim(0) / cin))));
    if (k * k * cin != w.dim(0))
        throw std::invalid_argument("conv2d: weight rows " + std::to_string(w.dim(0)) +
                                    " incompatible with input channels " + std::to_string(cin));
    const int cout = w.dim(1);
    ConvGeom g(k, stride, pad, x.dim(1), x.dim(2));
    const int rows = tdim * g.h_out * g.w_out;

    Tensor<T> cols({rows, k * k * cin});
    im2col(x, g, cols);
    Tensor<T> y({tdim, g.h_out, g.w_out, cout});
    MatMap<T>(y.data(), rows, cout).noalias() =
        ConstMatMap<T>(cols.data(), rows, k * k * cin) * ConstMatMap<T>(w.data(), k * k * cin, cout);
    T* yp = y.data();
    const T* bp = b.data();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cout; ++c) yp[static_cast<std::size_t>(r) * cout + c] += bp[c];
    if (cols_out) *cols_out = cols;
    return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& cols,
                     const Tensor<T>& dy, int stride, int pad, Tensor<T>& dx, Tensor<T>& dw,
                     Tensor<T>& db) {
    const int tdim = x.dim(0), cin = x.dim(3);
    const int kkcin = w.dim(0), cout = w.dim(1);
    const int k = static_cast<int>(std::lround(std::sqrt(double(kkcin / cin))));
    ConvGeom g(k, stride, pad, x.dim(1), x.dim(2));
    const int rows = tdim * g.h_out * g.w_out;

    MatMap<T>(dw.data(), kkcin, cout).noalias() +=
        ConstMatMap<T>(cols.data(), rows, kkcin).transpose() * ConstMatMap<T>(dy.data(), rows, cout);
    const T* dyp = dy.data();
    T* dbp = db.data();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cout; ++c) dbp[c] += dyp[static_cast<std::size_t>(r) * cout + c];

    Tensor<T> dcols({rows, kkcin});
    MatMap<T>(dcols.data(), rows, kkcin).noalias() =
        ConstMatMap<T>(dy.data(), rows, cout) * ConstMatMap<T>(w.data(), kkcin, cout).transpose();
    col2im_add(dcols, g, dx);
}

// Transposed conv, the adjoint of conv2d with the same geometry. x {T,H,W,Cin}
// maps to y {T,s*H,s*W,Cout}; w is laid out for the adjoint direction,
// {k*k*Cout, Cin}.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                           int pad) {
    if (x.rank() != 4) throw std::invalid_argument("conv_transpose2d: expected {T,H,W,C} input");
    const int tdim = x.dim(0), cin = x.dim(3);
    const int kkcout = w.dim(0);
    if (w.dim(1) != cin)
        throw std::invalid_argument("conv_transpose2d: weight cols != input channels");
    const int h_big = x.dim(1) * stride, w_big = x.dim(2) * stride;
    const int cout = kkcout / 9;
    const int k = 3;
    if (k * k * cout != kkcout)
        throw std::invalid_argument("conv_transpose2d: only 3x3 kernels supported");
    ConvGeom g(k, stride, pad, h_big, w_big);
    if (g.h_out != x.dim(1) || g.w_out != x.dim(2))
        throw std::invalid_argument("conv_transpose2d: geometry mismatch");
    const int rows = tdim * g.h_out * g.w_out;

    Tensor<T> cols({rows, kkcout});
    MatMap<T>(cols.data(), rows, kkcout).noalias() =
        ConstMatMap<T>(x.data(), rows, cin) * ConstMatMap<T>(w.data(), kkcout, cin).transpose();
    Tensor<T> y({tdim, h_big, w_big, cout});
    col2im_add(cols, g, y);
    T* yp = y.data();
    const T* bp = b.data();
    const std::size_t n = y.size();
    for (std::size_t i = 0; i < n; ++i) yp[i] += bp[i % cout];
    return y;
}

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                               int stride, int pad, Tensor<T>& dx, Tensor<T>& dw, Tensor<T>& db) {
    const int tdim = x.dim(0), cin = x.dim(3);
    const int kkcout = w.dim(0);
    const int cout = kkcout / 9;
    ConvGeom g(3, stride, pad, dy.dim(1), dy.dim(2));
    const int rows = tdim * g.h_out * g.w_out;

    Tensor<T> dy_cols({rows, kkcout});
    im2col(dy, g, dy_cols);
    MatMap<T>(dx.data(), rows, cin).noalias() +=
        ConstMatMap<T>(dy_cols.data(), rows, kkcout) * ConstMatMap<T>(w.data(), kkcout, cin);
    MatMap<T>(dw.data(), kkcout, cin).noalias() +=
        ConstMatMap<T>(dy_cols.data(), rows, kkcout).transpose() *
        ConstMatMap<T>(x.data(), rows, cin);
    const T* dyp = dy.data();
    T* dbp = db.data();
    const std::size_t n = dy.size();
    for (std::size_t i = 0; i < n; ++i) dbp[i % cout] += dyp[i];
}

enum class ShiftMode { bidirectional, forward_only };

// Temporal channel shift with zero padding at the clip boundaries. The first
// nf channels carry frame t-1, the next nf carry frame t+1 (bidirectional
// mode), the rest pass through. nf = floor(shift_fraction * C).
template <typename T>
Tensor<T> temporal_shift(const Tensor<T>& x, double shift_fraction,
                         ShiftMode mode = ShiftMode::bidirectional) {
    if (x.rank() != 4) throw std::invalid_argument("temporal_shift: expected {T,H,W,C} input");
    if (shift_fraction < 0.0 || shift_fraction > 0.5)
        throw std::invalid_argument("temporal_shift: shift_fraction must lie in [0, 0.5]");
    const int tdim = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const int nf = static_cast<int>(std::floor(shift_fraction * c));
    const int nb = mode == ShiftMode::bidirectional ? nf : 0;
    Tensor<T> y(x.shape());
    const std::size_t plane = static_cast<std::size_t>(h) * w * c;
    const T* xp = x.data();
    T* yp = y.data();
    for (int t = 0; t < tdim; ++t) {
        const T* past = t > 0 ? xp + (t - 1) * plane : nullptr;
        const T* future = t + 1 < tdim ? xp + (t + 1) * plane : nullptr;
        const T* cur = xp + t * plane;
        T* out = yp + t * plane;
        for (std::size_t s = 0; s < static_cast<std::size_t>(h) * w; ++s) {
            const std::size_t o = s * c;
            for (int i = 0; i < nf; ++i) out[o + i] = past ? past[o + i] : T(0);
            for (int i = nf; i < nf + nb; ++i) out[o + i] = future ? future[o + i] : T(0);
            for (int i = nf + nb; i < c; ++i) out[o + i] = cur[o + i];
        }
    }
    return y;
}

// Adjoint of temporal_shift: the shifted groups move the opposite way.
template <typename T>
void temporal_shift_backward(const Tensor<T>& dy, double shift_fraction, ShiftMode mode,
                             Tensor<T>& dx) {
    const int tdim = dy.dim(0), h = dy.dim(1), w = dy.dim(2), c = dy.dim(3);
    const int nf = static_cast<int>(std::floor(shift_fraction * c));
    const int nb = mode == ShiftMode::bidirectional ? nf : 0;
    const std::size_t plane = static_cast<std::size_t>(h) * w * c;
    const T* dyp = dy.data();
    T* dxp = dx.data();
    for (int t = 0; t < tdim; ++t) {
        const T* from_future = t + 1 < tdim ? dyp + (t + 1) * plane : nullptr;
        const T* from_past = t > 0 ? dyp + (t - 1) * plane : nullptr;
        const T* cur = dyp + t * plane;
        T* out = dxp + t * plane;
        for (std::size_t s = 0; s < static_cast<std::size_t>(h) * w; ++s) {
            const std::size_t o = s * c;
            for (int i = 0; i < nf; ++i)
                if (from_future) out[o + i] += from_future[o + i];
            for (int i = nf; i < nf + nb; ++i)
                if (from_past) out[o + i] += from_past[o + i];
            for (int i = nf + nb; i < c; ++i) out[o + i] += cur[o + i];
        }
    }
}

template <typename T>
struct BnCache {
    Tensor<T> xhat;
    std::vector<T> inv_std;  // per channel
};

// Per-channel normalization over all non-channel axes of the sample, with
// optional affine transform. Training mode uses the sample's own statistics
// and refreshes the running estimates in place.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    Tensor<T>& running_mean, Tensor<T>& running_var, bool training, bool affine,
                    double momentum, double eps, BnCache<T>* cache = nullptr) {
    const int c = x.dim(x.rank() - 1);
    const std::size_t n = x.size() / static_cast<std::size_t>(c);
    const T* xp = x.data();
    Tensor<T> y(x.shape());
    T* yp = y.data();
    std::vector<T> mean(c, T(0)), var(c, T(0));
    if (training) {
        for (std::size_t i = 0; i < x.size(); ++i) mean[i % c] += xp[i];
        for (int j = 0; j < c; ++j) mean[j] /= static_cast<T>(n);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const T d = xp[i] - mean[i % c];
            var[i % c] += d * d;
        }
        for (int j = 0; j < c; ++j) var[j] /= static_cast<T>(n);
        const T unbias = n > 1 ? static_cast<T>(n) / static_cast<T>(n - 1) : T(1);
        for (int j = 0; j < c; ++j) {
            running_mean[j] = static_cast<T>((1.0 - momentum) * running_mean[j] + momentum * mean[j]);
            running_var[j] =
                static_cast<T>((1.0 - momentum) * running_var[j] + momentum * var[j] * unbias);
        }
    } else {
        for (int j = 0; j < c; ++j) {
            mean[j] = running_mean[j];
            var[j] = running_var[j];
        }
    }
    std::vector<T> inv_std(c);
    for (int j = 0; j < c; ++j) inv_std[j] = T(1) / std::sqrt(var[j] + static_cast<T>(eps));
    if (cache) {
        cache->xhat = Tensor<T>(x.shape());
        cache->inv_std = inv_std;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        const int j = static_cast<int>(i % c);
        const T xh = (xp[i] - mean[j]) * inv_std[j];
        if (cache) cache->xhat[i] = xh;
        yp[i] = affine ? gamma[j] * xh + beta[j] : xh;
    }
    return y;
}

template <typename T>
void batchnorm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const BnCache<T>& cache,
                        bool training, bool affine, Tensor<T>& dx, Tensor<T>& dgamma,
                        Tensor<T>& dbeta) {
    const int c = dy.dim(dy.rank() - 1);
    const std::size_t total = dy.size();
    const std::size_t n = total / static_cast<std::size_t>(c);
    const T* dyp = dy.data();
    std::vector<T> sum_dxhat(c, T(0)), sum_dxhat_xhat(c, T(0));
    for (std::size_t i = 0; i < total; ++i) {
        const int j = static_cast<int>(i % c);
        const T g = affine ? gamma[j] : T(1);
        const T dxh = dyp[i] * g;
        sum_dxhat[j] += dxh;
        sum_dxhat_xhat[j] += dxh * cache.xhat[i];
        if (affine) {
            dgamma[j] += dyp[i] * cache.xhat[i];
            dbeta[j] += dyp[i];
        }
    }
    for (std::size_t i = 0; i < total; ++i) {
        const int j = static_cast<int>(i % c);
        const T g = affine ? gamma[j] : T(1);
        const T dxh = dyp[i] * g;
        if (training) {
            dx[i] += cache.inv_std[j] *
                     (dxh - sum_dxhat[j] / static_cast<T>(n) -
                      cache.xhat[i] * sum_dxhat_xhat[j] / static_cast<T>(n));
        } else {
            dx[i] += dxh * cache.inv_std[j];
        }
    }
}

// {T,H,W,C} -> {C}, mean over all positions.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    const int c = x.dim(x.rank() - 1);
    const std::size_t n = x.size() / static_cast<std::size_t>(c);
    Tensor<T> z({c});
    const T* xp = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) z[i % c] += xp[i];
    for (int j = 0; j < c; ++j) z[j] /= static_cast<T>(n);
    return z;
}

// y[..., c] = x[..., c] * s[c]
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
    const int c = x.dim(x.rank() - 1);
    if (s.size() != static_cast<std::size_t>(c))
        throw std::invalid_argument("channel_scale: weight length != channel count");
    Tensor<T> y(x.shape());
    const T* xp = x.data();
    T* yp = y.data();
    for (std::size_t i = 0; i < x.size(); ++i) yp[i] = xp[i] * s[i % c];
    return y;
}

// {T,H,W,C} -> {1,H,W,T*C}: time steps concatenated on the channel axis.
template <typename T>
Tensor<T> merge_time(const Tensor<T>& x) {
    const int tdim = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    Tensor<T> y({1, h, w, tdim * c});
    const T* xp = x.data();
    T* yp = y.data();
    for (int t = 0; t < tdim; ++t)
        for (int s = 0; s < h * w; ++s)
            std::copy(xp + (static_cast<std::size_t>(t) * h * w + s) * c,
                      xp + (static_cast<std::size_t>(t) * h * w + s) * c + c,
                      yp + (static_cast<std::size_t>(s) * tdim + t) * c);
    return y;
}

template <typename T>
void merge_time_backward(const Tensor<T>& dy, int tdim, Tensor<T>& dx) {
    const int h = dx.dim(1), w = dx.dim(2), c = dx.dim(3);
    const T* dyp = dy.data();
    T* dxp = dx.data();
    for (int t = 0; t < tdim; ++t)
        for (int s = 0; s < h * w; ++s) {
            const T* src = dyp + (static_cast<std::size_t>(s) * tdim + t) * c;
            T* dst = dxp + (static_cast<std::size_t>(t) * h * w + s) * c;
            for (int i = 0; i < c; ++i) dst[i] += src[i];
        }
}

}  // namespace stvad::kernels
