#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "stvad/graph.hpp"
#include "stvad/rng.hpp"
#include "stvad/tensor.hpp"

// Reusable network blocks: temporal shift, residual temporal shift module
// (RTSM), conv block, channel attention block (CAB) and residual channel
// attention module (RCAM). Each block is a parameter struct plus a graph
// builder; the free functions at the bottom give the same blocks as plain
// tensor-in/tensor-out calls.
namespace stvad::blocks {

using kernels::ShiftMode;

template <typename T>
struct Conv2dLayer {
    Tensor<T> w;  // {k*k*Cin, Cout}
    Tensor<T> b;  // {Cout}
    int k = 3;
    int stride = 1;
    int pad = 1;

    // transient per-graph bindings
    int wid = -1, bid = -1;

    void bind(Graph<T>& g) {
        wid = g.leaf(w);
        bid = g.leaf(b);
    }
    int apply(Graph<T>& g, int x) const { return g.conv2d(x, wid, bid, stride, pad); }
};

// Transposed conv; weight laid out for the adjoint direction {k*k*Cout, Cin}.
template <typename T>
struct Deconv2dLayer {
    Tensor<T> w;
    Tensor<T> b;  // {Cout}
    int stride = 2;
    int pad = 1;

    int wid = -1, bid = -1;

    void bind(Graph<T>& g) {
        wid = g.leaf(w);
        bid = g.leaf(b);
    }
    int apply(Graph<T>& g, int x) const { return g.conv_transpose2d(x, wid, bid, stride, pad); }
};

template <typename T>
struct BatchNormLayer {
    Tensor<T> gamma, beta;
    Tensor<T> running_mean, running_var;
    bool affine = true;
    double momentum = 0.1;
    double eps = 1e-5;

    int gid = -1, bid = -1;

    void bind(Graph<T>& g) {
        gid = g.leaf(gamma);
        bid = g.leaf(beta);
    }
    int apply(Graph<T>& g, int x, bool training) {
        return g.batchnorm(x, gid, bid, running_mean, running_var, training, affine, momentum, eps);
    }
};

// q'' = leaky(q + w2 * leaky(w1 * shift(q)))
template <typename T>
struct RtsmParams {
    Conv2dLayer<T> conv1, conv2;
    double shift_fraction = 0.125;
    T leaky_slope = T(0.2);
    ShiftMode shift_mode = ShiftMode::bidirectional;

    void bind(Graph<T>& g) {
        conv1.bind(g);
        conv2.bind(g);
    }
};

// U = W2 * leaky(BN(W1 * q)); BN optional (the prose lists it, the equation
// does not).
template <typename T>
struct ConvBlockParams {
    Conv2dLayer<T> conv1, conv2;
    BatchNormLayer<T> bn;
    bool use_bn = true;
    T leaky_slope = T(0.2);

    void bind(Graph<T>& g) {
        conv1.bind(g);
        conv2.bind(g);
        bn.bind(g);
    }
};

// s(U) = sigmoid(W4 * leaky(W3 * GAP(U)))
template <typename T>
struct CabParams {
    Tensor<T> w3, b3;  // {C, C/r}, {C/r}
    Tensor<T> w4, b4;  // {C/r, C}, {C}
    T leaky_slope = T(0.2);

    int w3id = -1, b3id = -1, w4id = -1, b4id = -1;

    void bind(Graph<T>& g) {
        w3id = g.leaf(w3);
        b3id = g.leaf(b3);
        w4id = g.leaf(w4);
        b4id = g.leaf(b4);
    }
};

// q' = q + U (x) s(U), U = conv_block(q)
template <typename T>
struct RcamParams {
    ConvBlockParams<T> conv_block;
    CabParams<T> cab;

    void bind(Graph<T>& g) {
        conv_block.bind(g);
        cab.bind(g);
    }
};

// ---- initializers ----

template <typename T>
Conv2dLayer<T> make_conv(int cin, int cout, Rng& rng, int k = 3, int stride = 1, int pad = 1) {
    Conv2dLayer<T> l;
    l.k = k;
    l.stride = stride;
    l.pad = pad;
    l.w = Tensor<T>({k * k * cin, cout});
    l.b = Tensor<T>({cout});
    const double std = std::sqrt(2.0 / (k * k * cin));
    for (std::size_t i = 0; i < l.w.size(); ++i) l.w[i] = static_cast<T>(rng.normal(0.0, std));
    return l;
}

template <typename T>
Deconv2dLayer<T> make_deconv(int cin, int cout, Rng& rng, int stride = 2, int pad = 1) {
    Deconv2dLayer<T> l;
    l.stride = stride;
    l.pad = pad;
    l.w = Tensor<T>({9 * cout, cin});
    l.b = Tensor<T>({cout});
    const double std = std::sqrt(2.0 / (9.0 * cin));
    for (std::size_t i = 0; i < l.w.size(); ++i) l.w[i] = static_cast<T>(rng.normal(0.0, std));
    return l;
}

template <typename T>
BatchNormLayer<T> make_batchnorm(int c, bool affine = true) {
    BatchNormLayer<T> l;
    l.affine = affine;
    l.gamma = Tensor<T>::full({c}, T(1));
    l.beta = Tensor<T>({c});
    l.running_mean = Tensor<T>({c});
    l.running_var = Tensor<T>::full({c}, T(1));
    return l;
}

template <typename T>
RtsmParams<T> make_rtsm(int c, Rng& rng, double shift_fraction, T leaky_slope,
                        ShiftMode mode = ShiftMode::bidirectional) {
    if (shift_fraction < 0.0 || shift_fraction > 0.5)
        throw std::invalid_argument("rtsm: shift_fraction must lie in [0, 0.5]");
    RtsmParams<T> p;
    p.conv1 = make_conv<T>(c, c, rng);
    p.conv2 = make_conv<T>(c, c, rng);
    p.shift_fraction = shift_fraction;
    p.leaky_slope = leaky_slope;
    p.shift_mode = mode;
    return p;
}

template <typename T>
ConvBlockParams<T> make_conv_block(int c, Rng& rng, T leaky_slope, bool use_bn = true) {
    ConvBlockParams<T> p;
    p.conv1 = make_conv<T>(c, c, rng);
    p.conv2 = make_conv<T>(c, c, rng);
    p.bn = make_batchnorm<T>(c);
    p.use_bn = use_bn;
    p.leaky_slope = leaky_slope;
    return p;
}

template <typename T>
CabParams<T> make_cab(int c, int reduction_ratio, Rng& rng, T leaky_slope) {
    if (reduction_ratio < 1 || c % reduction_ratio != 0)
        throw std::invalid_argument("cab: reduction ratio " + std::to_string(reduction_ratio) +
                                    " does not divide channel count " + std::to_string(c));
    const int hidden = c / reduction_ratio;
    CabParams<T> p;
    p.w3 = Tensor<T>({c, hidden});
    p.b3 = Tensor<T>({hidden});
    p.w4 = Tensor<T>({hidden, c});
    p.b4 = Tensor<T>({c});
    p.leaky_slope = leaky_slope;
    const double s3 = std::sqrt(2.0 / c), s4 = std::sqrt(2.0 / hidden);
    for (std::size_t i = 0; i < p.w3.size(); ++i) p.w3[i] = static_cast<T>(rng.normal(0.0, s3));
    for (std::size_t i = 0; i < p.w4.size(); ++i) p.w4[i] = static_cast<T>(rng.normal(0.0, s4));
    return p;
}

template <typename T>
RcamParams<T> make_rcam(int c, int reduction_ratio, Rng& rng, T leaky_slope, bool use_bn = true) {
    RcamParams<T> p;
    p.conv_block = make_conv_block<T>(c, rng, leaky_slope, use_bn);
    p.cab = make_cab<T>(c, reduction_ratio, rng, leaky_slope);
    return p;
}

// ---- graph builders (params must be bound to g first) ----

template <typename T>
int rtsm(Graph<T>& g, int q, const RtsmParams<T>& p) {
    const int shifted = g.temporal_shift(q, p.shift_fraction, p.shift_mode);
    const int h1 = g.leaky_relu(p.conv1.apply(g, shifted), p.leaky_slope);
    const int h2 = p.conv2.apply(g, h1);
    return g.leaky_relu(g.add(q, h2), p.leaky_slope);
}

template <typename T>
int conv_block(Graph<T>& g, int q, ConvBlockParams<T>& p, bool training) {
    int h = p.conv1.apply(g, q);
    if (p.use_bn) h = p.bn.apply(g, h, training);
    h = g.leaky_relu(h, p.leaky_slope);
    return p.conv2.apply(g, h);
}

// Channel weights {C}, each strictly inside (0,1).
template <typename T>
int cab(Graph<T>& g, int u, const CabParams<T>& p) {
    const int c = g.value(u).dim(g.value(u).rank() - 1);
    if (p.w3.dim(0) != c)
        throw std::invalid_argument("cab: channel count " + std::to_string(c) +
                                    " does not match weights " + shape_str(p.w3.shape()));
    const int z = g.reshape(g.global_avg_pool(u), {1, c});
    const int h = g.leaky_relu(g.matmul(z, p.w3id, p.b3id), p.leaky_slope);
    const int s = g.sigmoid(g.matmul(h, p.w4id, p.b4id));
    return g.reshape(s, {c});
}

template <typename T>
int rcam(Graph<T>& g, int q, RcamParams<T>& p, bool training) {
    const int u = conv_block(g, q, p.conv_block, training);
    const int s = cab(g, u, p.cab);
    return g.add(q, g.channel_scale(u, s));
}

// ---- plain tensor-level ops ----

template <typename T>
Tensor<T> temporal_shift(const Tensor<T>& q, double shift_fraction,
                         ShiftMode mode = ShiftMode::bidirectional) {
    if (!q.all_finite()) throw std::invalid_argument("temporal_shift: non-finite input");
    return kernels::temporal_shift(q, shift_fraction, mode);
}

template <typename T>
Tensor<T> rtsm_forward(const Tensor<T>& q, RtsmParams<T>& p) {
    Graph<T> g(false);
    p.bind(g);
    return g.value(rtsm(g, g.leaf(q), p));
}

template <typename T>
Tensor<T> conv_block_forward(const Tensor<T>& q, ConvBlockParams<T>& p, bool training = false) {
    Graph<T> g(false);
    p.bind(g);
    return g.value(conv_block(g, g.leaf(q), p, training));
}

template <typename T>
Tensor<T> cab_weights(const Tensor<T>& u, CabParams<T>& p) {
    Graph<T> g(false);
    p.bind(g);
    return g.value(cab(g, g.leaf(u), p));
}

template <typename T>
Tensor<T> rcam_forward(const Tensor<T>& q, RcamParams<T>& p, bool training = false) {
    Graph<T> g(false);
    p.bind(g);
    return g.value(rcam(g, g.leaf(q), p, training));
}

}  // namespace stvad::blocks
