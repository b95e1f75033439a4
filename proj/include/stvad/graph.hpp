#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "stvad/kernels.hpp"
#include "stvad/tensor.hpp"

namespace stvad {

// Reverse-mode tape. Nodes are created eagerly (forward values computed at
// construction) and hold closures that scatter the node's output gradient to
// its inputs. With recording off, ops skip closures and caches entirely.
template <typename T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, const Tensor<T>&)>;

    explicit Graph(bool recording = true) : recording_(recording) {}

    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool needs_grad = false;
        BackwardFn backward;
    };

    bool recording() const { return recording_; }

    int constant(Tensor<T> v) { return make(std::move(v), false, nullptr); }

    int leaf(Tensor<T> v) { return make(std::move(v), recording_, nullptr); }

    const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

    Tensor<T>& grad(int id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.grad.defined()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.defined(); }

    // Seeds d(loss)/d(loss) = 1 and propagates through the tape in reverse.
    void backward(int loss_id) {
        if (value(loss_id).size() != 1)
            throw std::invalid_argument("backward: loss must be a scalar node");
        grad(loss_id)[0] = T(1);
        for (int id = loss_id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.backward && n.grad.defined()) n.backward(*this, n.grad);
        }
    }

    // ---- elementwise ----

    int add(int a, int b) {
        check_same(a, b, "add");
        Tensor<T> y(value(a).shape());
        const T* ap = value(a).data();
        const T* bp = value(b).data();
        T* yp = y.data();
        for (std::size_t i = 0; i < y.size(); ++i) yp[i] = ap[i] + bp[i];
        return make(std::move(y), needs(a) || needs(b), [a, b](Graph& g, const Tensor<T>& dy) {
            if (g.needs(a)) g.accumulate(a, dy, T(1));
            if (g.needs(b)) g.accumulate(b, dy, T(1));
        });
    }

    int sub(int a, int b) {
        check_same(a, b, "sub");
        Tensor<T> y(value(a).shape());
        const T* ap = value(a).data();
        const T* bp = value(b).data();
        T* yp = y.data();
        for (std::size_t i = 0; i < y.size(); ++i) yp[i] = ap[i] - bp[i];
        return make(std::move(y), needs(a) || needs(b), [a, b](Graph& g, const Tensor<T>& dy) {
            if (g.needs(a)) g.accumulate(a, dy, T(1));
            if (g.needs(b)) g.accumulate(b, dy, T(-1));
        });
    }

    int mul(int a, int b) {
        check_same(a, b, "mul");
        Tensor<T> y(value(a).shape());
        const T* ap = value(a).data();
        const T* bp = value(b).data();
        T* yp = y.data();
        for (std::size_t i = 0; i < y.size(); ++i) yp[i] = ap[i] * bp[i];
        return make(std::move(y), needs(a) || needs(b), [a, b](Graph& g, const Tensor<T>& dy) {
            if (g.needs(a)) {
                Tensor<T>& da = g.grad(a);
                const T* bp2 = g.value(b).data();
                for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bp2[i];
            }
            if (g.needs(b)) {
                Tensor<T>& db = g.grad(b);
                const T* ap2 = g.value(a).data();
                for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * ap2[i];
            }
        });
    }

    int scale(int a, T s) {
        Tensor<T> y(value(a).shape());
        const T* ap = value(a).data();
        T* yp = y.data();
        for (std::size_t i = 0; i < y.size(); ++i) yp[i] = ap[i] * s;
        return make(std::move(y), needs(a), [a, s](Graph& g, const Tensor<T>& dy) {
            if (g.needs(a)) g.accumulate(a, dy, s);
        });
    }

    int add_scalar(int a, T s) {
        Tensor<T> y(value(a).shape());
        const T* ap = value(a).data();
        T* yp = y.data();
        for (std::size_t i = 0; i < y.size(); ++i) yp[i] = ap[i] + s;
        return make(std::move(y), needs(a), [a](Graph& g, const Tensor<T>& dy) {
            if (g.needs(a)) g.accumulate(a, dy, T(1));
        });
    }

    // ---- activations ----

    int leaky_relu(int x, T slope) {
        Tensor<T> y(value(x).shape());
        const T* xp = value(x).data();
        T* yp = y.data();
        for (std::size_t i = 0; i < y.size(); ++i) yp[i] = xp[i] > T(0) ? xp[i] : slope * xp[i];
        return make(std::move(y), needs(x), [x, slope](Graph& g, const Tensor<T>& dy) {
            if (!g.needs(x)) return;
            Tensor<T>& dx = g.grad(x);
            const T* xp2 = g.value(x).data();
            for (std::size_t i = 0; i < dy.size(); ++i)
                dx[i] += dy[i] * (xp2[i] > T(0) ? T(1) : slope);
        });
    }

    int relu(int x) { return leaky_relu(x, T(0)); }

    int tanh_(int x) {
        Tensor<T> y(value(x).shape());
        const T* xp = value(x).data();
        T* yp = y.data();
        for (std::size_t i = 0; i < y.size(); ++i) yp[i] = std::tanh(xp[i]);
        Tensor<T> yv = y;  // shared storage
        return make(std::move(y), needs(x), [x, yv](Graph& g, const Tensor<T>& dy) {
            if (!g.needs(x)) return;
            Tensor<T>& dx = g.grad(x);
            for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (T(1) - yv[i] * yv[i]);
        });
    }

    int sigmoid(int x) {
        Tensor<T> y(value(x).shape());
        const T* xp = value(x).data();
        T* yp = y.data();
        for (std::size_t i = 0; i < y.size(); ++i) yp[i] = T(1) / (T(1) + std::exp(-xp[i]));
        Tensor<T> yv = y;
        return make(std::move(y), needs(x), [x, yv](Graph& g, const Tensor<T>& dy) {
            if (!g.needs(x)) return;
            Tensor<T>& dx = g.grad(x);
            for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * yv[i] * (T(1) - yv[i]);
        });
    }

    // ---- structured ops ----

    int conv2d(int x, int w, int b, int stride, int pad) {
        Tensor<T> cols;
        Tensor<T> y = kernels::conv2d(value(x), value(w), value(b), stride, pad,
                                      recording_ ? &cols : nullptr);
        return make(std::move(y), needs(x) || needs(w) || needs(b),
                    [x, w, b, stride, pad, cols](Graph& g, const Tensor<T>& dy) {
                        kernels::conv2d_backward(g.value(x), g.value(w), cols, dy, stride, pad,
                                                 g.grad(x), g.grad(w), g.grad(b));
                    });
    }

    int conv_transpose2d(int x, int w, int b, int stride, int pad) {
        Tensor<T> y = kernels::conv_transpose2d(value(x), value(w), value(b), stride, pad);
        return make(std::move(y), needs(x) || needs(w) || needs(b),
                    [x, w, b, stride, pad](Graph& g, const Tensor<T>& dy) {
                        kernels::conv_transpose2d_backward(g.value(x), g.value(w), dy, stride, pad,
                                                           g.grad(x), g.grad(w), g.grad(b));
                    });
    }

    int temporal_shift(int x, double fraction, kernels::ShiftMode mode) {
        Tensor<T> y = kernels::temporal_shift(value(x), fraction, mode);
        return make(std::move(y), needs(x), [x, fraction, mode](Graph& g, const Tensor<T>& dy) {
            if (!g.needs(x)) return;
            kernels::temporal_shift_backward(dy, fraction, mode, g.grad(x));
        });
    }

    // running_mean / running_var live outside the tape and are refreshed as a
    // forward side effect in training mode.
    int batchnorm(int x, int gamma, int beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                  bool training, bool affine, double momentum, double eps) {
        kernels::BnCache<T> cache;
        Tensor<T> y = kernels::batchnorm(value(x), value(gamma), value(beta), running_mean,
                                         running_var, training, affine, momentum, eps,
                                         recording_ ? &cache : nullptr);
        return make(std::move(y), needs(x) || needs(gamma) || needs(beta),
                    [x, gamma, beta, training, affine, cache](Graph& g, const Tensor<T>& dy) {
                        kernels::batchnorm_backward(dy, g.value(gamma), cache, training, affine,
                                                    g.grad(x), g.grad(gamma), g.grad(beta));
                    });
    }

    int global_avg_pool(int x) {
        Tensor<T> z = kernels::global_avg_pool(value(x));
        return make(std::move(z), needs(x), [x](Graph& g, const Tensor<T>& dz) {
            if (!g.needs(x)) return;
            Tensor<T>& dx = g.grad(x);
            const int c = dx.dim(dx.rank() - 1);
            const T inv = T(1) / static_cast<T>(dx.size() / static_cast<std::size_t>(c));
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dz[i % c] * inv;
        });
    }

    int channel_scale(int x, int s) {
        Tensor<T> y = kernels::channel_scale(value(x), value(s));
        return make(std::move(y), needs(x) || needs(s), [x, s](Graph& g, const Tensor<T>& dy) {
            const int c = static_cast<int>(g.value(s).size());
            if (g.needs(x)) {
                Tensor<T>& dx = g.grad(x);
                const T* sp = g.value(s).data();
                for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * sp[i % c];
            }
            if (g.needs(s)) {
                Tensor<T>& ds = g.grad(s);
                const T* xp = g.value(x).data();
                for (std::size_t i = 0; i < dy.size(); ++i) ds[i % c] += dy[i] * xp[i];
            }
        });
    }

    // x {K,C} @ w {C,D} (+ optional bias {D} when b >= 0)
    int matmul(int x, int w, int b = -1) {
        const Tensor<T>& xv = value(x);
        const Tensor<T>& wv = value(w);
        if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0))
            throw std::invalid_argument("matmul: incompatible shapes " +
                                        shape_str(xv.shape()) + " @ " + shape_str(wv.shape()));
        const int k = xv.dim(0), c = xv.dim(1), d = wv.dim(1);
        Tensor<T> y({k, d});
        kernels::MatMap<T>(y.data(), k, d).noalias() =
            kernels::ConstMatMap<T>(xv.data(), k, c) * kernels::ConstMatMap<T>(wv.data(), c, d);
        if (b >= 0) {
            const T* bp = value(b).data();
            T* yp = y.data();
            for (int r = 0; r < k; ++r)
                for (int j = 0; j < d; ++j) yp[static_cast<std::size_t>(r) * d + j] += bp[j];
        }
        return make(std::move(y), needs(x) || needs(w) || (b >= 0 && needs(b)),
                    [x, w, b, k, c, d](Graph& g, const Tensor<T>& dy) {
                        if (g.needs(x))
                            kernels::MatMap<T>(g.grad(x).data(), k, c).noalias() +=
                                kernels::ConstMatMap<T>(dy.data(), k, d) *
                                kernels::ConstMatMap<T>(g.value(w).data(), c, d).transpose();
                        if (g.needs(w))
                            kernels::MatMap<T>(g.grad(w).data(), c, d).noalias() +=
                                kernels::ConstMatMap<T>(g.value(x).data(), k, c).transpose() *
                                kernels::ConstMatMap<T>(dy.data(), k, d);
                        if (b >= 0 && g.needs(b)) {
                            Tensor<T>& db = g.grad(b);
                            for (int r = 0; r < k; ++r)
                                for (int j = 0; j < d; ++j)
                                    db[j] += dy[static_cast<std::size_t>(r) * d + j];
                        }
                    });
    }

    int softmax_rows(int x) {
        const Tensor<T>& xv = value(x);
        const int k = xv.dim(0), m = xv.dim(1);
        Tensor<T> y({k, m});
        for (int r = 0; r < k; ++r) {
            const T* row = xv.data() + static_cast<std::size_t>(r) * m;
            T* out = y.data() + static_cast<std::size_t>(r) * m;
            T mx = row[0];
            for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
            T sum = T(0);
            for (int j = 0; j < m; ++j) {
                out[j] = std::exp(row[j] - mx);
                sum += out[j];
            }
            for (int j = 0; j < m; ++j) out[j] /= sum;
        }
        Tensor<T> yv = y;
        return make(std::move(y), needs(x), [x, yv, k, m](Graph& g, const Tensor<T>& dy) {
            if (!g.needs(x)) return;
            Tensor<T>& dx = g.grad(x);
            for (int r = 0; r < k; ++r) {
                const std::size_t o = static_cast<std::size_t>(r) * m;
                T dot = T(0);
                for (int j = 0; j < m; ++j) dot += dy[o + j] * yv[o + j];
                for (int j = 0; j < m; ++j) dx[o + j] += yv[o + j] * (dy[o + j] - dot);
            }
        });
    }

    // Row-wise x / max(||x||, tiny).
    int l2_normalize_rows(int x) {
        const Tensor<T>& xv = value(x);
        const int k = xv.dim(0), c = xv.dim(1);
        Tensor<T> y({k, c});
        std::vector<T> norms(static_cast<std::size_t>(k));
        for (int r = 0; r < k; ++r) {
            const T* row = xv.data() + static_cast<std::size_t>(r) * c;
            T n2 = T(0);
            for (int j = 0; j < c; ++j) n2 += row[j] * row[j];
            const T n = std::max(std::sqrt(n2), static_cast<T>(1e-12));
            norms[static_cast<std::size_t>(r)] = n;
            T* out = y.data() + static_cast<std::size_t>(r) * c;
            for (int j = 0; j < c; ++j) out[j] = row[j] / n;
        }
        Tensor<T> yv = y;
        return make(std::move(y), needs(x), [x, yv, k, c, norms](Graph& g, const Tensor<T>& dy) {
            if (!g.needs(x)) return;
            Tensor<T>& dx = g.grad(x);
            for (int r = 0; r < k; ++r) {
                const std::size_t o = static_cast<std::size_t>(r) * c;
                T dot = T(0);
                for (int j = 0; j < c; ++j) dot += dy[o + j] * yv[o + j];
                const T inv = T(1) / norms[static_cast<std::size_t>(r)];
                for (int j = 0; j < c; ++j) dx[o + j] += (dy[o + j] - yv[o + j] * dot) * inv;
            }
        });
    }

    int rowsum(int x) {
        const Tensor<T>& xv = value(x);
        const int k = xv.dim(0), c = xv.dim(1);
        Tensor<T> y({k});
        for (int r = 0; r < k; ++r) {
            T s = T(0);
            for (int j = 0; j < c; ++j) s += xv[static_cast<std::size_t>(r) * c + j];
            y[static_cast<std::size_t>(r)] = s;
        }
        return make(std::move(y), needs(x), [x, k, c](Graph& g, const Tensor<T>& dy) {
            if (!g.needs(x)) return;
            Tensor<T>& dx = g.grad(x);
            for (int r = 0; r < k; ++r)
                for (int j = 0; j < c; ++j) dx[static_cast<std::size_t>(r) * c + j] += dy[r];
        });
    }

    int mean_all(int x) {
        const Tensor<T>& xv = value(x);
        T s = T(0);
        for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
        const T inv = T(1) / static_cast<T>(xv.size());
        Tensor<T> y({1});
        y[0] = s * inv;
        return make(std::move(y), needs(x), [x, inv](Graph& g, const Tensor<T>& dy) {
            if (!g.needs(x)) return;
            const T d = dy[0] * inv;
            Tensor<T>& dx = g.grad(x);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d;
        });
    }

    int sum_all(int x) {
        const Tensor<T>& xv = value(x);
        T s = T(0);
        for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
        Tensor<T> y({1});
        y[0] = s;
        return make(std::move(y), needs(x), [x](Graph& g, const Tensor<T>& dy) {
            if (!g.needs(x)) return;
            const T d = dy[0];
            Tensor<T>& dx = g.grad(x);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d;
        });
    }

    int concat_channels(const std::vector<int>& xs) {
        if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
        const Tensor<T>& first = value(xs[0]);
        const int tdim = first.dim(0), h = first.dim(1), w = first.dim(2);
        int ctotal = 0;
        bool any = false;
        for (int x : xs) {
            const Tensor<T>& v = value(x);
            if (v.dim(0) != tdim || v.dim(1) != h || v.dim(2) != w)
                throw std::invalid_argument("concat_channels: spatial shapes differ");
            ctotal += v.dim(3);
            any = any || needs(x);
        }
        Tensor<T> y({tdim, h, w, ctotal});
        const std::size_t positions = static_cast<std::size_t>(tdim) * h * w;
        int off = 0;
        for (int x : xs) {
            const Tensor<T>& v = value(x);
            const int c = v.dim(3);
            for (std::size_t s = 0; s < positions; ++s)
                std::copy(v.data() + s * c, v.data() + s * c + c, y.data() + s * ctotal + off);
            off += c;
        }
        return make(std::move(y), any, [xs, ctotal, positions](Graph& g, const Tensor<T>& dy) {
            int off2 = 0;
            for (int x : xs) {
                const int c = g.value(x).dim(3);
                if (g.needs(x)) {
                    Tensor<T>& dx = g.grad(x);
                    for (std::size_t s = 0; s < positions; ++s)
                        for (int j = 0; j < c; ++j) dx[s * c + j] += dy[s * ctotal + off2 + j];
                }
                off2 += c;
            }
        });
    }

    int merge_time(int x) {
        const int tdim = value(x).dim(0);
        Tensor<T> y = kernels::merge_time(value(x));
        return make(std::move(y), needs(x), [x, tdim](Graph& g, const Tensor<T>& dy) {
            if (!g.needs(x)) return;
            kernels::merge_time_backward(dy, tdim, g.grad(x));
        });
    }

    int slice_time_last(int x) {
        const Tensor<T>& xv = value(x);
        const int tdim = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
        const std::size_t plane = static_cast<std::size_t>(h) * w * c;
        Tensor<T> y({1, h, w, c});
        std::copy(xv.data() + (tdim - 1) * plane, xv.data() + tdim * plane, y.data());
        return make(std::move(y), needs(x), [x, tdim, plane](Graph& g, const Tensor<T>& dy) {
            if (!g.needs(x)) return;
            Tensor<T>& dx = g.grad(x);
            for (std::size_t i = 0; i < plane; ++i) dx[(tdim - 1) * plane + i] += dy[i];
        });
    }

    // Pure view: same flat data, new axes.
    int reshape(int x, std::vector<int> shape) {
        Tensor<T> y = value(x).reshaped(std::move(shape));
        return make(std::move(y), needs(x), [x](Graph& g, const Tensor<T>& dy) {
            if (!g.needs(x)) return;
            Tensor<T>& dx = g.grad(x);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
        });
    }

    std::size_t node_count() const { return nodes_.size(); }

    bool needs(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

private:
    bool recording_;
    std::vector<Node> nodes_;

    void check_same(int a, int b, const char* op) const {
        if (!same_shape(value(a), value(b)))
            throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                        shape_str(value(a).shape()) + " vs " +
                                        shape_str(value(b).shape()));
    }

    void accumulate(int id, const Tensor<T>& dy, T factor) {
        Tensor<T>& dst = grad(id);
        for (std::size_t i = 0; i < dy.size(); ++i) dst[i] += factor * dy[i];
    }

    int make(Tensor<T> value, bool needs_grad, BackwardFn backward) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = recording_ && needs_grad;
        if (n.needs_grad && backward) n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }
};

}  // namespace stvad
