#pragma once

#include <algorithm>
#include <cmath>

#include "mhaunet/autograd.hpp"

// Elementwise, activation, reduction, normalization and structural ops.
// Convolution-family ops live in conv.hpp, the frequency-domain filter in
// spectral.hpp.

namespace mha {

namespace detail {

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* who) {
    check_shape(a->value.same_shape(b->value),
                std::string(who) + ": shape mismatch " + a->value.shape_str() + " vs " +
                    b->value.shape_str());
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape(a, b, "add");
    Tensor<T> out(a->value.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
    return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
        if (self.parents[0]->requires_grad) accum(*self.parents[0], self.grad);
        if (self.parents[1]->requires_grad) accum(*self.parents[1], self.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor<T> out(a->value.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i];
    return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
        if (self.parents[0]->requires_grad) accum(*self.parents[0], self.grad);
        if (self.parents[1]->requires_grad) {
            Tensor<T>& gb = self.parents[1]->grad_buf();
            for (int64_t i = 0; i < self.grad.numel(); ++i) gb[i] -= self.grad[i];
        }
    });
}

// Hadamard product; the gating primitive of the interaction recursion.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor<T> out(a->value.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
    return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        const int64_t m = self.grad.numel();
        if (pa.requires_grad) {
            Tensor<T>& ga = pa.grad_buf();
            for (int64_t i = 0; i < m; ++i) ga[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            Tensor<T>& gb = pb.grad_buf();
            for (int64_t i = 0; i < m; ++i) gb[i] += self.grad[i] * pa.value[i];
        }
    });
}

// Elementwise quotient; used for scalar (1-element) loss arithmetic.
template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape(a, b, "div");
    Tensor<T> out(a->value.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] / b->value[i];
    return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        const int64_t m = self.grad.numel();
        if (pa.requires_grad) {
            Tensor<T>& ga = pa.grad_buf();
            for (int64_t i = 0; i < m; ++i) ga[i] += self.grad[i] / pb.value[i];
        }
        if (pb.requires_grad) {
            Tensor<T>& gb = pb.grad_buf();
            for (int64_t i = 0; i < m; ++i)
                gb[i] -= self.grad[i] * pa.value[i] / (pb.value[i] * pb.value[i]);
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out(a->value.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * s;
    return make_node<T>(std::move(out), {a}, [s](Node<T>& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor<T>& g = self.parents[0]->grad_buf();
        for (int64_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i] * s;
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
    Tensor<T> out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + s;
    return make_node<T>(std::move(out), {a}, [](Node<T>& self) {
        if (self.parents[0]->requires_grad) accum(*self.parents[0], self.grad);
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out(a->value.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = T(1) / (T(1) + std::exp(-a->value[i]));
    return make_node<T>(std::move(out), {a}, [](Node<T>& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor<T>& g = self.parents[0]->grad_buf();
        for (int64_t i = 0; i < self.grad.numel(); ++i) {
            const T y = self.value[i];
            g[i] += self.grad[i] * y * (T(1) - y);
        }
    });
}

// Exact (erf) GELU; smooth everywhere, which keeps finite-difference
// gradient checks clean.
template <typename T>
Var<T> gelu(const Var<T>& a) {
    constexpr T inv_sqrt2 = T(0.7071067811865475244);
    Tensor<T> out(a->value.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) {
        const T x = a->value[i];
        out[i] = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
    }
    return make_node<T>(std::move(out), {a}, [](Node<T>& self) {
        if (!self.parents[0]->requires_grad) return;
        constexpr T is2 = T(0.7071067811865475244);
        constexpr T inv_sqrt2pi = T(0.3989422804014326779);
        Tensor<T>& g = self.parents[0]->grad_buf();
        for (int64_t i = 0; i < self.grad.numel(); ++i) {
            const T x = self.parents[0]->value[i];
            const T cdf = T(0.5) * (T(1) + std::erf(x * is2));
            const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
            g[i] += self.grad[i] * (cdf + x * pdf);
        }
    });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    T s = 0;
    for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
    return make_node<T>(Tensor<T>::scalar(s), {a}, [](Node<T>& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor<T>& g = self.parents[0]->grad_buf();
        const T go = self.grad[0];
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += go;
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    const T inv = T(1) / static_cast<T>(a->value.numel());
    return scale(sum_all(a), inv);
}

// Concatenate along the channel axis.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
    check_shape(!xs.empty(), "concat_channels: empty input list");
    const int n = batch_of(xs[0]->value), h = height_of(xs[0]->value), w = width_of(xs[0]->value);
    int ctot = 0;
    for (const auto& x : xs) {
        check_nchw(x->value, "concat_channels");
        check_shape(batch_of(x->value) == n && height_of(x->value) == h &&
                        width_of(x->value) == w,
                    "concat_channels: mismatched batch/spatial dims");
        ctot += channels_of(x->value);
    }
    Tensor<T> out({n, ctot, h, w});
    const int64_t plane = int64_t(h) * w;
    int coff = 0;
    for (const auto& x : xs) {
        const int c = channels_of(x->value);
        for (int b = 0; b < n; ++b)
            std::copy_n(x->value.data() + (int64_t(b) * c) * plane, int64_t(c) * plane,
                        out.data() + (int64_t(b) * ctot + coff) * plane);
        coff += c;
    }
    std::vector<Var<T>> parents(xs.begin(), xs.end());
    return make_node<T>(std::move(out), std::move(parents), [n, h, w](Node<T>& self) {
        const int ctot = channels_of(self.value);
        const int64_t plane = int64_t(h) * w;
        int coff = 0;
        for (auto& p : self.parents) {
            const int c = channels_of(p->value);
            if (p->requires_grad) {
                Tensor<T>& g = p->grad_buf();
                for (int b = 0; b < n; ++b) {
                    const T* src = self.grad.data() + (int64_t(b) * ctot + coff) * plane;
                    T* dst = g.data() + (int64_t(b) * c) * plane;
                    for (int64_t i = 0; i < int64_t(c) * plane; ++i) dst[i] += src[i];
                }
            }
            coff += c;
        }
    });
}

// Channel slice [start, start+len).
template <typename T>
Var<T> narrow_channels(const Var<T>& x, int start, int len) {
    check_nchw(x->value, "narrow_channels");
    const int n = batch_of(x->value), c = channels_of(x->value), h = height_of(x->value),
              w = width_of(x->value);
    check_shape(start >= 0 && len > 0 && start + len <= c, "narrow_channels: slice out of range");
    Tensor<T> out({n, len, h, w});
    const int64_t plane = int64_t(h) * w;
    for (int b = 0; b < n; ++b)
        std::copy_n(x->value.data() + (int64_t(b) * c + start) * plane, int64_t(len) * plane,
                    out.data() + (int64_t(b) * len) * plane);
    return make_node<T>(std::move(out), {x}, [start, len](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        const int n = batch_of(p.value), c = channels_of(p.value);
        const int64_t plane = int64_t(height_of(p.value)) * width_of(p.value);
        Tensor<T>& g = p.grad_buf();
        for (int b = 0; b < n; ++b) {
            const T* src = self.grad.data() + (int64_t(b) * len) * plane;
            T* dst = g.data() + (int64_t(b) * c + start) * plane;
            for (int64_t i = 0; i < int64_t(len) * plane; ++i) dst[i] += src[i];
        }
    });
}

// Softmax over the channel dimension at each (n, h, w) site.
template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
    check_nchw(x->value, "softmax_channels");
    const int n = batch_of(x->value), c = channels_of(x->value), h = height_of(x->value),
              w = width_of(x->value);
    Tensor<T> out(x->value.shape());
    const int64_t plane = int64_t(h) * w;
    for (int b = 0; b < n; ++b)
        for (int64_t p = 0; p < plane; ++p) {
            const T* xi = x->value.data() + int64_t(b) * c * plane + p;
            T* yi = out.data() + int64_t(b) * c * plane + p;
            T mx = xi[0];
            for (int k = 1; k < c; ++k) mx = std::max(mx, xi[int64_t(k) * plane]);
            T s = 0;
            for (int k = 0; k < c; ++k) {
                const T e = std::exp(xi[int64_t(k) * plane] - mx);
                yi[int64_t(k) * plane] = e;
                s += e;
            }
            for (int k = 0; k < c; ++k) yi[int64_t(k) * plane] /= s;
        }
    return make_node<T>(std::move(out), {x}, [n, c, plane](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor<T>& g = p.grad_buf();
        for (int b = 0; b < n; ++b)
            for (int64_t s = 0; s < plane; ++s) {
                const T* y = self.value.data() + int64_t(b) * c * plane + s;
                const T* go = self.grad.data() + int64_t(b) * c * plane + s;
                T* gi = g.data() + int64_t(b) * c * plane + s;
                T dot = 0;
                for (int k = 0; k < c; ++k) dot += go[int64_t(k) * plane] * y[int64_t(k) * plane];
                for (int k = 0; k < c; ++k)
                    gi[int64_t(k) * plane] +=
                        y[int64_t(k) * plane] * (go[int64_t(k) * plane] - dot);
            }
    });
}

// Divide each (n, c) plane by its spatial sum plus eps. Inputs are expected
// non-negative (softmax output), making this an L1 normalization over the
// token axis.
template <typename T>
Var<T> normalize_spatial_sum(const Var<T>& x, T eps) {
    check_nchw(x->value, "normalize_spatial_sum");
    const int n = batch_of(x->value), c = channels_of(x->value);
    const int64_t plane = int64_t(height_of(x->value)) * width_of(x->value);
    Tensor<T> out(x->value.shape());
    Tensor<T> sums({n, c});
    for (int b = 0; b < n; ++b)
        for (int k = 0; k < c; ++k) {
            const T* xi = x->value.data() + (int64_t(b) * c + k) * plane;
            T s = 0;
            for (int64_t i = 0; i < plane; ++i) s += xi[i];
            s += eps;
            sums[int64_t(b) * c + k] = s;
            T* yi = out.data() + (int64_t(b) * c + k) * plane;
            for (int64_t i = 0; i < plane; ++i) yi[i] = xi[i] / s;
        }
    return make_node<T>(std::move(out), {x}, [n, c, plane, sums](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor<T>& g = p.grad_buf();
        for (int b = 0; b < n; ++b)
            for (int k = 0; k < c; ++k) {
                const T s = sums[int64_t(b) * c + k];
                const T* go = self.grad.data() + (int64_t(b) * c + k) * plane;
                const T* xi = p.value.data() + (int64_t(b) * c + k) * plane;
                T* gi = g.data() + (int64_t(b) * c + k) * plane;
                T dot = 0;
                for (int64_t i = 0; i < plane; ++i) dot += go[i] * xi[i];
                dot /= s * s;
                for (int64_t i = 0; i < plane; ++i) gi[i] += go[i] / s - dot;
            }
    });
}

// Per-channel mean over the channel axis -> (N, 1, H, W).
template <typename T>
Var<T> mean_channels(const Var<T>& x) {
    check_nchw(x->value, "mean_channels");
    const int n = batch_of(x->value), c = channels_of(x->value), h = height_of(x->value),
              w = width_of(x->value);
    Tensor<T> out({n, 1, h, w});
    const int64_t plane = int64_t(h) * w;
    const T inv = T(1) / static_cast<T>(c);
    for (int b = 0; b < n; ++b)
        for (int64_t p = 0; p < plane; ++p) {
            T s = 0;
            for (int k = 0; k < c; ++k) s += x->value[(int64_t(b) * c + k) * plane + p];
            out[int64_t(b) * plane + p] = s * inv;
        }
    return make_node<T>(std::move(out), {x}, [n, c, plane, inv](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor<T>& g = p.grad_buf();
        for (int b = 0; b < n; ++b)
            for (int64_t s = 0; s < plane; ++s) {
                const T go = self.grad[int64_t(b) * plane + s] * inv;
                for (int k = 0; k < c; ++k) g[(int64_t(b) * c + k) * plane + s] += go;
            }
    });
}

// Per-site max over the channel axis -> (N, 1, H, W); argmax routes the grad.
template <typename T>
Var<T> max_channels(const Var<T>& x) {
    check_nchw(x->value, "max_channels");
    const int n = batch_of(x->value), c = channels_of(x->value), h = height_of(x->value),
              w = width_of(x->value);
    const int64_t plane = int64_t(h) * w;
    Tensor<T> out({n, 1, h, w});
    std::vector<int> arg(static_cast<size_t>(int64_t(n) * plane));
    for (int b = 0; b < n; ++b)
        for (int64_t p = 0; p < plane; ++p) {
            T best = x->value[(int64_t(b) * c) * plane + p];
            int bi = 0;
            for (int k = 1; k < c; ++k) {
                const T v = x->value[(int64_t(b) * c + k) * plane + p];
                if (v > best) { best = v; bi = k; }
            }
            out[int64_t(b) * plane + p] = best;
            arg[static_cast<size_t>(int64_t(b) * plane + p)] = bi;
        }
    return make_node<T>(std::move(out), {x}, [n, c, plane, arg](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor<T>& g = p.grad_buf();
        for (int b = 0; b < n; ++b)
            for (int64_t s = 0; s < plane; ++s) {
                const int k = arg[static_cast<size_t>(int64_t(b) * plane + s)];
                g[(int64_t(b) * c + k) * plane + s] += self.grad[int64_t(b) * plane + s];
            }
    });
}

// Broadcast a (N, C, 1, 1) gate over the spatial extent of x and multiply.
template <typename T>
Var<T> mul_broadcast_hw(const Var<T>& x, const Var<T>& gate) {
    check_nchw(x->value, "mul_broadcast_hw");
    check_shape(gate->value.ndim() == 4 && height_of(gate->value) == 1 &&
                    width_of(gate->value) == 1 && batch_of(gate->value) == batch_of(x->value) &&
                    channels_of(gate->value) == channels_of(x->value),
                "mul_broadcast_hw: gate must be (N, C, 1, 1)");
    const int n = batch_of(x->value), c = channels_of(x->value);
    const int64_t plane = int64_t(height_of(x->value)) * width_of(x->value);
    Tensor<T> out(x->value.shape());
    for (int b = 0; b < n; ++b)
        for (int k = 0; k < c; ++k) {
            const T gv = gate->value[int64_t(b) * c + k];
            const T* xi = x->value.data() + (int64_t(b) * c + k) * plane;
            T* yi = out.data() + (int64_t(b) * c + k) * plane;
            for (int64_t i = 0; i < plane; ++i) yi[i] = xi[i] * gv;
        }
    return make_node<T>(std::move(out), {x, gate}, [n, c, plane](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        Node<T>& pg = *self.parents[1];
        if (px.requires_grad) {
            Tensor<T>& g = px.grad_buf();
            for (int b = 0; b < n; ++b)
                for (int k = 0; k < c; ++k) {
                    const T gv = pg.value[int64_t(b) * c + k];
                    const T* go = self.grad.data() + (int64_t(b) * c + k) * plane;
                    T* gi = g.data() + (int64_t(b) * c + k) * plane;
                    for (int64_t i = 0; i < plane; ++i) gi[i] += go[i] * gv;
                }
        }
        if (pg.requires_grad) {
            Tensor<T>& g = pg.grad_buf();
            for (int b = 0; b < n; ++b)
                for (int k = 0; k < c; ++k) {
                    const T* go = self.grad.data() + (int64_t(b) * c + k) * plane;
                    const T* xi = px.value.data() + (int64_t(b) * c + k) * plane;
                    T s = 0;
                    for (int64_t i = 0; i < plane; ++i) s += go[i] * xi[i];
                    g[int64_t(b) * c + k] += s;
                }
        }
    });
}

// Channels-last layer normalization: normalize over C at each (n, h, w)
// site, then per-channel affine.
template <typename T>
Var<T> layer_norm_channels(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
    check_nchw(x->value, "layer_norm_channels");
    const int n = batch_of(x->value), c = channels_of(x->value), h = height_of(x->value),
              w = width_of(x->value);
    check_shape(gamma->value.numel() == c && beta->value.numel() == c,
                "layer_norm_channels: affine params must have C elements");
    const int64_t plane = int64_t(h) * w;
    Tensor<T> out(x->value.shape());
    Tensor<T> xhat(x->value.shape());
    Tensor<T> rstd({n, h, w});
    for (int b = 0; b < n; ++b)
        for (int64_t p = 0; p < plane; ++p) {
            const T* xi = x->value.data() + int64_t(b) * c * plane + p;
            T mean = 0;
            for (int k = 0; k < c; ++k) mean += xi[int64_t(k) * plane];
            mean /= c;
            T var = 0;
            for (int k = 0; k < c; ++k) {
                const T d = xi[int64_t(k) * plane] - mean;
                var += d * d;
            }
            var /= c;
            const T rs = T(1) / std::sqrt(var + eps);
            rstd[int64_t(b) * plane + p] = rs;
            for (int k = 0; k < c; ++k) {
                const T xh = (xi[int64_t(k) * plane] - mean) * rs;
                xhat[int64_t(b) * c * plane + int64_t(k) * plane + p] = xh;
                out[int64_t(b) * c * plane + int64_t(k) * plane + p] =
                    xh * gamma->value[k] + beta->value[k];
            }
        }
    return make_node<T>(
        std::move(out), {x, gamma, beta}, [n, c, plane, xhat, rstd](Node<T>& self) {
            Node<T>& px = *self.parents[0];
            Node<T>& pg = *self.parents[1];
            Node<T>& pb = *self.parents[2];
            if (pg.requires_grad) {
                Tensor<T>& g = pg.grad_buf();
                for (int b = 0; b < n; ++b)
                    for (int k = 0; k < c; ++k) {
                        const T* go = self.grad.data() + (int64_t(b) * c + k) * plane;
                        const T* xh = xhat.data() + (int64_t(b) * c + k) * plane;
                        T s = 0;
                        for (int64_t i = 0; i < plane; ++i) s += go[i] * xh[i];
                        g[k] += s;
                    }
            }
            if (pb.requires_grad) {
                Tensor<T>& g = pb.grad_buf();
                for (int b = 0; b < n; ++b)
                    for (int k = 0; k < c; ++k) {
                        const T* go = self.grad.data() + (int64_t(b) * c + k) * plane;
                        T s = 0;
                        for (int64_t i = 0; i < plane; ++i) s += go[i];
                        g[k] += s;
                    }
            }
            if (px.requires_grad) {
                Tensor<T>& g = px.grad_buf();
                for (int b = 0; b < n; ++b)
                    for (int64_t p = 0; p < plane; ++p) {
                        // dL/dx = rs/C * (C*gy - sum(gy) - xhat * sum(gy*xhat)),
                        // gy = go * gamma
                        T sum_gy = 0, sum_gyx = 0;
                        for (int k = 0; k < c; ++k) {
                            const int64_t idx = int64_t(b) * c * plane + int64_t(k) * plane + p;
                            const T gy = self.grad[idx] * pg.value[k];
                            sum_gy += gy;
                            sum_gyx += gy * xhat[idx];
                        }
                        const T rs = rstd[int64_t(b) * plane + p];
                        for (int k = 0; k < c; ++k) {
                            const int64_t idx = int64_t(b) * c * plane + int64_t(k) * plane + p;
                            const T gy = self.grad[idx] * pg.value[k];
                            g[idx] += rs * (gy - (sum_gy + xhat[idx] * sum_gyx) / static_cast<T>(c));
                        }
                    }
            }
        });
}

// Inverted dropout; mask is sampled outside so the op stays deterministic.
template <typename T>
Var<T> dropout_with_mask(const Var<T>& x, Tensor<T> mask) {
    detail::check_same_shape(x, make_leaf(mask), "dropout_with_mask");
    Tensor<T> out(x->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] * mask[i];
    return make_node<T>(std::move(out), {x}, [mask](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor<T>& g = p.grad_buf();
        for (int64_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

}  // namespace mha
