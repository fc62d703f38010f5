#pragma once

#include "mhaunet/autograd.hpp"
#include "mhaunet/blas.hpp"

// Stride-1 2-D convolution (im2col + GEMM, grouped), pooling and
// upsampling kernels. Downsampling in the model is done by pooling, so a
// strided conv path is not needed.

namespace mha {

namespace detail {

template <typename T>
void im2col(const T* src, int ci, int h, int w, int kh, int kw, int ph, int pw, T* cols) {
    // cols layout: (ci*kh*kw, h*w)
    const int64_t plane = int64_t(h) * w;
    int64_t row = 0;
    for (int c = 0; c < ci; ++c)
        for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx, ++row) {
                T* out = cols + row * plane;
                const T* in = src + int64_t(c) * plane;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy - ph;
                    if (sy < 0 || sy >= h) {
                        std::fill_n(out + int64_t(y) * w, w, T(0));
                        continue;
                    }
                    const T* in_row = in + int64_t(sy) * w;
                    T* out_row = out + int64_t(y) * w;
                    for (int x = 0; x < w; ++x) {
                        const int sx = x + dx - pw;
                        out_row[x] = (sx < 0 || sx >= w) ? T(0) : in_row[sx];
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* cols, int ci, int h, int w, int kh, int kw, int ph, int pw, T* dst) {
    const int64_t plane = int64_t(h) * w;
    int64_t row = 0;
    for (int c = 0; c < ci; ++c)
        for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx, ++row) {
                const T* in = cols + row * plane;
                T* out = dst + int64_t(c) * plane;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy - ph;
                    if (sy < 0 || sy >= h) continue;
                    const T* in_row = in + int64_t(y) * w;
                    T* out_row = out + int64_t(sy) * w;
                    for (int x = 0; x < w; ++x) {
                        const int sx = x + dx - pw;
                        if (sx >= 0 && sx < w) out_row[sx] += in_row[x];
                    }
                }
            }
}

template <typename T>
void depthwise_forward(const T* src, const T* wgt, int c, int h, int w, int kh, int kw, int ph,
                       int pw, T* dst) {
    const int64_t plane = int64_t(h) * w;
    for (int ch = 0; ch < c; ++ch) {
        const T* in = src + int64_t(ch) * plane;
        const T* k = wgt + int64_t(ch) * kh * kw;
        T* out = dst + int64_t(ch) * plane;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                T acc = 0;
                for (int dy = 0; dy < kh; ++dy) {
                    const int sy = y + dy - ph;
                    if (sy < 0 || sy >= h) continue;
                    for (int dx = 0; dx < kw; ++dx) {
                        const int sx = x + dx - pw;
                        if (sx < 0 || sx >= w) continue;
                        acc += in[int64_t(sy) * w + sx] * k[dy * kw + dx];
                    }
                }
                out[int64_t(y) * w + x] = acc;
            }
    }
}

}  // namespace detail

// x: (N, Ci, H, W); weight: (Co, Ci/groups, kh, kw); bias: (Co) or empty.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int groups = 1) {
    check_nchw(x->value, "conv2d input");
    check_shape(weight->value.ndim() == 4, "conv2d: weight must be (Co, Ci/g, kh, kw)");
    const int n = batch_of(x->value), ci = channels_of(x->value), h = height_of(x->value),
              w = width_of(x->value);
    const int co = weight->value.dim(0), cig = weight->value.dim(1), kh = weight->value.dim(2),
              kw = weight->value.dim(3);
    check_shape(groups >= 1 && ci % groups == 0 && co % groups == 0,
                "conv2d: channels not divisible by groups");
    check_shape(cig == ci / groups, "conv2d: weight input-channel extent " +
                                        std::to_string(cig) + " does not match input " +
                                        std::to_string(ci) + "/" + std::to_string(groups));
    const bool has_bias = bias && bias->value.defined() && bias->value.numel() > 0;
    if (has_bias)
        check_shape(bias->value.numel() == co, "conv2d: bias must have Co elements");
    const int ph = kh / 2, pw = kw / 2;
    const int64_t plane = int64_t(h) * w;

    Tensor<T> out({n, co, h, w});
    const bool depthwise = (groups == ci && ci == co);
    std::vector<T> cols;
    if (!depthwise) cols.resize(static_cast<size_t>(int64_t(cig) * kh * kw * plane));

    for (int b = 0; b < n; ++b) {
        if (depthwise) {
            detail::depthwise_forward(x->value.data() + int64_t(b) * ci * plane,
                                      weight->value.data(), ci, h, w, kh, kw, ph, pw,
                                      out.data() + int64_t(b) * co * plane);
        } else {
            for (int g = 0; g < groups; ++g) {
                detail::im2col(x->value.data() + (int64_t(b) * ci + int64_t(g) * cig) * plane, cig,
                               h, w, kh, kw, ph, pw, cols.data());
                gemm(false, false, co / groups, static_cast<int>(plane), cig * kh * kw, T(1),
                     weight->value.data() + int64_t(g) * (co / groups) * cig * kh * kw,
                     cig * kh * kw, cols.data(), static_cast<int>(plane), T(0),
                     out.data() + (int64_t(b) * co + int64_t(g) * (co / groups)) * plane,
                     static_cast<int>(plane));
            }
        }
        if (has_bias)
            for (int c = 0; c < co; ++c) {
                T* o = out.data() + (int64_t(b) * co + c) * plane;
                const T bv = bias->value[c];
                for (int64_t i = 0; i < plane; ++i) o[i] += bv;
            }
    }

    std::vector<Var<T>> parents = has_bias ? std::vector<Var<T>>{x, weight, bias}
                                           : std::vector<Var<T>>{x, weight};
    return make_node<T>(
        std::move(out), std::move(parents), [groups, has_bias](Node<T>& self) {
            Node<T>& px = *self.parents[0];
            Node<T>& pw_ = *self.parents[1];
            const int n = batch_of(px.value), ci = channels_of(px.value),
                      h = height_of(px.value), w = width_of(px.value);
            const int co = pw_.value.dim(0), cig = pw_.value.dim(1), kh = pw_.value.dim(2),
                      kw = pw_.value.dim(3);
            const int ph = kh / 2, pw2 = kw / 2;
            const int64_t plane = int64_t(h) * w;
            const int cog = co / groups;
            const bool depthwise = (groups == ci && ci == co);

            if (has_bias && self.parents[2]->requires_grad) {
                Tensor<T>& gb = self.parents[2]->grad_buf();
                for (int b = 0; b < n; ++b)
                    for (int c = 0; c < co; ++c) {
                        const T* go = self.grad.data() + (int64_t(b) * co + c) * plane;
                        T s = 0;
                        for (int64_t i = 0; i < plane; ++i) s += go[i];
                        gb[c] += s;
                    }
            }

            if (depthwise) {
                for (int b = 0; b < n; ++b) {
                    const T* go = self.grad.data() + int64_t(b) * co * plane;
                    const T* xin = px.value.data() + int64_t(b) * ci * plane;
                    if (pw_.requires_grad) {
                        Tensor<T>& gw = pw_.grad_buf();
                        for (int c = 0; c < ci; ++c)
                            for (int dy = 0; dy < kh; ++dy)
                                for (int dx = 0; dx < kw; ++dx) {
                                    T acc = 0;
                                    for (int y = 0; y < h; ++y) {
                                        const int sy = y + dy - ph;
                                        if (sy < 0 || sy >= h) continue;
                                        for (int x2 = 0; x2 < w; ++x2) {
                                            const int sx = x2 + dx - pw2;
                                            if (sx < 0 || sx >= w) continue;
                                            acc += go[(int64_t(c) * h + y) * w + x2] *
                                                   xin[(int64_t(c) * h + sy) * w + sx];
                                        }
                                    }
                                    gw[(int64_t(c) * kh + dy) * kw + dx] += acc;
                                }
                    }
                    if (px.requires_grad) {
                        Tensor<T>& gx = px.grad_buf();
                        T* gxi = gx.data() + int64_t(b) * ci * plane;
                        for (int c = 0; c < ci; ++c) {
                            const T* k = pw_.value.data() + int64_t(c) * kh * kw;
                            for (int y = 0; y < h; ++y)
                                for (int x2 = 0; x2 < w; ++x2) {
                                    const T g = go[(int64_t(c) * h + y) * w + x2];
                                    if (g == T(0)) continue;
                                    for (int dy = 0; dy < kh; ++dy) {
                                        const int sy = y + dy - ph;
                                        if (sy < 0 || sy >= h) continue;
                                        for (int dx = 0; dx < kw; ++dx) {
                                            const int sx = x2 + dx - pw2;
                                            if (sx < 0 || sx >= w) continue;
                                            gxi[(int64_t(c) * h + sy) * w + sx] +=
                                                g * k[dy * kw + dx];
                                        }
                                    }
                                }
                        }
                    }
                }
                return;
            }

            std::vector<T> cols(static_cast<size_t>(int64_t(cig) * kh * kw * plane));
            std::vector<T> gcols(cols.size());
            for (int b = 0; b < n; ++b)
                for (int g = 0; g < groups; ++g) {
                    const T* go = self.grad.data() + (int64_t(b) * co + int64_t(g) * cog) * plane;
                    if (pw_.requires_grad) {
                        detail::im2col(px.value.data() + (int64_t(b) * ci + int64_t(g) * cig) * plane,
                                       cig, h, w, kh, kw, ph, pw2, cols.data());
                        gemm(false, true, cog, cig * kh * kw, static_cast<int>(plane), T(1), go,
                             static_cast<int>(plane), cols.data(), static_cast<int>(plane), T(1),
                             pw_.grad_buf().data() + int64_t(g) * cog * cig * kh * kw,
                             cig * kh * kw);
                    }
                    if (px.requires_grad) {
                        gemm(true, false, cig * kh * kw, static_cast<int>(plane), cog, T(1),
                             pw_.value.data() + int64_t(g) * cog * cig * kh * kw, cig * kh * kw,
                             go, static_cast<int>(plane), T(0), gcols.data(),
                             static_cast<int>(plane));
                        detail::col2im_add(gcols.data(), cig, h, w, kh, kw, ph, pw2,
                                           px.grad_buf().data() +
                                               (int64_t(b) * ci + int64_t(g) * cig) * plane);
                    }
                }
        });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight) {
    return conv2d(x, weight, Var<T>{}, 1);
}

template <typename T>
Var<T> avg_pool2x(const Var<T>& x) {
    check_nchw(x->value, "avg_pool2x");
    const int n = batch_of(x->value), c = channels_of(x->value), h = height_of(x->value),
              w = width_of(x->value);
    check_shape(h % 2 == 0 && w % 2 == 0,
                "avg_pool2x: spatial dims must be even, got " + x->value.shape_str());
    const int oh = h / 2, ow = w / 2;
    Tensor<T> out({n, c, oh, ow});
    for (int b = 0; b < n; ++b)
        for (int k = 0; k < c; ++k)
            for (int y = 0; y < oh; ++y)
                for (int x2 = 0; x2 < ow; ++x2)
                    out.at4(b, k, y, x2) =
                        (x->value.at4(b, k, 2 * y, 2 * x2) + x->value.at4(b, k, 2 * y, 2 * x2 + 1) +
                         x->value.at4(b, k, 2 * y + 1, 2 * x2) +
                         x->value.at4(b, k, 2 * y + 1, 2 * x2 + 1)) *
                        T(0.25);
    return make_node<T>(std::move(out), {x}, [](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor<T>& g = p.grad_buf();
        const int n = batch_of(self.value), c = channels_of(self.value),
                  oh = height_of(self.value), ow = width_of(self.value);
        for (int b = 0; b < n; ++b)
            for (int k = 0; k < c; ++k)
                for (int y = 0; y < oh; ++y)
                    for (int x2 = 0; x2 < ow; ++x2) {
                        const T go = self.grad.at4(b, k, y, x2) * T(0.25);
                        g.at4(b, k, 2 * y, 2 * x2) += go;
                        g.at4(b, k, 2 * y, 2 * x2 + 1) += go;
                        g.at4(b, k, 2 * y + 1, 2 * x2) += go;
                        g.at4(b, k, 2 * y + 1, 2 * x2 + 1) += go;
                    }
    });
}

template <typename T>
Var<T> max_pool2x(const Var<T>& x) {
    check_nchw(x->value, "max_pool2x");
    const int n = batch_of(x->value), c = channels_of(x->value), h = height_of(x->value),
              w = width_of(x->value);
    check_shape(h % 2 == 0 && w % 2 == 0,
                "max_pool2x: spatial dims must be even, got " + x->value.shape_str());
    const int oh = h / 2, ow = w / 2;
    Tensor<T> out({n, c, oh, ow});
    std::vector<int8_t> arg(static_cast<size_t>(out.numel()));
    int64_t oi = 0;
    for (int b = 0; b < n; ++b)
        for (int k = 0; k < c; ++k)
            for (int y = 0; y < oh; ++y)
                for (int x2 = 0; x2 < ow; ++x2, ++oi) {
                    T best = x->value.at4(b, k, 2 * y, 2 * x2);
                    int8_t bi = 0;
                    const T cands[3] = {x->value.at4(b, k, 2 * y, 2 * x2 + 1),
                                        x->value.at4(b, k, 2 * y + 1, 2 * x2),
                                        x->value.at4(b, k, 2 * y + 1, 2 * x2 + 1)};
                    for (int8_t j = 0; j < 3; ++j)
                        if (cands[j] > best) { best = cands[j]; bi = static_cast<int8_t>(j + 1); }
                    out[oi] = best;
                    arg[static_cast<size_t>(oi)] = bi;
                }
    return make_node<T>(std::move(out), {x}, [arg](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor<T>& g = p.grad_buf();
        const int n = batch_of(self.value), c = channels_of(self.value),
                  oh = height_of(self.value), ow = width_of(self.value);
        int64_t oi = 0;
        for (int b = 0; b < n; ++b)
            for (int k = 0; k < c; ++k)
                for (int y = 0; y < oh; ++y)
                    for (int x2 = 0; x2 < ow; ++x2, ++oi) {
                        const int8_t bi = arg[static_cast<size_t>(oi)];
                        const int dy = bi / 2, dx = bi % 2;
                        g.at4(b, k, 2 * y + dy, 2 * x2 + dx) += self.grad[oi];
                    }
    });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    check_nchw(x->value, "global_avg_pool");
    const int n = batch_of(x->value), c = channels_of(x->value);
    const int64_t plane = int64_t(height_of(x->value)) * width_of(x->value);
    Tensor<T> out({n, c, 1, 1});
    const T inv = T(1) / static_cast<T>(plane);
    for (int b = 0; b < n; ++b)
        for (int k = 0; k < c; ++k) {
            const T* xi = x->value.data() + (int64_t(b) * c + k) * plane;
            T s = 0;
            for (int64_t i = 0; i < plane; ++i) s += xi[i];
            out[int64_t(b) * c + k] = s * inv;
        }
    return make_node<T>(std::move(out), {x}, [plane, inv](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor<T>& g = p.grad_buf();
        const int n = batch_of(self.value), c = channels_of(self.value);
        for (int b = 0; b < n; ++b)
            for (int k = 0; k < c; ++k) {
                const T go = self.grad[int64_t(b) * c + k] * inv;
                T* gi = g.data() + (int64_t(b) * c + k) * plane;
                for (int64_t i = 0; i < plane; ++i) gi[i] += go;
            }
    });
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
    check_nchw(x->value, "upsample_nearest2x");
    const int n = batch_of(x->value), c = channels_of(x->value), h = height_of(x->value),
              w = width_of(x->value);
    Tensor<T> out({n, c, 2 * h, 2 * w});
    for (int b = 0; b < n; ++b)
        for (int k = 0; k < c; ++k)
            for (int y = 0; y < 2 * h; ++y)
                for (int x2 = 0; x2 < 2 * w; ++x2)
                    out.at4(b, k, y, x2) = x->value.at4(b, k, y / 2, x2 / 2);
    return make_node<T>(std::move(out), {x}, [](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor<T>& g = p.grad_buf();
        const int n = batch_of(p.value), c = channels_of(p.value), h = height_of(p.value),
                  w = width_of(p.value);
        for (int b = 0; b < n; ++b)
            for (int k = 0; k < c; ++k)
                for (int y = 0; y < 2 * h; ++y)
                    for (int x2 = 0; x2 < 2 * w; ++x2)
                        g.at4(b, k, y / 2, x2 / 2) += self.grad.at4(b, k, y, x2);
    });
}

// Bilinear 2x upsampling with half-pixel alignment.
template <typename T>
Var<T> upsample_bilinear2x(const Var<T>& x) {
    check_nchw(x->value, "upsample_bilinear2x");
    const int n = batch_of(x->value), c = channels_of(x->value), h = height_of(x->value),
              w = width_of(x->value);
    const int oh = 2 * h, ow = 2 * w;

    auto src_of = [](int o, int limit) {
        double s = (o + 0.5) * 0.5 - 0.5;
        if (s < 0) s = 0;
        int i0 = static_cast<int>(s);
        if (i0 > limit - 1) i0 = limit - 1;
        int i1 = std::min(i0 + 1, limit - 1);
        double f = s - i0;
        return std::tuple<int, int, double>(i0, i1, f);
    };

    Tensor<T> out({n, c, oh, ow});
    for (int b = 0; b < n; ++b)
        for (int k = 0; k < c; ++k)
            for (int y = 0; y < oh; ++y) {
                auto [y0, y1, fy] = src_of(y, h);
                for (int x2 = 0; x2 < ow; ++x2) {
                    auto [x0, x1, fx] = src_of(x2, w);
                    const double v =
                        (1 - fy) * ((1 - fx) * x->value.at4(b, k, y0, x0) +
                                    fx * x->value.at4(b, k, y0, x1)) +
                        fy * ((1 - fx) * x->value.at4(b, k, y1, x0) +
                              fx * x->value.at4(b, k, y1, x1));
                    out.at4(b, k, y, x2) = static_cast<T>(v);
                }
            }
    return make_node<T>(std::move(out), {x}, [src_of](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor<T>& g = p.grad_buf();
        const int n = batch_of(p.value), c = channels_of(p.value), h = height_of(p.value),
                  w = width_of(p.value);
        for (int b = 0; b < n; ++b)
            for (int k = 0; k < c; ++k)
                for (int y = 0; y < 2 * h; ++y) {
                    auto [y0, y1, fy] = src_of(y, h);
                    for (int x2 = 0; x2 < 2 * w; ++x2) {
                        auto [x0, x1, fx] = src_of(x2, w);
                        const T go = self.grad.at4(b, k, y, x2);
                        g.at4(b, k, y0, x0) += static_cast<T>((1 - fy) * (1 - fx)) * go;
                        g.at4(b, k, y0, x1) += static_cast<T>((1 - fy) * fx) * go;
                        g.at4(b, k, y1, x0) += static_cast<T>(fy * (1 - fx)) * go;
                        g.at4(b, k, y1, x1) += static_cast<T>(fy * fx) * go;
                    }
                }
    });
}

}  // namespace mha
