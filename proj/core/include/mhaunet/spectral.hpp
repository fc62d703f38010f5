#pragma once

#include <complex>

#include "mhaunet/autograd.hpp"
#include "mhaunet/fft.hpp"

// Learnable frequency-domain filter: y = IDFT(V . DFT(x)) per channel, with
// the one-sided real transform. Weights are stored as (C, H, Wf, 2)
// interleaved re/im, Wf = W/2 + 1.

namespace mha {

namespace detail {

// Average the self-conjugate columns with their mirrored conjugates so the
// array is exactly Hermitian-consistent before the c2r transform. This also
// defines the (self-adjoint) projection used by the backward pass.
template <typename T>
void hermitianize_self_columns(std::complex<T>* f, int h, int w) {
    const int wf = fft::onesided_width(w);
    std::vector<std::complex<T>> col(static_cast<size_t>(h));
    auto fix_col = [&](int v) {
        for (int u = 0; u < h; ++u) col[static_cast<size_t>(u)] = f[int64_t(u) * wf + v];
        for (int u = 0; u < h; ++u) {
            const std::complex<T> a = col[static_cast<size_t>(u)];
            const std::complex<T> b = std::conj(col[static_cast<size_t>((h - u) % h)]);
            f[int64_t(u) * wf + v] = (a + b) * T(0.5);
        }
    };
    fix_col(0);
    if (w % 2 == 0 && wf > 1) fix_col(wf - 1);
}

template <typename T>
inline T mirror_multiplicity(int v, int w) {
    if (v == 0) return T(1);
    if (w % 2 == 0 && v == w / 2) return T(1);
    return T(2);
}

}  // namespace detail

// x: (N, C, H, W); weights: (C, H, Wf, 2). Returns (N, C, H, W).
template <typename T>
Var<T> spectral_filter(const Var<T>& x, const Var<T>& weights) {
    check_nchw(x->value, "spectral_filter input");
    const int n = batch_of(x->value), c = channels_of(x->value), h = height_of(x->value),
              w = width_of(x->value);
    const int wf = fft::onesided_width(w);
    check_shape(weights->value.ndim() == 4 && weights->value.dim(0) == c &&
                    weights->value.dim(1) == h && weights->value.dim(2) == wf &&
                    weights->value.dim(3) == 2,
                "spectral_filter: weights " + weights->value.shape_str() +
                    " do not match the frequency layout of a " + std::to_string(h) + "x" +
                    std::to_string(w) + " map");

    const int64_t freq = int64_t(h) * wf;
    const T inv_hw = T(1) / static_cast<T>(int64_t(h) * w);

    Tensor<T> out({n, c, h, w});
    // Cached forward spectra, needed for the weight gradient.
    auto spectra = std::make_shared<std::vector<std::complex<T>>>(
        static_cast<size_t>(int64_t(n) * c * freq));

    std::vector<std::complex<T>> filt(static_cast<size_t>(freq));
    for (int b = 0; b < n; ++b)
        for (int k = 0; k < c; ++k) {
            std::complex<T>* X = spectra->data() + (int64_t(b) * c + k) * freq;
            fft::rfft2(x->value.data() + (int64_t(b) * c + k) * int64_t(h) * w, X, h, w);
            const T* V = weights->value.data() + int64_t(k) * freq * 2;
            for (int64_t i = 0; i < freq; ++i)
                filt[static_cast<size_t>(i)] = std::complex<T>(V[2 * i], V[2 * i + 1]) * X[i];
            detail::hermitianize_self_columns(filt.data(), h, w);
            T* y = out.data() + (int64_t(b) * c + k) * int64_t(h) * w;
            fft::irfft2_raw(filt.data(), y, h, w);
            for (int64_t i = 0; i < int64_t(h) * w; ++i) y[i] *= inv_hw;
        }

    return make_node<T>(
        std::move(out), {x, weights}, [n, c, h, w, wf, freq, inv_hw, spectra](Node<T>& self) {
            Node<T>& px = *self.parents[0];
            Node<T>& pv = *self.parents[1];
            std::vector<std::complex<T>> ghat(static_cast<size_t>(freq));
            std::vector<std::complex<T>> tmp(static_cast<size_t>(freq));
            for (int b = 0; b < n; ++b)
                for (int k = 0; k < c; ++k) {
                    fft::rfft2(self.grad.data() + (int64_t(b) * c + k) * int64_t(h) * w,
                               ghat.data(), h, w);
                    const std::complex<T>* X = spectra->data() + (int64_t(b) * c + k) * freq;
                    if (pv.requires_grad) {
                        // dL/dV = m/(HW) * Ghat . conj(X), m = 2 on bins whose
                        // mirror is not stored.
                        T* gv = pv.grad_buf().data() + int64_t(k) * freq * 2;
                        for (int u = 0; u < h; ++u)
                            for (int v = 0; v < wf; ++v) {
                                const int64_t i = int64_t(u) * wf + v;
                                const std::complex<T> g =
                                    ghat[static_cast<size_t>(i)] * std::conj(X[i]) *
                                    (detail::mirror_multiplicity<T>(v, w) * inv_hw);
                                gv[2 * i] += g.real();
                                gv[2 * i + 1] += g.imag();
                            }
                    }
                    if (px.requires_grad) {
                        // dL/dx = IDFT(conj(V) . Ghat): the adjoint is the same
                        // filter with conjugated weights.
                        const T* V = pv.value.data() + int64_t(k) * freq * 2;
                        for (int64_t i = 0; i < freq; ++i)
                            tmp[static_cast<size_t>(i)] =
                                std::complex<T>(V[2 * i], -V[2 * i + 1]) *
                                ghat[static_cast<size_t>(i)];
                        detail::hermitianize_self_columns(tmp.data(), h, w);
                        std::vector<T> gx(static_cast<size_t>(int64_t(h) * w));
                        fft::irfft2_raw(tmp.data(), gx.data(), h, w);
                        T* dst = px.grad_buf().data() + (int64_t(b) * c + k) * int64_t(h) * w;
                        for (int64_t i = 0; i < int64_t(h) * w; ++i) dst[i] += gx[static_cast<size_t>(i)] * inv_hw;
                    }
                }
        });
}

// Bilinear resampling of spectral weights from their nominal grid to the
// frequency layout of an (h, w) map. Rows are interpolated in centered
// (fftshifted) order so positive and negative frequencies do not mix across
// the wrap-around; columns are one-sided and interpolated directly.
template <typename T>
Var<T> resample_spectral(const Var<T>& weights, int h, int w) {
    check_shape(weights->value.ndim() == 4 && weights->value.dim(3) == 2,
                "resample_spectral: weights must be (C, H, Wf, 2)");
    const int c = weights->value.dim(0), hn = weights->value.dim(1), wfn = weights->value.dim(2);
    const int wf = fft::onesided_width(w);
    if (hn == h && wfn == wf) return weights;

    auto centered = [](int u, int n) {  // raw index -> centered index
        const int fu = (u <= n / 2) ? u : u - n;
        return fu + (n - 1) / 2;
    };
    auto raw = [](int j, int n) {  // centered index -> raw index
        const int fu = j - (n - 1) / 2;
        return (fu + n) % n;
    };

    struct Lin {
        int i0, i1;
        T f;
    };
    std::vector<Lin> rows(static_cast<size_t>(h)), cols(static_cast<size_t>(wf));
    for (int u = 0; u < h; ++u) {
        const double j = (h == 1) ? 0.0
                                  : double(centered(u, h)) * (hn - 1) / double(h - 1);
        int j0 = static_cast<int>(j);
        if (j0 > hn - 1) j0 = hn - 1;
        const int j1 = std::min(j0 + 1, hn - 1);
        rows[static_cast<size_t>(u)] = {raw(j0, hn), raw(j1, hn), static_cast<T>(j - j0)};
    }
    for (int v = 0; v < wf; ++v) {
        const double j = (wf == 1) ? 0.0 : double(v) * (wfn - 1) / double(wf - 1);
        int j0 = static_cast<int>(j);
        if (j0 > wfn - 1) j0 = wfn - 1;
        cols[static_cast<size_t>(v)] = {j0, std::min(j0 + 1, wfn - 1), static_cast<T>(j - j0)};
    }

    Tensor<T> out({c, h, wf, 2});
    for (int k = 0; k < c; ++k)
        for (int u = 0; u < h; ++u)
            for (int v = 0; v < wf; ++v)
                for (int p = 0; p < 2; ++p) {
                    const Lin& r = rows[static_cast<size_t>(u)];
                    const Lin& q = cols[static_cast<size_t>(v)];
                    auto at = [&](int uu, int vv) {
                        return weights->value[((int64_t(k) * hn + uu) * wfn + vv) * 2 + p];
                    };
                    out[((int64_t(k) * h + u) * wf + v) * 2 + p] =
                        (T(1) - r.f) * ((T(1) - q.f) * at(r.i0, q.i0) + q.f * at(r.i0, q.i1)) +
                        r.f * ((T(1) - q.f) * at(r.i1, q.i0) + q.f * at(r.i1, q.i1));
                }

    return make_node<T>(std::move(out), {weights}, [c, h, wf, hn, wfn, rows, cols](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor<T>& g = p.grad_buf();
        for (int k = 0; k < c; ++k)
            for (int u = 0; u < h; ++u)
                for (int v = 0; v < wf; ++v)
                    for (int q2 = 0; q2 < 2; ++q2) {
                        const auto& r = rows[static_cast<size_t>(u)];
                        const auto& q = cols[static_cast<size_t>(v)];
                        const T go = self.grad[((int64_t(k) * h + u) * wf + v) * 2 + q2];
                        auto gat = [&](int uu, int vv) -> T& {
                            return g[((int64_t(k) * hn + uu) * wfn + vv) * 2 + q2];
                        };
                        gat(r.i0, q.i0) += (T(1) - r.f) * (T(1) - q.f) * go;
                        gat(r.i0, q.i1) += (T(1) - r.f) * q.f * go;
                        gat(r.i1, q.i0) += r.f * (T(1) - q.f) * go;
                        gat(r.i1, q.i1) += r.f * q.f * go;
                    }
    });
}

}  // namespace mha
