#pragma once

#include <complex>
#include <vector>

// O(N^2) direct DFT oracle, written straight from the transform definitions
// (1/HW on the forward sum, none on the inverse). Independent of the FFT
// library path it is used to check.

namespace testsup {

using cd = std::complex<double>;

inline std::vector<cd> dft2(const std::vector<double>& f, int h, int w) {
    std::vector<cd> out(static_cast<size_t>(h) * w);
    const double norm = 1.0 / (double(h) * w);
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            cd acc(0, 0);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double ang = -2.0 * M_PI * (double(u) * y / h + double(v) * x / w);
                    acc += f[static_cast<size_t>(y) * w + x] * cd(std::cos(ang), std::sin(ang));
                }
            out[static_cast<size_t>(u) * w + v] = acc * norm;
        }
    return out;
}

inline std::vector<cd> idft2(const std::vector<cd>& F, int h, int w) {
    std::vector<cd> out(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            cd acc(0, 0);
            for (int u = 0; u < h; ++u)
                for (int v = 0; v < w; ++v) {
                    const double ang = 2.0 * M_PI * (double(u) * y / h + double(v) * x / w);
                    acc += F[static_cast<size_t>(u) * w + v] * cd(std::cos(ang), std::sin(ang));
                }
            out[static_cast<size_t>(y) * w + x] = acc;
        }
    return out;
}

// Apply a one-sided filter (h x (w/2+1)) to a real map via the direct DFT:
// the full-spectrum filter is the Hermitian extension of `filt`.
inline std::vector<double> filter_oracle(const std::vector<double>& f,
                                         const std::vector<cd>& filt, int h, int w) {
    const int wf = w / 2 + 1;
    std::vector<cd> full(static_cast<size_t>(h) * w);
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            if (v < wf)
                full[static_cast<size_t>(u) * w + v] = filt[static_cast<size_t>(u) * wf + v];
            else
                full[static_cast<size_t>(u) * w + v] =
                    std::conj(filt[static_cast<size_t>(((h - u) % h)) * wf + (w - v)]);
        }
    std::vector<cd> F = dft2(f, h, w);
    for (size_t i = 0; i < F.size(); ++i) F[i] *= full[i];
    std::vector<cd> y = idft2(F, h, w);
    std::vector<double> out(y.size());
    for (size_t i = 0; i < y.size(); ++i) out[i] = y[i].real();
    return out;
}

}  // namespace testsup
