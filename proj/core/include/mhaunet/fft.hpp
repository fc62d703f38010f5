#pragma once

#include <complex>

namespace mha::fft {

// Unnormalized 2-D real-to-complex transform; out is h x (w/2+1), row-major.
void rfft2(const double* in, std::complex<double>* out, int h, int w);
void rfft2(const float* in, std::complex<float>* out, int h, int w);

// Unnormalized complex-to-real inverse; the input must be Hermitian-consistent
// on the self-conjugate columns (v = 0 and, for even w, v = w/2). Input is
// copied internally, the caller's buffer is preserved.
void irfft2_raw(const std::complex<double>* in, double* out, int h, int w);
void irfft2_raw(const std::complex<float>* in, float* out, int h, int w);

inline int onesided_width(int w) { return w / 2 + 1; }

}  // namespace mha::fft
