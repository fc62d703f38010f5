#include "mhaunet/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <vector>

namespace mha::fft {
namespace {

// Plans are cached per (h, w) and created with FFTW_UNALIGNED so they can be
// executed on arbitrary caller buffers via the new-array interface. Multi-dim
// c2r transforms destroy their input, so execution always goes through a
// scratch copy.
struct PlanKey {
    int h, w;
    bool operator<(const PlanKey& o) const { return h != o.h ? h < o.h : w < o.w; }
};

struct PlansD {
    fftw_plan r2c = nullptr, c2r = nullptr;
    std::vector<double> real_buf;
    std::vector<std::complex<double>> cplx_buf;
};

struct PlansF {
    fftwf_plan r2c = nullptr, c2r = nullptr;
    std::vector<float> real_buf;
    std::vector<std::complex<float>> cplx_buf;
};

std::mutex g_mutex;
std::map<PlanKey, PlansD> g_plans_d;
std::map<PlanKey, PlansF> g_plans_f;

PlansD& plans_d(int h, int w) {
    auto& p = g_plans_d[{h, w}];
    if (!p.r2c) {
        p.real_buf.resize(static_cast<size_t>(h) * w);
        p.cplx_buf.resize(static_cast<size_t>(h) * (w / 2 + 1));
        p.r2c = fftw_plan_dft_r2c_2d(h, w, p.real_buf.data(),
                                     reinterpret_cast<fftw_complex*>(p.cplx_buf.data()),
                                     FFTW_ESTIMATE | FFTW_UNALIGNED);
        p.c2r = fftw_plan_dft_c2r_2d(h, w, reinterpret_cast<fftw_complex*>(p.cplx_buf.data()),
                                     p.real_buf.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
    }
    return p;
}

PlansF& plans_f(int h, int w) {
    auto& p = g_plans_f[{h, w}];
    if (!p.r2c) {
        p.real_buf.resize(static_cast<size_t>(h) * w);
        p.cplx_buf.resize(static_cast<size_t>(h) * (w / 2 + 1));
        p.r2c = fftwf_plan_dft_r2c_2d(h, w, p.real_buf.data(),
                                      reinterpret_cast<fftwf_complex*>(p.cplx_buf.data()),
                                      FFTW_ESTIMATE | FFTW_UNALIGNED);
        p.c2r = fftwf_plan_dft_c2r_2d(h, w, reinterpret_cast<fftwf_complex*>(p.cplx_buf.data()),
                                      p.real_buf.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
    }
    return p;
}

}  // namespace

void rfft2(const double* in, std::complex<double>* out, int h, int w) {
    std::lock_guard<std::mutex> lk(g_mutex);
    auto& p = plans_d(h, w);
    fftw_execute_dft_r2c(p.r2c, const_cast<double*>(in),
                         reinterpret_cast<fftw_complex*>(out));
}

void rfft2(const float* in, std::complex<float>* out, int h, int w) {
    std::lock_guard<std::mutex> lk(g_mutex);
    auto& p = plans_f(h, w);
    fftwf_execute_dft_r2c(p.r2c, const_cast<float*>(in),
                          reinterpret_cast<fftwf_complex*>(out));
}

void irfft2_raw(const std::complex<double>* in, double* out, int h, int w) {
    std::lock_guard<std::mutex> lk(g_mutex);
    auto& p = plans_d(h, w);
    std::copy(in, in + static_cast<size_t>(h) * (w / 2 + 1), p.cplx_buf.begin());
    fftw_execute_dft_c2r(p.c2r, reinterpret_cast<fftw_complex*>(p.cplx_buf.data()), out);
}

void irfft2_raw(const std::complex<float>* in, float* out, int h, int w) {
    std::lock_guard<std::mutex> lk(g_mutex);
    auto& p = plans_f(h, w);
    std::copy(in, in + static_cast<size_t>(h) * (w / 2 + 1), p.cplx_buf.begin());
    fftwf_execute_dft_c2r(p.c2r, reinterpret_cast<fftwf_complex*>(p.cplx_buf.data()), out);
}

}  // namespace mha::fft
