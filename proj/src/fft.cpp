#include "timbrefit/fft.hpp"

#include "timbrefit/error.hpp"

#include <fftw3.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <vector>

namespace timbrefit {
namespace {

struct Plans {
    fftw_plan forward;
    fftw_plan inverse;
};

// FFTW's planner is not thread-safe; execution of an existing plan is.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

Plans plans_for(std::size_t n) {
    static std::map<std::size_t, Plans> cache;
    std::lock_guard lock(planner_mutex());
    if (auto it = cache.find(n); it != cache.end()) return it->second;
    auto* in = fftw_alloc_real(n);
    auto* out = fftw_alloc_complex(n / 2 + 1);
    const unsigned flags = FFTW_ESTIMATE;
    const int size = static_cast<int>(n);
    Plans p{fftw_plan_dft_r2c_1d(size, in, out, flags), fftw_plan_dft_c2r_1d(size, out, in, flags)};
    fftw_free(in);
    fftw_free(out);
    cache.emplace(n, p);
    return p;
}

// Plans are made for SIMD-aligned arrays, so execution goes through
// per-thread aligned buffers.
struct Scratch {
    std::size_t n = 0;
    double* real = nullptr;
    fftw_complex* cplx = nullptr;
    ~Scratch() {
        fftw_free(real);
        fftw_free(cplx);
    }
    void ensure(std::size_t size) {
        if (size <= n) return;
        fftw_free(real);
        fftw_free(cplx);
        real = fftw_alloc_real(size);
        cplx = fftw_alloc_complex(size / 2 + 1);
        n = size;
    }
};

thread_local Scratch scratch;

} // namespace

std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

RealFft::RealFft(std::size_t n) : n_(n) {
    if (n < 2 || (n & (n - 1)) != 0) throw InputError("FFT size must be a power of two >= 2");
    auto p = plans_for(n);
    forward_plan_ = p.forward;
    inverse_plan_ = p.inverse;
}

void RealFft::forward(std::span<const double> in, std::span<std::complex<double>> out) const {
    scratch.ensure(n_);
    std::copy(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(n_), scratch.real);
    fftw_execute_dft_r2c(static_cast<fftw_plan>(forward_plan_), scratch.real, scratch.cplx);
    const auto* c = reinterpret_cast<const std::complex<double>*>(scratch.cplx);
    std::copy(c, c + bins(), out.begin());
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::span<double> out) const {
    scratch.ensure(n_);
    std::copy(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(bins()),
              reinterpret_cast<std::complex<double>*>(scratch.cplx));
    fftw_execute_dft_c2r(static_cast<fftw_plan>(inverse_plan_), scratch.cplx, scratch.real);
    const double scale = 1.0 / static_cast<double>(n_);
    for (std::size_t i = 0; i < n_; ++i) out[i] = scratch.real[i] * scale;
}

} // namespace timbrefit
