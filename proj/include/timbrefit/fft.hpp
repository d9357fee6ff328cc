#pragma once

#include <complex>
#include <cstddef>
#include <span>

namespace timbrefit {

/// Real-input FFT of fixed size backed by FFTW. Plans are created once per
/// size (FFTW_ESTIMATE) and shared, so a given size always runs
/// the same codelets: results are bit-reproducible across runs and threads.
class RealFft {
public:
    explicit RealFft(std::size_t n);

    std::size_t size() const { return n_; }
    std::size_t bins() const { return n_ / 2 + 1; }

    /// out.size() == bins()
    void forward(std::span<const double> in, std::span<std::complex<double>> out) const;
    /// Inverse scaled by 1/n, so inverse(forward(x)) == x.
    void inverse(std::span<const std::complex<double>> in, std::span<double> out) const;

private:
    std::size_t n_;
    void* forward_plan_;
    void* inverse_plan_;
};

std::size_t next_pow2(std::size_t n);

} // namespace timbrefit
