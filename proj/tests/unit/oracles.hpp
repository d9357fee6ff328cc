#pragma once

// Independent reference computations for the unit tests. None of these call
// into the library's DSP code.

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

namespace oracle {

inline constexpr double kPi = std::numbers::pi;

/// |X(f)| of a Hann-windowed signal by direct summation at an arbitrary
/// frequency, normalized so a full-scale sine at `f` reads 1.
inline double hann_dft_mag(const std::vector<double>& x, double f, double sr, std::size_t begin = 0,
                           std::size_t len = 0) {
    if (len == 0) len = x.size() - begin;
    std::complex<double> acc{};
    double wsum = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
        const double w = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(len));
        const double ph = -2.0 * kPi * f * static_cast<double>(i) / sr;
        acc += w * x[begin + i] * std::complex<double>(std::cos(ph), std::sin(ph));
        wsum += w;
    }
    return 2.0 * std::abs(acc) / wsum;
}

/// Peak of hann_dft_mag over +-`rel` around f (fine grid).
inline double peak_near(const std::vector<double>& x, double f, double sr, double rel = 0.01, std::size_t begin = 0,
                        std::size_t len = 0) {
    double best = 0.0;
    for (int i = -20; i <= 20; ++i) best = std::max(best, hann_dft_mag(x, f * (1.0 + rel * i / 20.0), sr, begin, len));
    return best;
}

/// Bessel J_k(x) by its power series.
inline double bessel_j(int k, double x) {
    double sum = 0.0, term = 1.0;
    for (int i = 1; i <= k; ++i) term *= (x / 2.0) / i;
    for (int m = 0; m < 40; ++m) {
        sum += term;
        term *= -(x * x / 4.0) / ((m + 1.0) * (m + k + 1.0));
    }
    return sum;
}

/// Mean of a piecewise-linear ADSR over [0, total] by summing trapezoid
/// areas of its breakpoints (note-off at `note_len`, linear release).
inline double adsr_mean(double a, double d, double s, double r, double note_len, double total) {
    // breakpoints while held
    struct P {
        double t, v;
    };
    std::vector<P> pts{{0.0, 0.0}, {a, 1.0}, {a + d, s}};
    auto held = [&](double t) { return t < a ? t / a : (t < a + d ? 1.0 - (1.0 - s) * (t - a) / d : s); };
    std::vector<P> curve;
    for (const auto& p : pts)
        if (p.t < note_len) curve.push_back(p);
    const double off = held(note_len);
    curve.push_back({note_len, off});
    curve.push_back({note_len + r, 0.0});
    curve.push_back({std::max(total, note_len + r), 0.0});
    double area = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        double t0 = curve[i - 1].t, t1 = std::min(curve[i].t, total);
        if (t1 <= t0) continue;
        const double v0 = curve[i - 1].v;
        const double slope = (curve[i].v - curve[i - 1].v) / (curve[i].t - curve[i - 1].t);
        const double v1 = v0 + slope * (t1 - t0);
        area += 0.5 * (v0 + v1) * (t1 - t0);
    }
    return area / total;
}

inline std::vector<double> sine(double f, double sr, std::size_t n, double amp = 1.0) {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * kPi * f * static_cast<double>(i) / sr);
    return x;
}

/// Band-limited sawtooth from its Fourier series (harmonics below nyquist).
inline std::vector<double> fourier_saw(double f, double sr, std::size_t n) {
    std::vector<double> x(n, 0.0);
    for (int k = 1; k * f < sr / 2.0; ++k) {
        for (std::size_t i = 0; i < n; ++i) x[i] -= (2.0 / kPi) * std::sin(2.0 * kPi * k * f * i / sr) / k;
    }
    return x;
}

inline std::vector<double> fourier_square(double f, double sr, std::size_t n) {
    std::vector<double> x(n, 0.0);
    for (int k = 1; k * f < sr / 2.0; k += 2) {
        for (std::size_t i = 0; i < n; ++i) x[i] += (4.0 / kPi) * std::sin(2.0 * kPi * k * f * i / sr) / k;
    }
    return x;
}

inline double rms(const std::vector<double>& x, std::size_t begin = 0, std::size_t end = 0) {
    if (end == 0) end = x.size();
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) acc += x[i] * x[i];
    return std::sqrt(acc / static_cast<double>(end - begin));
}

} // namespace oracle
