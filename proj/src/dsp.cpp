#include "timbrefit/dsp.hpp"

#include "timbrefit/error.hpp"
#include "timbrefit/fft.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <tuple>

namespace timbrefit {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Average power spectrum over Hann frames of the analysis size.
std::vector<double> mean_power(const AudioBuffer& buf, std::size_t fft_size = kAnalysisFft) {
    const auto spec = stft(buf, fft_size, fft_size / 2);
    std::vector<double> p(spec.bins(), 0.0);
    for (std::size_t f = 0; f < spec.frames(); ++f) {
        auto row = spec.magnitudes.row(f);
        for (std::size_t k = 0; k < p.size(); ++k) p[k] += row[k] * row[k];
    }
    for (auto& v : p) v /= static_cast<double>(spec.frames());
    return p;
}

/// One long Hann-windowed power spectrum of the whole buffer, zero-padded by
/// `pad` for finer peak sampling.
struct LongSpectrum {
    std::vector<double> magnitude;
    double bin_hz;
};

LongSpectrum long_spectrum(const AudioBuffer& buf, std::size_t pad) {
    constexpr std::size_t kMaxLen = std::size_t{1} << 17;
    const std::size_t len = std::min(buf.size(), kMaxLen);
    const std::size_t n = next_pow2(std::max<std::size_t>(len, 2)) * pad;
    const auto w = make_window(Window::Hann, len);
    std::vector<double> x(n, 0.0);
    for (std::size_t i = 0; i < len; ++i) x[i] = buf.samples[i] * w[i];
    RealFft fft(n);
    std::vector<std::complex<double>> spec(fft.bins());
    fft.forward(x, spec);
    LongSpectrum out{std::vector<double>(spec.size()), buf.sample_rate / static_cast<double>(n)};
    for (std::size_t k = 0; k < spec.size(); ++k) out.magnitude[k] = std::sqrt(std::norm(spec[k]));
    return out;
}

std::vector<double> log_power_mel(const Spectrogram& spec, std::size_t n_mels) {
    const auto& fb = mel_filterbank(n_mels, spec.fft_size, spec.sample_rate);
    std::vector<double> power(spec.bins());
    std::vector<double> out(spec.frames() * n_mels);
    for (std::size_t f = 0; f < spec.frames(); ++f) {
        auto row = spec.magnitudes.row(f);
        for (std::size_t k = 0; k < power.size(); ++k) power[k] = row[k] * row[k];
        fb.apply(power, std::span<double>(out.data() + f * n_mels, n_mels));
    }
    return out;
}

double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

} // namespace

std::vector<double> make_window(Window w, std::size_t n) {
    std::vector<double> out(n, 1.0);
    if (w == Window::Hann) {
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(i) / static_cast<double>(n));
        }
    }
    return out;
}

Spectrogram stft(const AudioBuffer& buf, std::size_t fft_size, std::size_t hop, Window window) {
    if (fft_size < 2 || (fft_size & (fft_size - 1)) != 0) throw InputError("STFT size must be a power of two");
    if (hop == 0) hop = fft_size / 4;
    const std::size_t n = buf.size();
    const std::size_t frames = n <= fft_size ? 1 : 1 + (n - fft_size + hop - 1) / hop;
    Spectrogram s;
    s.fft_size = fft_size;
    s.hop = hop;
    s.sample_rate = buf.sample_rate;
    s.magnitudes = Matrix(frames, fft_size / 2 + 1);

    static thread_local std::map<std::pair<int, std::size_t>, std::vector<double>> windows;
    auto& win = windows[{static_cast<int>(window), fft_size}];
    if (win.empty()) win = make_window(window, fft_size);

    RealFft fft(fft_size);
    std::vector<double> frame(fft_size);
    std::vector<std::complex<double>> spec(fft.bins());
    for (std::size_t f = 0; f < frames; ++f) {
        const std::size_t start = f * hop;
        for (std::size_t i = 0; i < fft_size; ++i) {
            const std::size_t t = start + i;
            frame[i] = t < n ? buf.samples[t] * win[i] : 0.0;
        }
        fft.forward(frame, spec);
        auto row = s.magnitudes.row(f);
        for (std::size_t k = 0; k < spec.size(); ++k) row[k] = std::sqrt(std::norm(spec[k]));
    }
    return s;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

double a_weighting_db(double hz) {
    if (hz <= 0.0) return -std::numeric_limits<double>::infinity();
    const double f2 = hz * hz;
    const double num = 12194.0 * 12194.0 * f2 * f2;
    const double den = (f2 + 20.6 * 20.6) * std::sqrt((f2 + 107.7 * 107.7) * (f2 + 737.9 * 737.9)) * (f2 + 12194.0 * 12194.0);
    return 20.0 * std::log10(num / den) + 2.0;
}

MelFilterbank::MelFilterbank(std::size_t n_mels, std::size_t fft_size, double sample_rate) : bins_(fft_size / 2 + 1) {
    const double top = hz_to_mel(sample_rate / 2.0);
    std::vector<double> edges(n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_mels + 1));
    }
    const double bin_hz = sample_rate / static_cast<double>(fft_size);
    for (std::size_t m = 0; m < n_mels; ++m) {
        const double lo = edges[m], centre = edges[m + 1], hi = edges[m + 2];
        Row row{0, {}};
        std::size_t first = bins_, last = 0;
        std::vector<double> w(bins_, 0.0);
        for (std::size_t k = 0; k < bins_; ++k) {
            const double f = static_cast<double>(k) * bin_hz;
            double v = 0.0;
            if (f > lo && f <= centre) v = (f - lo) / (centre - lo);
            else if (f > centre && f < hi) v = (hi - f) / (hi - centre);
            if (v > 0.0) {
                w[k] = v;
                first = std::min(first, k);
                last = k;
            }
        }
        if (first == bins_) {
            const auto k = std::min(bins_ - 1, static_cast<std::size_t>(std::llround(centre / bin_hz)));
            row.first_bin = k;
            row.weights = {1.0};
        } else {
            row.first_bin = first;
            row.weights.assign(w.begin() + static_cast<std::ptrdiff_t>(first), w.begin() + static_cast<std::ptrdiff_t>(last + 1));
        }
        rows_.push_back(std::move(row));
    }
}

void MelFilterbank::apply(std::span<const double> spectrum, std::span<double> out) const {
    for (std::size_t m = 0; m < rows_.size(); ++m) {
        const auto& r = rows_[m];
        double acc = 0.0;
        for (std::size_t j = 0; j < r.weights.size(); ++j) acc += r.weights[j] * spectrum[r.first_bin + j];
        out[m] = acc;
    }
}

double MelFilterbank::row_sum(std::size_t m) const {
    return std::accumulate(rows_[m].weights.begin(), rows_[m].weights.end(), 0.0);
}

const MelFilterbank& mel_filterbank(std::size_t n_mels, std::size_t fft_size, double sample_rate) {
    static std::mutex mutex;
    static std::map<std::tuple<std::size_t, std::size_t, double>, std::unique_ptr<MelFilterbank>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[{n_mels, fft_size, sample_rate}];
    if (!slot) slot = std::make_unique<MelFilterbank>(n_mels, fft_size, sample_rate);
    return *slot;
}

const std::vector<double>& a_weighting_gains(std::size_t fft_size, double sample_rate) {
    static std::mutex mutex;
    static std::map<std::pair<std::size_t, double>, std::unique_ptr<std::vector<double>>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[{fft_size, sample_rate}];
    if (!slot) {
        slot = std::make_unique<std::vector<double>>(fft_size / 2 + 1);
        for (std::size_t k = 0; k < slot->size(); ++k) {
            const double f = static_cast<double>(k) * sample_rate / static_cast<double>(fft_size);
            (*slot)[k] = k == 0 ? 0.0 : std::pow(10.0, a_weighting_db(f) / 20.0);
        }
    }
    return *slot;
}

Matrix mel_spectrogram(const Spectrogram& spec, std::size_t n_mels, bool a_weighting) {
    if (n_mels > spec.bins()) throw InputError("n_mels must not exceed the number of spectrum bins");
    const auto& fb = mel_filterbank(n_mels, spec.fft_size, spec.sample_rate);
    Matrix out(spec.frames(), n_mels);
    std::vector<double> weighted(spec.bins());
    const std::vector<double>* gains = a_weighting ? &a_weighting_gains(spec.fft_size, spec.sample_rate) : nullptr;
    for (std::size_t f = 0; f < spec.frames(); ++f) {
        auto row = spec.magnitudes.row(f);
        if (gains) {
            for (std::size_t k = 0; k < row.size(); ++k) weighted[k] = row[k] * (*gains)[k];
            fb.apply(weighted, out.row(f));
        } else {
            fb.apply(row, out.row(f));
        }
    }
    return out;
}

Matrix mfcc_from_spectrogram(const Spectrogram& spec, std::size_t n_coeffs) {
    if (n_coeffs > kMfccMels) throw InputError("n_coeffs must not exceed the number of mel bands");
    const auto mel = log_power_mel(spec, kMfccMels);
    // Orthonormal DCT-II basis, cached per size.
    static thread_local std::map<std::size_t, std::vector<double>> bases;
    auto& basis = bases[n_coeffs];
    if (basis.empty()) {
        basis.resize(n_coeffs * kMfccMels);
        const double n = static_cast<double>(kMfccMels);
        for (std::size_t c = 0; c < n_coeffs; ++c) {
            const double scale = c == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
            for (std::size_t m = 0; m < kMfccMels; ++m) {
                basis[c * kMfccMels + m] =
                    scale * std::cos(std::numbers::pi * static_cast<double>(c) * (static_cast<double>(m) + 0.5) / n);
            }
        }
    }
    Matrix out(spec.frames(), n_coeffs);
    std::vector<double> logmel(kMfccMels);
    for (std::size_t f = 0; f < spec.frames(); ++f) {
        for (std::size_t m = 0; m < kMfccMels; ++m) logmel[m] = std::log(std::max(mel[f * kMfccMels + m], kLogFloor));
        for (std::size_t c = 0; c < n_coeffs; ++c) {
            double acc = 0.0;
            for (std::size_t m = 0; m < kMfccMels; ++m) acc += basis[c * kMfccMels + m] * logmel[m];
            out(f, c) = acc;
        }
    }
    return out;
}

Matrix mfcc(const AudioBuffer& buf, std::size_t n_coeffs) {
    return mfcc_from_spectrogram(stft(buf, kAnalysisFft, kAnalysisFft / 4), n_coeffs);
}

CentroidResult spectral_centroid_from(const Spectrogram& spec, std::span<const double> samples) {
    CentroidResult r;
    r.per_frame.assign(spec.frames(), 0.0);
    double sum = 0.0;
    std::size_t voiced = 0;
    for (std::size_t f = 0; f < spec.frames(); ++f) {
        const std::size_t start = f * spec.hop;
        const std::size_t end = std::min(samples.size(), start + spec.fft_size);
        double energy = 0.0;
        for (std::size_t i = start; i < end; ++i) energy += samples[i] * samples[i];
        const double frame_rms = end > start ? std::sqrt(energy / static_cast<double>(end - start)) : 0.0;
        if (!(frame_rms > kSilentFrameRms)) continue;
        auto row = spec.magnitudes.row(f);
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < row.size(); ++k) {
            num += spec.bin_hz(k) * row[k];
            den += row[k];
        }
        if (den <= 0.0) continue;
        r.per_frame[f] = num / den;
        sum += r.per_frame[f];
        ++voiced;
    }
    r.silent = voiced == 0;
    r.mean = voiced ? sum / static_cast<double>(voiced) : 0.0;
    return r;
}

CentroidResult spectral_centroid(const AudioBuffer& buf) {
    return spectral_centroid_from(stft(buf, kAnalysisFft, kAnalysisFft / 4), buf.samples);
}

double spectral_rolloff(const AudioBuffer& buf, double fraction) {
    const auto p = mean_power(buf);
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    if (total <= 0.0) return 0.0;
    double acc = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        acc += p[k];
        if (acc >= fraction * total) return static_cast<double>(k) * buf.sample_rate / static_cast<double>(kAnalysisFft);
    }
    return buf.sample_rate / 2.0;
}

double spectral_flatness(const AudioBuffer& buf) {
    const auto p = mean_power(buf);
    double log_sum = 0.0, sum = 0.0;
    for (std::size_t k = 1; k < p.size(); ++k) {
        const double v = std::max(p[k], 1e-20);
        log_sum += std::log(v);
        sum += v;
    }
    const double n = static_cast<double>(p.size() - 1);
    if (sum <= 1e-20 * n) return 0.0;
    return std::clamp(std::exp(log_sum / n) / (sum / n), 0.0, 1.0);
}

double even_odd_ratio(const AudioBuffer& buf, double f0) {
    if (!(f0 > 0.0)) throw InputError("even_odd_ratio needs a positive f0");
    const auto s = long_spectrum(buf, 2);
    const double nyquist = buf.sample_rate / 2.0;
    double even = 0.0, odd = 0.0;
    for (int h = 1; h <= 12; ++h) {
        const double lo = 0.97 * h * f0, hi = 1.03 * h * f0;
        if (hi >= nyquist) break;
        double e = 0.0;
        for (auto k = static_cast<std::size_t>(std::ceil(lo / s.bin_hz)); k <= static_cast<std::size_t>(hi / s.bin_hz) && k < s.magnitude.size(); ++k) {
            e += s.magnitude[k] * s.magnitude[k];
        }
        (h % 2 == 0 ? even : odd) += e;
    }
    return odd > 0.0 ? even / odd : 0.0;
}

double rms(std::span<const double> x) {
    if (x.empty()) return 0.0;
    double e = 0.0;
    for (double v : x) e += v * v;
    return std::sqrt(e / static_cast<double>(x.size()));
}

std::vector<std::size_t> detect_onsets(const AudioBuffer& buf, const OnsetConfig& cfg) {
    std::vector<std::size_t> onsets;
    if (buf.size() < cfg.fft_size) return onsets;
    const auto spec = stft(buf, cfg.fft_size, cfg.hop);
    const auto mel = log_power_mel(spec, cfg.mels);
    const std::size_t frames = spec.frames(), m = cfg.mels;

    // Log-power in dB, limited to 80 dB below the loudest cell.
    std::vector<double> db(mel.size());
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < mel.size(); ++i) {
        db[i] = 10.0 * std::log10(std::max(mel[i], 1e-10));
        peak = std::max(peak, db[i]);
    }
    const double floor_db = std::max(peak - 80.0, -100.0);
    for (auto& v : db) v = std::max(v, floor_db);

    // Half-wave rectified flux; the frame before the signal counts as floor.
    std::vector<double> flux(frames, 0.0);
    for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (std::size_t b = 0; b < m; ++b) {
            const double prev = f == 0 ? floor_db : db[(f - 1) * m + b];
            acc += std::max(0.0, db[f * m + b] - prev);
        }
        flux[f] = acc / static_cast<double>(m);
    }
    const auto [mn, mx] = std::minmax_element(flux.begin(), flux.end());
    const double lo = *mn, range = *mx - *mn;
    if (!(range > 0.0)) return onsets;
    for (auto& v : flux) v = (v - lo) / range;

    const double frame_rate = buf.sample_rate / static_cast<double>(cfg.hop);
    const auto peak_w = static_cast<std::size_t>(std::llround(cfg.peak_window * frame_rate));
    const auto med_w = static_cast<std::size_t>(std::llround(cfg.median_window * frame_rate));
    const auto gap = static_cast<std::size_t>(std::llround(cfg.min_gap * frame_rate));
    std::size_t last = 0;
    bool any = false;
    for (std::size_t f = 0; f < frames; ++f) {
        const std::size_t a = f >= peak_w ? f - peak_w : 0, b = std::min(frames - 1, f + peak_w);
        if (flux[f] < *std::max_element(flux.begin() + static_cast<std::ptrdiff_t>(a), flux.begin() + static_cast<std::ptrdiff_t>(b + 1))) continue;
        const std::size_t ma = f >= med_w ? f - med_w : 0, mb = std::min(frames - 1, f + med_w);
        const double med = median_of({flux.begin() + static_cast<std::ptrdiff_t>(ma), flux.begin() + static_cast<std::ptrdiff_t>(mb + 1)});
        if (flux[f] < med + cfg.delta) continue;
        if (any && f - last < gap) continue;
        // The flux jump shows up once the event sits in the trailing part of
        // the frame; report the centre of that region.
        const std::size_t sample = f * cfg.hop + cfg.fft_size - cfg.hop;
        onsets.push_back(std::min(sample, buf.size() - 1));
        last = f;
        any = true;
    }
    return onsets;
}

PitchEstimate detect_pitch(const AudioBuffer& segment, double fmin, double fmax) {
    PitchEstimate est;
    const std::size_t n = segment.size();
    const double sr = segment.sample_rate;
    auto tau_min = static_cast<std::size_t>(std::floor(sr / fmax));
    auto tau_max = static_cast<std::size_t>(std::ceil(sr / fmin));
    tau_min = std::max<std::size_t>(tau_min, 2);
    tau_max = std::min(tau_max, n / 2);
    if (tau_max <= tau_min + 2) return est;
    const std::size_t window = std::min<std::size_t>(n - tau_max, 2048);
    const std::size_t start = std::min(n / 8, n - window - tau_max);
    const double* x = segment.samples.data() + start;

    double energy = 0.0;
    for (std::size_t j = 0; j < window + tau_max; ++j) energy += x[j] * x[j];
    if (energy <= 1e-12) return est;

    std::vector<double> d(tau_max + 1, 0.0), dn(tau_max + 1, 1.0);
    double running = 0.0;
    for (std::size_t tau = 1; tau <= tau_max; ++tau) {
        double acc = 0.0;
        for (std::size_t j = 0; j < window; ++j) {
            const double diff = x[j] - x[j + tau];
            acc += diff * diff;
        }
        d[tau] = acc;
        running += acc;
        dn[tau] = running > 0.0 ? acc * static_cast<double>(tau) / running : 1.0;
    }

    // First dip under the threshold, which is relaxed to sit just above the
    // global minimum when noise keeps every dip high. Taking the global
    // minimum itself tends to land on a multiple of the period.
    constexpr double kThreshold = 0.1;
    constexpr double kSlack = 0.1;
    double floor_dn = 1.0;
    for (std::size_t tau = tau_min; tau <= tau_max; ++tau) floor_dn = std::min(floor_dn, dn[tau]);
    const double threshold = std::max(kThreshold, floor_dn + kSlack);
    std::size_t best = tau_min;
    for (std::size_t tau = tau_min; tau <= tau_max; ++tau) {
        if (dn[tau] < threshold) {
            while (tau + 1 <= tau_max && dn[tau + 1] < dn[tau]) ++tau;
            best = tau;
            break;
        }
    }
    double refined = static_cast<double>(best);
    double value = dn[best];
    if (best > 1 && best < tau_max) {
        const double a = dn[best - 1], b = dn[best], c = dn[best + 1];
        const double denom = a - 2.0 * b + c;
        if (denom > 0.0) {
            const double shift = 0.5 * (a - c) / denom;
            refined += shift;
            value = b - 0.25 * (a - c) * shift;
        }
    }
    est.f0 = sr / refined;
    est.confidence = std::clamp(1.0 - value, 0.0, 1.0);
    est.voiced = est.confidence >= 0.5;
    return est;
}

std::vector<double> harmonic_amplitudes(const AudioBuffer& buf, double f0, std::size_t n) {
    if (!(f0 > 0.0)) throw InputError("harmonic_amplitudes needs a positive f0");
    const auto s = long_spectrum(buf, 4);
    const double nyquist = buf.sample_rate / 2.0;
    std::vector<double> amps;
    for (std::size_t h = 1; h <= n; ++h) {
        const double centre = static_cast<double>(h) * f0;
        if (centre >= nyquist) break;
        const auto lo = static_cast<std::size_t>(std::ceil(0.97 * centre / s.bin_hz));
        const auto hi = std::min(s.magnitude.size() - 2, static_cast<std::size_t>(1.03 * centre / s.bin_hz));
        std::size_t k = std::max<std::size_t>(lo, 1);
        for (std::size_t j = k; j <= hi; ++j) {
            if (s.magnitude[j] > s.magnitude[k]) k = j;
        }
        // Parabola through the log magnitudes of the peak and its neighbours.
        const double a = std::log(std::max(s.magnitude[k - 1], 1e-300));
        const double b = std::log(std::max(s.magnitude[k], 1e-300));
        const double c = std::log(std::max(s.magnitude[k + 1], 1e-300));
        const double denom = a - 2.0 * b + c;
        double peak = b;
        if (denom < 0.0) {
            const double shift = 0.5 * (a - c) / denom;
            peak = b - 0.25 * (a - c) * shift;
        }
        amps.push_back(std::exp(peak));
    }
    if (!amps.empty() && amps[0] > 0.0) {
        const double ref = amps[0];
        for (auto& a : amps) a /= ref;
    } else {
        std::fill(amps.begin(), amps.end(), 0.0);
    }
    return amps;
}

FeatureSummary summarize(const AudioBuffer& buf, double f0) {
    FeatureSummary s;
    s.rms = rms(buf.samples);
    s.rolloff_95 = spectral_rolloff(buf, 0.95);
    s.flatness = spectral_flatness(buf);
    s.centroid_mean = spectral_centroid(buf).mean;
    if (f0 > 0.0) {
        s.f0 = f0;
        s.voiced = true;
    } else {
        const auto p = detect_pitch(buf);
        s.f0 = p.f0;
        s.voiced = p.voiced;
    }
    if (s.voiced) {
        s.even_odd_ratio = even_odd_ratio(buf, s.f0);
        s.harmonic_amps = harmonic_amplitudes(buf, s.f0, 8);
    }
    return s;
}

} // namespace timbrefit
