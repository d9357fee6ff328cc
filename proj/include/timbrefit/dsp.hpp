#pragma once

#include "timbrefit/synth.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace timbrefit {

/// Dense row-major matrix (rows = frames).
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
};

enum class Window { Hann, Rectangular };

/// Magnitude spectrogram, frames x (fft_size / 2 + 1).
struct Spectrogram {
    Matrix magnitudes;
    std::size_t fft_size = 0;
    std::size_t hop = 0;
    double sample_rate = kDefaultSampleRate;

    std::size_t frames() const { return magnitudes.rows; }
    std::size_t bins() const { return magnitudes.cols; }
    double bin_hz(std::size_t k) const { return static_cast<double>(k) * sample_rate / static_cast<double>(fft_size); }
};

/// Periodic window of length n.
std::vector<double> make_window(Window w, std::size_t n);

/// Frames start at 0 and advance by hop (fft_size / 4 when hop == 0); the
/// last frame is zero-padded. A buffer shorter than one frame yields a single
/// zero-padded frame.
Spectrogram stft(const AudioBuffer& buf, std::size_t fft_size, std::size_t hop = 0, Window window = Window::Hann);

double hz_to_mel(double hz); // HTK
double mel_to_hz(double mel);

/// IEC 61672 A-weighting in dB (0 dB at 1 kHz).
double a_weighting_db(double hz);

/// Sparse triangular HTK filterbank between 0 Hz and Nyquist. A triangle that
/// falls between two bins takes its nearest bin, so every row has positive
/// weight.
class MelFilterbank {
public:
    MelFilterbank(std::size_t n_mels, std::size_t fft_size, double sample_rate);

    std::size_t mels() const { return rows_.size(); }
    std::size_t bins() const { return bins_; }

    void apply(std::span<const double> spectrum, std::span<double> out) const;
    /// Sum of the weights of one filter.
    double row_sum(std::size_t m) const;

private:
    struct Row {
        std::size_t first_bin;
        std::vector<double> weights;
    };
    std::size_t bins_;
    std::vector<Row> rows_;
};

/// Shared, lazily built filterbank for a configuration.
const MelFilterbank& mel_filterbank(std::size_t n_mels, std::size_t fft_size, double sample_rate);
/// Per-bin A-weighting gains (linear amplitude) for an FFT size.
const std::vector<double>& a_weighting_gains(std::size_t fft_size, double sample_rate);

inline constexpr std::size_t kLossMels = 128;
inline constexpr std::size_t kMfccMels = 40;
inline constexpr std::size_t kMfccCoeffs = 13;
inline constexpr double kLogFloor = 1e-7;

/// Mel energies of a magnitude spectrogram, optionally A-weighted per bin
/// before the filterbank.
Matrix mel_spectrogram(const Spectrogram& spec, std::size_t n_mels, bool a_weighting);

/// DCT-II (orthonormal) of the log power-mel spectrum from a spectrogram.
Matrix mfcc_from_spectrogram(const Spectrogram& spec, std::size_t n_coeffs = kMfccCoeffs);
/// Uses a 2048-point Hann STFT with hop 512 and 40 mel bands.
Matrix mfcc(const AudioBuffer& buf, std::size_t n_coeffs = kMfccCoeffs);

struct CentroidResult {
    std::vector<double> per_frame; // Hz; silent frames hold 0
    double mean = 0.0;             // over non-silent frames
    bool silent = false;           // no non-silent frame
};

inline constexpr double kSilentFrameRms = 1e-4;
inline constexpr std::size_t kAnalysisFft = 2048;

CentroidResult spectral_centroid_from(const Spectrogram& spec, std::span<const double> samples);
CentroidResult spectral_centroid(const AudioBuffer& buf);

double spectral_rolloff(const AudioBuffer& buf, double fraction = 0.95);
double spectral_flatness(const AudioBuffer& buf);
/// Energy at even harmonics (2..12) over energy at odd harmonics (1..11),
/// each measured in a +/-3% window.
double even_odd_ratio(const AudioBuffer& buf, double f0);
double rms(std::span<const double> x);

struct OnsetConfig {
    double delta = 0.015;
    std::size_t fft_size = 512;
    std::size_t hop = 128;
    std::size_t mels = 40;
    double peak_window = 0.03;   // s, local-maximum half-window
    double median_window = 0.1;  // s, threshold median half-window
    double min_gap = 0.05;       // s
};

/// Spectral-flux onsets, returned as sample indices.
std::vector<std::size_t> detect_onsets(const AudioBuffer& buf, const OnsetConfig& cfg = {});

struct PitchEstimate {
    double f0 = 0.0;
    double confidence = 0.0;
    bool voiced = false;
};

/// YIN-style difference-function estimate with parabolic refinement.
PitchEstimate detect_pitch(const AudioBuffer& segment, double fmin = 40.0, double fmax = 4000.0);

/// Peak magnitudes at k * f0 (k = 1..n), relative to the first harmonic.
/// Harmonics at or above Nyquist are dropped.
std::vector<double> harmonic_amplitudes(const AudioBuffer& buf, double f0, std::size_t n = 8);

struct FeatureSummary {
    double rolloff_95 = 0.0;
    double flatness = 0.0;
    double even_odd_ratio = 0.0;
    double rms = 0.0;
    double centroid_mean = 0.0;
    double f0 = 0.0;
    bool voiced = false;
    std::vector<double> harmonic_amps;
};

/// Features used for spectral initialization; f0 <= 0 asks for detection.
FeatureSummary summarize(const AudioBuffer& buf, double f0 = 0.0);

} // namespace timbrefit
