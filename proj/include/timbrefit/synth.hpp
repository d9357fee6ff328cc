#pragma once

#include "timbrefit/params.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace timbrefit {

inline constexpr double kDefaultSampleRate = 44100.0;

struct AudioBuffer {
    std::vector<double> samples;
    double sample_rate = kDefaultSampleRate;

    std::size_t size() const { return samples.size(); }
    double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Two-operator FM voice mixed into the oscillator bank.
struct FmExtension {
    double ratio = 1.0; // modulator / carrier, [0.5, 8]
    double index = 0.0; // modulation index, [0, 10]
    double level = 0.0; // mix weight, [0, 1]
};

/// Optional timbre extensions outside the tiered parameter space.
struct Extensions {
    std::optional<std::array<double, 5>> chebyshev; // waveshaper on the oscillator mix
    std::optional<FmExtension> fm;
};

struct RenderRequest {
    Patch patch;
    double f0 = 220.0;
    double duration = 0.15;
    double sample_rate = kDefaultSampleRate;
    std::uint64_t seed = 0;
    Extensions extensions{};
};

/// Note-off happens at this fraction of the rendered duration; the rest of
/// the buffer holds the release and reverb tail.
inline constexpr double kNoteOffFraction = 0.75;

/// Filter time-variation granularity and the transform size used per frame.
inline constexpr std::size_t kFilterFrame = 64;
inline constexpr std::size_t kFilterFft = 1024;

/// Oscillators -> mixer -> low-pass -> EQ -> amp -> reverb -> gain/soft clip.
/// Pure function of the request (including seed).
AudioBuffer render(const RenderRequest& request);

/// Renders of a population across pitches; entry (b, k) is bit-identical to
/// render() of denormalize(population[b]) at pitches[k].
struct RenderGrid {
    std::size_t candidates = 0;
    std::size_t pitches = 0;
    std::vector<AudioBuffer> buffers; // row-major (b, k)

    const AudioBuffer& at(std::size_t b, std::size_t k) const { return buffers[b * pitches + k]; }
};

/// `durations` holds one duration per pitch, or a single value for all.
RenderGrid render_batch(std::span<const ParamVector> population, Tier tier, std::span<const double> pitches,
                        std::span<const double> durations, double sample_rate = kDefaultSampleRate,
                        std::uint64_t seed = 0);

/// Sigmoid low-pass magnitude with a Gaussian resonance bump at the cutoff.
double filter_gain(double freq, double cutoff, double slope, double resonance);
std::vector<double> filter_magnitude(std::span<const double> freqs, double cutoff, double slope, double resonance);

/// Frame cutoff under the filter envelope: f_c * (1 + amount * (env_mean -
/// 0.5)), kept inside [20 Hz, Nyquist].
double effective_cutoff(double cutoff, double amount, double env_mean, double sample_rate);

struct EqBand {
    double center_hz;
    double gain_db;
};

/// Width (standard deviation, in octaves) of each EQ band's dB-domain bump.
inline constexpr double kEqBandwidthOctaves = 0.5;

double eq_gain(double freq, std::span<const EqBand> bands);
std::vector<double> eq_magnitude(std::span<const double> freqs, std::span<const EqBand> bands);

struct Adsr {
    double attack;
    double decay;
    double sustain;
    double release;
};

/// Piecewise-linear envelope of n samples with note-off at note_len seconds.
std::vector<double> adsr(const Adsr& env, double note_len, std::size_t n, double sample_rate);

struct UnisonLayout {
    std::vector<double> offsets; // symmetric in [-1, 1], sums to 0
    std::vector<double> ratios;  // 2^((detune + spread * offset) / 12)
};
UnisonLayout unison_layout(int voices, double detune_st, double spread_st);

/// Seconds of impulse response at a given room size.
double reverb_length(double size);

/// (1 - mix) * dry + mix * (dry convolved with a seeded decaying-noise
/// impulse). mix == 0 returns the input unchanged.
AudioBuffer reverb(const AudioBuffer& buf, double size, double mix, std::uint64_t seed);

/// y = sum_k c_k T_k(x) over Chebyshev polynomials T_1..T_5, input clipped
/// to [-1, 1].
AudioBuffer chebyshev_waveshape(const AudioBuffer& buf, const std::array<double, 5>& coeffs);

/// sin(2 pi f0 t + index * sin(2 pi ratio f0 t)).
std::vector<double> fm_operator(double f0, double ratio, double index, std::size_t n, double sample_rate);

/// Counter-based uniform noise in [-1, 1): value depends only on
/// (seed, stream, index).
double counter_noise(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

double midi_to_hz(double midi);

} // namespace timbrefit
