#include "timbrefit/synth.hpp"

#include "timbrefit/error.hpp"
#include "timbrefit/fft.hpp"
#include "timbrefit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <string>

namespace timbrefit {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kPulseSharpness = 20.0;
constexpr double kResonanceWidth = 0.15;
constexpr double kVibratoRateHz = 5.0;
constexpr double kDelaySeconds = 0.3; // eighth note at 100 BPM
constexpr double kMinCutoffHz = 20.0;
constexpr double kReverbDecay = 6.907755278982137; // ln(1000): -60 dB at the end of the impulse

// Noise streams keep the oscillator, floor and reverb noise independent.
constexpr std::uint64_t kOscNoiseStream = 1;
constexpr std::uint64_t kFloorNoiseStream = 2;
constexpr std::uint64_t kReverbStream = 3;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

void validate(double f0, double duration, double sample_rate) {
    if (!(sample_rate >= 8000.0 && sample_rate <= 192000.0)) {
        throw InputError("sample rate must lie in [8000, 192000] Hz");
    }
    if (!(f0 > 20.0 && f0 < sample_rate / 4.0)) {
        throw InputError("f0 " + std::to_string(f0) + " Hz outside (20, " + std::to_string(sample_rate / 4.0) + ") Hz");
    }
    if (!(duration > 0.0 && duration <= 10.0)) {
        throw InputError("duration must lie in (0, 10] seconds");
    }
}

std::size_t sample_count(double duration, double sample_rate) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(duration * sample_rate)));
}

/// Decaying-noise impulse response, pre-transformed for convolution with
/// buffers of a fixed length.
class ReverbKernel {
public:
    ReverbKernel(double size, std::size_t n, double sample_rate, std::uint64_t seed) : n_(n) {
        const auto full = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(reverb_length(size) * sample_rate)));
        const std::size_t len = std::min(full, n);
        fft_size_ = next_pow2(n + len - 1);
        std::vector<double> ir(fft_size_, 0.0);
        double energy = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            ir[i] = counter_noise(seed, kReverbStream, i) *
                    std::exp(-kReverbDecay * static_cast<double>(i) / static_cast<double>(full));
            energy += ir[i] * ir[i];
        }
        const double norm = energy > 0.0 ? 1.0 / std::sqrt(energy) : 0.0;
        for (std::size_t i = 0; i < len; ++i) ir[i] *= norm;
        spectrum_.resize(fft_size_ / 2 + 1);
        RealFft(fft_size_).forward(ir, spectrum_);
    }

    void apply(std::vector<double>& x, double mix) const {
        if (mix == 0.0) return;
        RealFft fft(fft_size_);
        std::vector<double> padded(fft_size_, 0.0);
        std::copy(x.begin(), x.end(), padded.begin());
        std::vector<std::complex<double>> spec(fft.bins());
        fft.forward(padded, spec);
        for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= spectrum_[k];
        fft.inverse(spec, padded);
        for (std::size_t i = 0; i < n_; ++i) x[i] = (1.0 - mix) * x[i] + mix * padded[i];
    }

private:
    std::size_t n_;
    std::size_t fft_size_ = 0;
    std::vector<std::complex<double>> spectrum_;
};

void apply_chebyshev(std::vector<double>& x, const std::array<double, 5>& c) {
    for (auto& s : x) {
        const double v = std::clamp(s, -1.0, 1.0);
        double prev = 1.0, cur = v, acc = c[0] * v;
        for (std::size_t k = 1; k < 5; ++k) {
            const double next = 2.0 * v * cur - prev;
            prev = cur;
            cur = next;
            acc += c[k] * cur;
        }
        s = acc;
    }
}

/// Everything about a note that does not depend on pitch: envelopes,
/// per-frame filter responses, reverb kernel. Shared across the pitches of
/// one candidate in batch rendering.
class NoteRenderer {
public:
    NoteRenderer(const Patch& patch, double duration, double sample_rate, std::uint64_t seed, const Extensions& ext)
        : sr_(sample_rate), duration_(duration), seed_(seed), ext_(ext), n_(sample_count(duration, sample_rate)) {
        using enum ParamId;
        w_saw_ = patch.get(OscMixSaw);
        w_pulse_ = patch.get(OscMixPulse);
        w_sine_ = patch.get(OscMixSine);
        w_noise_ = patch.get(OscMixNoise);
        pulse_threshold_ = std::sin(kTwoPi * patch.get(PulseWidth));
        layout_ = unison_layout(static_cast<int>(std::lround(patch.get(UnisonVoices))), patch.get(Detune),
                                patch.get(UnisonSpread));
        detune_ = patch.get(Detune);
        noise_floor_ = patch.get(NoiseFloor);
        reverb_mix_ = patch.get(ReverbMix);
        gain_ = patch.get(OutputGain);
        extras_ = patch.tier() == Tier::T29;
        drive_ = patch.get(DistortionDrive);
        feedback_ = patch.get(DelayFeedback);
        vibrato_ = patch.get(VibratoDepth);

        const double note_len = kNoteOffFraction * duration;
        amp_env_ = adsr({patch.get(AmpAttack), patch.get(AmpDecay), patch.get(AmpSustain), patch.get(AmpRelease)},
                        note_len, n_, sr_);
        const auto filt_env = adsr(
            {patch.get(FilterAttack), patch.get(FilterDecay), patch.get(FilterSustain), patch.get(FilterRelease)},
            note_len, n_, sr_);

        // Combined low-pass x EQ response per frame, deduplicated when the
        // effective cutoff repeats.
        const std::array<EqBand, 2> bands{EqBand{patch.get(Eq1Freq), patch.get(Eq1Gain)},
                                          EqBand{patch.get(Eq2Freq), patch.get(Eq2Gain)}};
        const std::size_t bins = kFilterFft / 2 + 1;
        std::vector<double> eq(bins);
        for (std::size_t k = 0; k < bins; ++k) eq[k] = eq_gain(static_cast<double>(k) * sr_ / kFilterFft, bands);
        const double cutoff = patch.get(Cutoff), slope = patch.get(FilterSlope), res = patch.get(Resonance);
        const double amount = patch.get(FilterEnvAmount);
        double last_fc = -1.0;
        const std::size_t frames = (n_ + kFilterFrame - 1) / kFilterFrame;
        frame_shape_.resize(frames);
        for (std::size_t f = 0; f < frames; ++f) {
            const std::size_t begin = f * kFilterFrame, end = std::min(n_, begin + kFilterFrame);
            double mean = 0.0;
            for (std::size_t i = begin; i < end; ++i) mean += filt_env[i];
            mean /= static_cast<double>(end - begin);
            const double fc = effective_cutoff(cutoff, amount, mean, sr_);
            if (fc != last_fc) {
                std::vector<double> h(bins);
                for (std::size_t k = 0; k < bins; ++k) {
                    h[k] = filter_gain(static_cast<double>(k) * sr_ / kFilterFft, fc, slope, res) * eq[k];
                }
                shapes_.push_back(std::move(h));
                last_fc = fc;
            }
            frame_shape_[f] = shapes_.size() - 1;
        }

        if (reverb_mix_ > 0.0) reverb_.emplace(patch.get(ReverbSize), n_, sr_, seed_);
    }

    AudioBuffer render(double f0) const {
        validate(f0, duration_, sr_);
        std::vector<double> x = oscillators(f0);
        if (ext_.chebyshev) apply_chebyshev(x, *ext_.chebyshev);
        x = filter(x);
        for (std::size_t i = 0; i < n_; ++i) {
            x[i] = x[i] * amp_env_[i] + noise_floor_ * counter_noise(seed_, kFloorNoiseStream, i);
        }
        if (extras_) {
            for (auto& s : x) s = std::tanh(drive_ * s);
            const auto delay = static_cast<std::size_t>(std::llround(kDelaySeconds * sr_));
            for (std::size_t i = delay; i < n_; ++i) x[i] += feedback_ * x[i - delay];
        }
        if (reverb_) reverb_->apply(x, reverb_mix_);
        for (auto& s : x) s = std::tanh(gain_ * s);
        return AudioBuffer{std::move(x), sr_};
    }

private:
    std::vector<double> oscillators(double f0) const {
        std::vector<double> x(n_, 0.0);
        const double voices = static_cast<double>(layout_.ratios.size());
        const bool saw = w_saw_ != 0.0, pulse = w_pulse_ != 0.0, sine = w_sine_ != 0.0;
        if (saw || pulse || sine) {
            for (double ratio : layout_.ratios) {
                const double inc = f0 * ratio / sr_;
                double phase = 0.0;
                for (std::size_t i = 0; i < n_; ++i) {
                    const double s = std::sin(kTwoPi * phase);
                    double v = 0.0;
                    if (saw) v += w_saw_ * (2.0 * phase - 1.0);
                    if (pulse) v += w_pulse_ * std::tanh(kPulseSharpness * (s - pulse_threshold_));
                    if (sine) v += w_sine_ * s;
                    x[i] += v / voices;
                    double step = inc;
                    if (extras_ && vibrato_ != 0.0) {
                        const double t = static_cast<double>(i) / sr_;
                        step *= std::exp2(vibrato_ * std::sin(kTwoPi * kVibratoRateHz * t) / 12.0);
                    }
                    phase += step;
                    phase -= std::floor(phase);
                }
            }
        }
        if (w_noise_ != 0.0) {
            for (std::size_t i = 0; i < n_; ++i) x[i] += w_noise_ * counter_noise(seed_, kOscNoiseStream, i);
        }
        if (ext_.fm && ext_.fm->level != 0.0) {
            const auto fm = fm_operator(f0 * std::exp2(detune_ / 12.0), ext_.fm->ratio, ext_.fm->index, n_, sr_);
            for (std::size_t i = 0; i < n_; ++i) x[i] += ext_.fm->level * fm[i];
        }
        return x;
    }

    // Each frame is zero-padded, centred in the transform, multiplied by its
    // zero-phase response and overlap-added back.
    std::vector<double> filter(const std::vector<double>& x) const {
        constexpr std::size_t offset = (kFilterFft - kFilterFrame) / 2;
        RealFft fft(kFilterFft);
        std::vector<double> out(n_, 0.0), block(kFilterFft);
        std::vector<std::complex<double>> spec(fft.bins());
        for (std::size_t f = 0; f < frame_shape_.size(); ++f) {
            const std::size_t begin = f * kFilterFrame, end = std::min(n_, begin + kFilterFrame);
            std::fill(block.begin(), block.end(), 0.0);
            bool silent = true;
            for (std::size_t i = begin; i < end; ++i) {
                block[offset + i - begin] = x[i];
                silent = silent && x[i] == 0.0;
            }
            if (silent) continue;
            fft.forward(block, spec);
            const auto& h = shapes_[frame_shape_[f]];
            for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= h[k];
            fft.inverse(spec, block);
            const auto base = static_cast<std::ptrdiff_t>(begin) - static_cast<std::ptrdiff_t>(offset);
            for (std::size_t j = 0; j < kFilterFft; ++j) {
                const auto t = base + static_cast<std::ptrdiff_t>(j);
                if (t >= 0 && t < static_cast<std::ptrdiff_t>(n_)) out[static_cast<std::size_t>(t)] += block[j];
            }
        }
        return out;
    }

    double sr_;
    double duration_;
    std::uint64_t seed_;
    Extensions ext_;
    std::size_t n_;
    double w_saw_ = 0, w_pulse_ = 0, w_sine_ = 0, w_noise_ = 0;
    double pulse_threshold_ = 0;
    double detune_ = 0;
    UnisonLayout layout_;
    double noise_floor_ = 0, reverb_mix_ = 0, gain_ = 0;
    bool extras_ = false;
    double drive_ = 1, feedback_ = 0, vibrato_ = 0;
    std::vector<double> amp_env_;
    std::vector<std::vector<double>> shapes_;
    std::vector<std::size_t> frame_shape_;
    std::optional<ReverbKernel> reverb_;
};

} // namespace

double counter_noise(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    const std::uint64_t h = splitmix64(splitmix64(seed ^ (stream * 0xD1B54A32D192ED03ull)) + index);
    return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

double midi_to_hz(double midi) { return 440.0 * std::exp2((midi - 69.0) / 12.0); }

UnisonLayout unison_layout(int voices, double detune_st, double spread_st) {
    voices = std::clamp(voices, 1, 7);
    UnisonLayout l;
    for (int i = 0; i < voices; ++i) {
        const double o = voices == 1 ? 0.0 : -1.0 + 2.0 * i / (voices - 1);
        l.offsets.push_back(o);
        l.ratios.push_back(std::exp2((detune_st + spread_st * o) / 12.0));
    }
    return l;
}

double filter_gain(double freq, double cutoff, double slope, double resonance) {
    const double r = freq / cutoff - 1.0;
    const double z = r / kResonanceWidth;
    return 1.0 / (1.0 + std::exp(slope * r)) + resonance * 2.0 * std::exp(-0.5 * z * z);
}

double effective_cutoff(double cutoff, double amount, double env_mean, double sample_rate) {
    return std::clamp(cutoff * (1.0 + amount * (env_mean - 0.5)), kMinCutoffHz, sample_rate / 2.0);
}

std::vector<double> filter_magnitude(std::span<const double> freqs, double cutoff, double slope, double resonance) {
    std::vector<double> out(freqs.size());
    for (std::size_t i = 0; i < freqs.size(); ++i) out[i] = filter_gain(freqs[i], cutoff, slope, resonance);
    return out;
}

double eq_gain(double freq, std::span<const EqBand> bands) {
    if (freq <= 0.0) return 1.0;
    double db = 0.0;
    for (const auto& b : bands) {
        if (b.gain_db == 0.0) continue;
        const double octaves = std::log2(freq / b.center_hz) / kEqBandwidthOctaves;
        db += b.gain_db * std::exp(-0.5 * octaves * octaves);
    }
    return db == 0.0 ? 1.0 : std::pow(10.0, db / 20.0);
}

std::vector<double> eq_magnitude(std::span<const double> freqs, std::span<const EqBand> bands) {
    std::vector<double> out(freqs.size());
    for (std::size_t i = 0; i < freqs.size(); ++i) out[i] = eq_gain(freqs[i], bands);
    return out;
}

std::vector<double> adsr(const Adsr& env, double note_len, std::size_t n, double sample_rate) {
    const double a = std::max(env.attack, 1e-6), d = std::max(env.decay, 1e-6), r = std::max(env.release, 1e-6);
    const double s = std::clamp(env.sustain, 0.0, 1.0);
    auto held = [&](double t) {
        if (t < a) return t / a;
        if (t < a + d) return 1.0 - (1.0 - s) * (t - a) / d;
        return s;
    };
    const double off_level = held(note_len);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        out[i] = t < note_len ? held(t) : off_level * std::max(0.0, 1.0 - (t - note_len) / r);
    }
    return out;
}

double reverb_length(double size) { return 0.05 + 0.45 * std::clamp(size, 0.0, 1.0); }

AudioBuffer reverb(const AudioBuffer& buf, double size, double mix, std::uint64_t seed) {
    AudioBuffer out = buf;
    if (mix == 0.0 || buf.samples.empty()) return out;
    ReverbKernel(size, buf.size(), buf.sample_rate, seed).apply(out.samples, mix);
    return out;
}

AudioBuffer chebyshev_waveshape(const AudioBuffer& buf, const std::array<double, 5>& coeffs) {
    AudioBuffer out = buf;
    apply_chebyshev(out.samples, coeffs);
    return out;
}

std::vector<double> fm_operator(double f0, double ratio, double index, std::size_t n, double sample_rate) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        out[i] = std::sin(kTwoPi * f0 * t + index * std::sin(kTwoPi * ratio * f0 * t));
    }
    return out;
}

AudioBuffer render(const RenderRequest& req) {
    validate(req.f0, req.duration, req.sample_rate);
    return NoteRenderer(req.patch, req.duration, req.sample_rate, req.seed, req.extensions).render(req.f0);
}

RenderGrid render_batch(std::span<const ParamVector> population, Tier tier, std::span<const double> pitches,
                        std::span<const double> durations, double sample_rate, std::uint64_t seed) {
    if (population.empty()) throw InputError("render_batch needs a non-empty population");
    if (pitches.empty()) throw InputError("render_batch needs at least one pitch");
    if (durations.size() != 1 && durations.size() != pitches.size()) {
        throw InputError("render_batch needs one duration, or one per pitch");
    }
    const auto dim = dimension(tier);
    for (const auto& v : population) {
        if (v.size() != dim) {
            throw InputError("render_batch population mixes tiers: vector of length " + std::to_string(v.size()) +
                             " in a " + std::string(tier_label(tier)) + " batch");
        }
    }
    auto duration_of = [&](std::size_t k) { return durations.size() == 1 ? durations[0] : durations[k]; };
    for (std::size_t k = 0; k < pitches.size(); ++k) validate(pitches[k], duration_of(k), sample_rate);

    RenderGrid grid{population.size(), pitches.size(), {}};
    grid.buffers.resize(population.size() * pitches.size());
    parallel_for(population.size(), [&](std::size_t b) {
        const Patch patch = denormalize(population[b], tier);
        std::vector<std::pair<double, std::unique_ptr<NoteRenderer>>> renderers;
        for (std::size_t k = 0; k < pitches.size(); ++k) {
            const double dur = duration_of(k);
            auto it = std::find_if(renderers.begin(), renderers.end(), [&](const auto& r) { return r.first == dur; });
            if (it == renderers.end()) {
                renderers.emplace_back(dur, std::make_unique<NoteRenderer>(patch, dur, sample_rate, seed, Extensions{}));
                it = std::prev(renderers.end());
            }
            grid.buffers[b * pitches.size() + k] = it->second->render(pitches[k]);
        }
    });
    return grid;
}

} // namespace timbrefit
