#include "oracles.hpp"

#include "timbrefit/dsp.hpp"
#include "timbrefit/error.hpp"
#include "timbrefit/synth.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace timbrefit;

namespace {

constexpr double kSr = 44100.0;

AudioBuffer noise(std::size_t n, std::uint64_t seed, double amp = 0.5) {
    AudioBuffer b{std::vector<double>(n), kSr};
    for (std::size_t i = 0; i < n; ++i) b.samples[i] = amp * counter_noise(seed, 99, i);
    return b;
}

AudioBuffer tone(double f, std::size_t n, double amp = 0.5) { return {oracle::sine(f, kSr, n, amp), kSr}; }

AudioBuffer rendered_saw(double f0, double dur = 0.3) {
    Patch p = Patch::defaults(Tier::T28);
    p.set(ParamId::OscMixSaw, 1.0);
    p.set(ParamId::OscMixPulse, 0.0);
    p.set(ParamId::OscMixSine, 0.0);
    p.set(ParamId::Cutoff, 16000.0);
    p.set(ParamId::FilterSlope, 48.0);
    p.set(ParamId::AmpAttack, 0.001);
    p.set(ParamId::AmpSustain, 1.0);
    p.set(ParamId::OutputGain, 0.05);
    return render({p, f0, dur});
}

double mel_total(const Matrix& m) { return std::accumulate(m.data.begin(), m.data.end(), 0.0); }

AudioBuffer negated(AudioBuffer b) {
    for (auto& s : b.samples) s = -s;
    return b;
}

} // namespace

TEST_CASE("stft shape and framing") {
    const auto spec = stft(tone(1000.0, 8192), 1024);
    CHECK(spec.bins() == 513);
    CHECK(spec.hop == 256);
    CHECK(spec.frames() == 1 + (8192 - 1024 + 255) / 256);
    const auto short_spec = stft(tone(1000.0, 100), 2048);
    CHECK(short_spec.frames() == 1);
    const auto silent = stft(AudioBuffer{std::vector<double>(5000, 0.0), kSr}, 1024);
    CHECK(std::all_of(silent.magnitudes.data.begin(), silent.magnitudes.data.end(), [](double v) { return v == 0.0; }));
    CHECK_THROWS_AS(stft(tone(1000.0, 4096), 1000), InputError);
}

TEST_CASE("stft satisfies Parseval on a full frame") {
    const std::size_t n = 2048;
    const auto buf = noise(n, 5);
    const auto spec = stft(buf, n);
    const auto w = make_window(Window::Hann, n);
    double time_energy = 0.0;
    for (std::size_t i = 0; i < n; ++i) time_energy += (w[i] * buf.samples[i]) * (w[i] * buf.samples[i]);
    double freq_energy = 0.0;
    for (std::size_t k = 0; k < spec.bins(); ++k) {
        const double m = spec.magnitudes(0, k);
        freq_energy += (k == 0 || k == n / 2 ? 1.0 : 2.0) * m * m;
    }
    freq_energy /= static_cast<double>(n);
    CHECK(freq_energy == doctest::Approx(time_energy).epsilon(0.01));
}

TEST_CASE("bin-centred sine has one dominant bin") {
    const double f = 40.0 * kSr / 1024.0;
    const auto spec = stft(tone(f, 8192), 1024);
    for (std::size_t r = 0; r + 1 < spec.frames(); ++r) {
        const auto row = spec.magnitudes.row(r);
        const auto peak = std::max_element(row.begin(), row.end()) - row.begin();
        CHECK(peak == 40);
    }
}

TEST_CASE("white noise has a flat long-term spectrum") {
    const auto spec = stft(noise(1024 + 99 * 256, 8), 1024);
    REQUIRE(spec.frames() >= 100);
    std::vector<double> mean(spec.bins(), 0.0);
    for (std::size_t r = 0; r < spec.frames(); ++r)
        for (std::size_t k = 0; k < spec.bins(); ++k) mean[k] += spec.magnitudes(r, k);
    double overall = 0.0;
    for (std::size_t k = 2; k + 2 < spec.bins(); ++k) overall += mean[k];
    overall /= static_cast<double>(spec.bins() - 4);
    // Average neighbouring bins into 16 bands to tame the per-bin variance.
    for (std::size_t band = 0; band < 16; ++band) {
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t k = 2 + band * 32; k < std::min<std::size_t>(2 + (band + 1) * 32, spec.bins() - 2); ++k, ++count) acc += mean[k];
        CHECK(acc / count == doctest::Approx(overall).epsilon(0.2));
    }
}

TEST_CASE("HTK mel scale and A-weighting curve") {
    CHECK(hz_to_mel(1000.0) == doctest::Approx(2595.0 * std::log10(1.0 + 1000.0 / 700.0)));
    CHECK(mel_to_hz(hz_to_mel(3210.0)) == doctest::Approx(3210.0));
    CHECK(std::abs(a_weighting_db(1000.0)) < 0.01);
    CHECK(a_weighting_db(100.0) == doctest::Approx(-19.1).epsilon(0.01));
    CHECK(a_weighting_db(10000.0) == doctest::Approx(-2.5).epsilon(0.05));
}

TEST_CASE("mel filterbank rows are positive and linear") {
    for (std::size_t fft : {1024u, 2048u, 8192u}) {
        const auto& fb = mel_filterbank(kLossMels, fft, kSr);
        CHECK(fb.mels() == kLossMels);
        for (std::size_t m = 0; m < fb.mels(); ++m) CHECK(fb.row_sum(m) > 0.0);
    }
    const Spectrogram zero{Matrix(3, 513), 1024, 256, kSr};
    CHECK(mel_total(mel_spectrogram(zero, kLossMels, true)) == 0.0);
}

TEST_CASE("A-weighting applied before the mel filterbank") {
    const auto at1k = stft(tone(1000.0, 16384), 2048);
    const double ratio1k = mel_total(mel_spectrogram(at1k, kLossMels, true)) / mel_total(mel_spectrogram(at1k, kLossMels, false));
    CHECK(ratio1k == doctest::Approx(1.0).epsilon(0.01));
    const auto at100 = stft(tone(100.0, 16384), 2048);
    const double ratio100 = mel_total(mel_spectrogram(at100, kLossMels, true)) / mel_total(mel_spectrogram(at100, kLossMels, false));
    CHECK(20.0 * std::log10(ratio100) == doctest::Approx(-19.1).epsilon(0.03));
}

TEST_CASE("MFCC properties") {
    const auto saw = rendered_saw(221.0);
    CHECK(mfcc(saw).data == mfcc(saw).data);
    const auto m = mfcc(AudioBuffer{std::vector<double>(8192, 0.0), kSr});
    CHECK(m.cols == kMfccCoeffs);
    for (std::size_t r = 0; r < m.rows; ++r) {
        CHECK(m(r, 0) == doctest::Approx(m(0, 0)));
        for (std::size_t c = 1; c < m.cols; ++c) CHECK(std::abs(m(r, c)) < 1e-9);
    }
    SUBCASE("scaling only moves the 0th coefficient") {
        // Broadband, so no mel band sits at the log floor.
        const auto x = noise(8192, 12);
        AudioBuffer y = x;
        for (auto& s : y.samples) s *= 2.0;
        const auto mx = mfcc(x), my = mfcc(y);
        for (std::size_t r = 0; r < mx.rows; ++r) {
            CHECK(my(r, 0) != doctest::Approx(mx(r, 0)));
            for (std::size_t c = 1; c < mx.cols; ++c) CHECK(my(r, c) == doctest::Approx(mx(r, c)).epsilon(1e-6));
        }
    }
    SUBCASE("saw and sine differ") {
        const auto a = mfcc(saw), b = mfcc(tone(221.0, saw.size(), 0.05));
        double d = 0.0;
        for (std::size_t i = 0; i < a.data.size(); ++i) d += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
        CHECK(d > 0.0);
    }
}

TEST_CASE("spectral centroid") {
    CHECK(spectral_centroid(tone(1000.0, 22050)).mean == doctest::Approx(1000.0).epsilon(0.015));
    AudioBuffer pair = tone(500.0, 22050, 0.3);
    const auto upper = oracle::sine(1500.0, kSr, 22050, 0.3);
    for (std::size_t i = 0; i < pair.size(); ++i) pair.samples[i] += upper[i];
    CHECK(std::abs(spectral_centroid(pair).mean - 1000.0) < 15.0);
    const auto silent = spectral_centroid(AudioBuffer{std::vector<double>(10000, 0.0), kSr});
    CHECK(silent.silent);
    CHECK(silent.mean == 0.0);
}

TEST_CASE("flatness, rolloff and rms") {
    CHECK(spectral_flatness(noise(44100, 3)) > 0.5);
    CHECK(spectral_flatness(tone(1000.0, 44100)) < 0.01);
    const double roll = spectral_rolloff(tone(1000.0, 44100));
    CHECK(std::abs(roll - 1000.0) < 50.0);
    CHECK(rms(oracle::sine(100.0, kSr, 44100, 1.0)) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-4));
}

TEST_CASE("features double under 2x playback rate") {
    const auto saw = rendered_saw(221.0, 0.5);
    AudioBuffer fast = saw;
    fast.sample_rate = 2.0 * kSr;
    CHECK(spectral_centroid(fast).mean == doctest::Approx(2.0 * spectral_centroid(saw).mean).epsilon(1e-9));
    CHECK(spectral_rolloff(fast) == doctest::Approx(2.0 * spectral_rolloff(saw)).epsilon(1e-9));
}

TEST_CASE("features are polarity invariant") {
    const auto saw = rendered_saw(278.0);
    const auto neg = negated(saw);
    CHECK(spectral_centroid(neg).mean == spectral_centroid(saw).mean);
    CHECK(spectral_rolloff(neg) == spectral_rolloff(saw));
    CHECK(spectral_flatness(neg) == spectral_flatness(saw));
    CHECK(even_odd_ratio(neg, 278.0) == even_odd_ratio(saw, 278.0));
    CHECK(mfcc(neg).data == mfcc(saw).data);
    CHECK(detect_pitch(neg).f0 == doctest::Approx(detect_pitch(saw).f0).epsilon(1e-9));
    CHECK(harmonic_amplitudes(neg, 278.0) == harmonic_amplitudes(saw, 278.0));
}

TEST_CASE("even/odd harmonic energy ratio") {
    // Truncated Fourier-series oracle: even harmonics 2..12 over odd 1..11 of
    // a 1/n amplitude series.
    double even = 0.0, odd = 0.0;
    for (int n = 1; n <= 12; ++n) (n % 2 ? odd : even) += 1.0 / (n * n);
    const double expected = even / odd;
    CHECK(expected == doctest::Approx(0.31276).epsilon(1e-4));
    const AudioBuffer saw{oracle::fourier_saw(221.0, kSr, 22050), kSr};
    CHECK(even_odd_ratio(saw, 221.0) == doctest::Approx(expected).epsilon(0.05));
    CHECK(even_odd_ratio(rendered_saw(221.0, 0.5), 221.0) == doctest::Approx(expected).epsilon(0.05));
    const AudioBuffer square{oracle::fourier_square(221.0, kSr, 22050), kSr};
    CHECK(even_odd_ratio(square, 221.0) < 0.05);
    CHECK_THROWS_AS(even_odd_ratio(saw, 0.0), InputError);
}

TEST_CASE("harmonic amplitudes") {
    const auto sine_h = harmonic_amplitudes(tone(221.0, 22050), 221.0);
    REQUIRE(sine_h.size() == 8);
    CHECK(sine_h[0] == 1.0);
    for (std::size_t i = 1; i < 8; ++i) CHECK(sine_h[i] < 1e-3);
    const auto saw_h = harmonic_amplitudes(rendered_saw(221.0, 0.5), 221.0);
    for (std::size_t i = 0; i < 8; ++i) CHECK(saw_h[i] == doctest::Approx(1.0 / (i + 1.0)).epsilon(0.05));
    CHECK(harmonic_amplitudes(tone(5000.0, 22050), 5000.0).size() == 4);
    CHECK_THROWS_AS(harmonic_amplitudes(tone(221.0, 2048), 0.0), InputError);
}

TEST_CASE("pitch detection") {
    for (double f0 : {221.0, 278.0, 295.0}) {
        const auto est = detect_pitch(rendered_saw(f0, 0.15));
        CHECK(est.voiced);
        CHECK(est.f0 == doctest::Approx(f0).epsilon(0.01));
    }
    CHECK(detect_pitch(tone(82.4, 8192)).f0 == doctest::Approx(82.4).epsilon(0.01));
    CHECK(detect_pitch(tone(1760.0, 4096)).f0 == doctest::Approx(1760.0).epsilon(0.01));
    CHECK_FALSE(detect_pitch(noise(8192, 4)).voiced);
    CHECK_FALSE(detect_pitch(AudioBuffer{std::vector<double>(4096, 0.0), kSr}).voiced);
}

TEST_CASE("pitch detection under noise keeps the fundamental") {
    // Enough noise that no dip reaches the plain threshold; the deepest dip is
    // then often at twice or three times the period.
    for (double f0 : {164.81, 207.65, 261.63, 329.63}) {
        CAPTURE(f0);
        auto x = rendered_saw(f0);
        const double peak = *std::max_element(x.samples.begin(), x.samples.end());
        const auto n = noise(x.size(), 7, 0.3 * peak);
        for (std::size_t i = 0; i < x.size(); ++i) x.samples[i] += n.samples[i];
        const auto est = detect_pitch(x);
        CHECK(est.confidence < 0.9);
        CHECK(est.f0 == doctest::Approx(f0).epsilon(0.01));
    }
}

TEST_CASE("onsets of a click train") {
    AudioBuffer clicks{std::vector<double>(static_cast<std::size_t>(1.2 * kSr), 0.0), kSr};
    const std::vector<double> times{0.1, 0.35, 0.6, 0.85};
    for (double t : times) clicks.samples[static_cast<std::size_t>(t * kSr)] = 1.0;
    const auto onsets = detect_onsets(clicks);
    REQUIRE(onsets.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(onsets[i] / kSr - times[i]) <= 0.010);
    CHECK(detect_onsets(AudioBuffer{std::vector<double>(44100, 0.0), kSr}).empty());
}

TEST_CASE("onsets of 22 rendered sixteenth notes at 100 BPM") {
    const double step = 0.15;
    const std::vector<double> pitches{221.0, 278.0, 295.0};
    Patch p = Patch::defaults(Tier::T28);
    p.set(ParamId::AmpAttack, 0.003);
    p.set(ParamId::AmpRelease, 0.02);
    p.set(ParamId::OutputGain, 0.6);
    AudioBuffer seq{{}, kSr};
    for (int i = 0; i < 22; ++i) {
        const auto note = render({p, pitches[i % 3], step});
        seq.samples.insert(seq.samples.end(), note.samples.begin(), note.samples.end());
    }
    const auto onsets = detect_onsets(seq);
    REQUIRE(onsets.size() == 22);
    for (std::size_t i = 0; i < 22; ++i) CHECK(std::abs(onsets[i] / kSr - i * step) <= 0.010);
}

TEST_CASE("feature summary") {
    const auto s = summarize(rendered_saw(221.0, 0.3));
    CHECK(s.voiced);
    CHECK(s.f0 == doctest::Approx(221.0).epsilon(0.01));
    CHECK(s.harmonic_amps.size() == 8);
    CHECK(s.harmonic_amps[0] == 1.0);
    CHECK(s.even_odd_ratio > 0.25);
    CHECK(s.flatness >= 0.0);
    CHECK(s.flatness <= 1.0);
    CHECK_FALSE(summarize(noise(8192, 2)).voiced);
}
