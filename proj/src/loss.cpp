#include "timbrefit/loss.hpp"

#include "timbrefit/error.hpp"
#include "timbrefit/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace timbrefit {
namespace {

AudioBuffer padded(const AudioBuffer& buf, std::size_t n) {
    AudioBuffer out = buf;
    if (out.samples.size() < n) out.samples.resize(n, 0.0);
    return out;
}

struct MelTerms {
    double value = 0.0;
    bool silent = false;
};

MelTerms mel_terms(const SignalFeatures& x, const SignalFeatures& y) {
    MelTerms t;
    bool all_silent = true;
    for (std::size_t r = 0; r < kLossFftSizes.size(); ++r) {
        const auto& mx = x.mel[r];
        const auto& my = y.mel[r];
        double diff2 = 0.0, l1 = 0.0;
        for (std::size_t i = 0; i < mx.data.size(); ++i) {
            const double d = mx.data[i] - my.data[i];
            diff2 += d * d;
            l1 += std::abs(x.log_mel[r].data[i] - y.log_mel[r].data[i]);
        }
        double sc = 0.0;
        if (x.mel_norm[r] > 0.0) {
            sc = std::sqrt(diff2) / x.mel_norm[r];
            all_silent = false;
        } else if (y.mel_norm[r] > 0.0) {
            sc = 1.0;
            all_silent = false;
        }
        t.value += sc + l1 / static_cast<double>(mx.data.size());
    }
    t.value /= static_cast<double>(kLossFftSizes.size());
    t.silent = all_silent;
    return t;
}

double mfcc_mse(const SignalFeatures& x, const SignalFeatures& y) {
    double acc = 0.0;
    for (std::size_t c = 0; c < x.mfcc_mean.size(); ++c) {
        const double d = x.mfcc_mean[c] - y.mfcc_mean[c];
        acc += d * d;
    }
    return acc / static_cast<double>(x.mfcc_mean.size());
}

LossBreakdown combine(const SignalFeatures& x, const SignalFeatures& y) {
    if (x.sample_rate != y.sample_rate) throw InputError("loss operands must share a sample rate");
    LossBreakdown b;
    const auto mel = mel_terms(x, y);
    b.mel = mel.value;
    b.centroid = std::abs(x.centroid - y.centroid) / (x.sample_rate / 2.0);
    b.mfcc = mfcc_mse(x, y);
    b.silent = mel.silent || x.centroid_silent || y.centroid_silent;
    b.composite = b.weights.mel * b.mel + b.weights.centroid * b.centroid + b.weights.mfcc * b.mfcc;
    return b;
}

/// Brings both operands to a common length, reusing cached target features
/// when the candidate already matches.
LossBreakdown compare(const TargetFeatures& target, const AudioBuffer& candidate) {
    const auto n = target.buffer().size();
    if (candidate.size() == n) return combine(target.features(), analyze(candidate));
    const auto len = std::max(n, candidate.size());
    if (len == n) return combine(target.features(), analyze(padded(candidate, len)));
    return combine(analyze(padded(target.buffer(), len)), analyze(padded(candidate, len)));
}

} // namespace

SignalFeatures analyze(const AudioBuffer& buf) {
    SignalFeatures f;
    f.length = buf.size();
    f.sample_rate = buf.sample_rate;
    for (std::size_t r = 0; r < kLossFftSizes.size(); ++r) {
        const auto spec = stft(buf, kLossFftSizes[r]);
        f.mel[r] = mel_spectrogram(spec, kLossMels, true);
        f.log_mel[r] = f.mel[r];
        double norm2 = 0.0;
        for (auto& v : f.log_mel[r].data) {
            norm2 += v * v;
            v = std::log(std::max(v, kLogFloor));
        }
        f.mel_norm[r] = std::sqrt(norm2);
        if (kLossFftSizes[r] == kAnalysisFft) {
            const auto c = spectral_centroid_from(spec, buf.samples);
            f.centroid = c.mean;
            f.centroid_silent = c.silent;
            const auto m = mfcc_from_spectrogram(spec, kMfccCoeffs);
            f.mfcc_mean.assign(kMfccCoeffs, 0.0);
            for (std::size_t row = 0; row < m.rows; ++row) {
                for (std::size_t c2 = 0; c2 < kMfccCoeffs; ++c2) f.mfcc_mean[c2] += m(row, c2);
            }
            for (auto& v : f.mfcc_mean) v /= static_cast<double>(m.rows);
        }
    }
    return f;
}

TargetFeatures::TargetFeatures(AudioBuffer target) : buffer_(std::move(target)), features_(analyze(buffer_)) {}

double mel_multires_loss(const AudioBuffer& target, const AudioBuffer& candidate, bool* silent) {
    const auto n = std::max(target.size(), candidate.size());
    const auto t = mel_terms(analyze(padded(target, n)), analyze(padded(candidate, n)));
    if (silent) *silent = t.silent;
    return t.value;
}

double centroid_loss(const AudioBuffer& x, const AudioBuffer& y, bool* silent) {
    const auto cx = spectral_centroid(x), cy = spectral_centroid(y);
    if (silent) *silent = cx.silent || cy.silent;
    return std::abs(cx.mean - cy.mean) / (x.sample_rate / 2.0);
}

double mfcc_loss(const AudioBuffer& x, const AudioBuffer& y) {
    const auto n = std::max(x.size(), y.size());
    return mfcc_mse(analyze(padded(x, n)), analyze(padded(y, n)));
}

LossBreakdown composite_loss(const AudioBuffer& target, const AudioBuffer& candidate) {
    return compare(TargetFeatures(target), candidate);
}

LossBreakdown composite_loss(const TargetFeatures& target, const AudioBuffer& candidate) {
    return compare(target, candidate);
}

std::vector<double> composite_loss_batch(const RenderGrid& renders, std::span<const TargetFeatures> targets) {
    if (targets.size() != renders.pitches || renders.buffers.size() != renders.candidates * renders.pitches) {
        throw InputError("composite_loss_batch: render grid has " + std::to_string(renders.pitches) +
                         " pitches but " + std::to_string(targets.size()) + " targets were given");
    }
    std::vector<double> out(renders.candidates, 0.0);
    parallel_for(renders.candidates, [&](std::size_t b) {
        double acc = 0.0;
        for (std::size_t k = 0; k < renders.pitches; ++k) acc += compare(targets[k], renders.at(b, k)).composite;
        out[b] = acc / static_cast<double>(renders.pitches);
    });
    return out;
}

} // namespace timbrefit
