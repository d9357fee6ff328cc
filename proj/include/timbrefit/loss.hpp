#pragma once

#include "timbrefit/dsp.hpp"
#include "timbrefit/synth.hpp"

#include <array>
#include <span>
#include <vector>

namespace timbrefit {

inline constexpr std::array<std::size_t, 3> kLossFftSizes{1024, 2048, 8192};

struct LossWeights {
    double mel = 1.0;
    double centroid = 0.1;
    double mfcc = 0.05;
};

struct LossBreakdown {
    double mel = 0.0;
    double centroid = 0.0;
    double mfcc = 0.0;
    double composite = 0.0;
    LossWeights weights{};
    bool silent = false; // a silent operand was involved
};

/// Everything the loss needs from one signal. Computed once per target and
/// reused across every candidate compared against it.
struct SignalFeatures {
    std::size_t length = 0;
    double sample_rate = kDefaultSampleRate;
    std::array<Matrix, 3> mel;      // A-weighted mel magnitudes per resolution
    std::array<Matrix, 3> log_mel;  // log(max(mel, floor))
    std::array<double, 3> mel_norm{};
    double centroid = 0.0;
    bool centroid_silent = false;
    std::vector<double> mfcc_mean;  // time-averaged coefficients
};

SignalFeatures analyze(const AudioBuffer& buf);

/// Reference-side features plus the raw buffer, for candidates whose length
/// differs from the target's.
class TargetFeatures {
public:
    explicit TargetFeatures(AudioBuffer target);

    const AudioBuffer& buffer() const { return buffer_; }
    const SignalFeatures& features() const { return features_; }

private:
    AudioBuffer buffer_;
    SignalFeatures features_;
};

/// Spectral convergence plus log-magnitude L1 on A-weighted mel spectrograms,
/// averaged over the three resolutions. The first argument is the target.
double mel_multires_loss(const AudioBuffer& target, const AudioBuffer& candidate, bool* silent = nullptr);
/// |mean centroid difference| / Nyquist.
double centroid_loss(const AudioBuffer& x, const AudioBuffer& y, bool* silent = nullptr);
/// MSE between time-averaged 13-coefficient MFCC vectors.
double mfcc_loss(const AudioBuffer& x, const AudioBuffer& y);

LossBreakdown composite_loss(const AudioBuffer& target, const AudioBuffer& candidate);
LossBreakdown composite_loss(const TargetFeatures& target, const AudioBuffer& candidate);

/// Entry b is the mean over pitches k of composite(target k, render (b, k)).
std::vector<double> composite_loss_batch(const RenderGrid& renders, std::span<const TargetFeatures> targets);

} // namespace timbrefit
