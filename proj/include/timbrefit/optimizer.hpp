#pragma once

#include "timbrefit/dsp.hpp"
#include "timbrefit/loss.hpp"
#include "timbrefit/params.hpp"
#include "timbrefit/synth.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace timbrefit {

inline constexpr std::size_t kFullBudget = 100000;
inline constexpr std::size_t kFastBudget = 10000;

struct CmaConfig {
    std::size_t lambda = 40;
    double sigma0 = 0.15;
    std::size_t budget = kFullBudget;
    std::uint64_t seed = 1;
};

/// Maps the real line into [0, 1] by mirroring at both bounds. Identity on
/// [0, 1] and idempotent.
double reflect_unit(double x);

/// (mu/mu_w, lambda) CMA-ES with rank-one and rank-mu covariance updates,
/// cumulative step-size adaptation and reflection at the unit-box bounds.
class CmaEs {
public:
    CmaEs(ParamVector start, const CmaConfig& config);

    /// Draws lambda candidates, reflected into [0, 1]^D.
    std::vector<ParamVector> ask();
    /// `candidates` must be exactly the vectors of the preceding ask(). NaN
    /// losses rank worst.
    void tell(std::span<const ParamVector> candidates, std::span<const double> losses);

    std::size_t dimension() const { return n_; }
    std::size_t lambda() const { return lambda_; }
    std::size_t generation() const { return generation_; }
    std::size_t evaluations() const { return evaluations_; }
    const ParamVector& mean() const { return mean_; }
    double sigma() const { return sigma_; }
    const Eigen::MatrixXd& covariance() const { return C_; }
    double min_eigenvalue() const { return D_.minCoeff() * D_.minCoeff(); }
    const ParamVector& best() const { return best_; }
    double best_loss() const { return best_loss_; }

private:
    void decompose();

    std::size_t n_;
    std::size_t lambda_;
    std::size_t mu_;
    Eigen::VectorXd weights_;
    double mu_eff_, c_sigma_, d_sigma_, c_c_, c_1_, c_mu_, chi_n_;

    ParamVector mean_;
    double sigma_;
    Eigen::MatrixXd C_, B_;
    Eigen::VectorXd D_, p_sigma_, p_c_;
    std::size_t generation_ = 0;
    std::size_t evaluations_ = 0;
    ParamVector best_;
    double best_loss_;

    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::vector<ParamVector> pending_;
};

/// One extracted target note.
struct NoteSegment {
    AudioBuffer samples;
    std::size_t onset = 0;
    std::size_t offset = 0;
    double f0 = 0.0;
    double confidence = 0.0;
};

struct TraceSample {
    std::size_t evaluations;
    double best_loss;
    std::int64_t wall_ms;
};

struct ConvergenceTrace {
    std::vector<TraceSample> samples;

    /// `evaluations,best_loss,wall_ms` with a header row.
    std::string to_csv() const;
    /// Best loss at the last sample with at most `evaluations`.
    double loss_at(std::size_t evaluations) const;
};

/// Called once per generation.
using ProgressSink = std::function<void(std::size_t generation, const TraceSample& sample)>;

/// Multi-pitch objective: mean composite loss over the targets of renders at
/// each target's pitch and duration.
class MatchObjective {
public:
    MatchObjective(std::span<const NoteSegment> targets, Tier tier, std::uint64_t render_seed = 0);

    Tier tier() const { return tier_; }
    std::size_t pitches() const { return pitches_.size(); }

    std::vector<double> operator()(std::span<const ParamVector> population) const;
    double evaluate(const ParamVector& v) const;
    std::vector<double> per_pitch(const ParamVector& v) const;

private:
    Tier tier_;
    std::uint64_t seed_;
    double sample_rate_;
    std::vector<double> pitches_;
    std::vector<double> durations_;
    std::vector<TargetFeatures> targets_;
};

using BatchObjective = std::function<std::vector<double>(std::span<const ParamVector>)>;
using ScalarObjective = std::function<double(const ParamVector&)>;

struct OptimizeResult {
    ParamVector best;
    double best_loss = 0.0;
    ParamVector start;
    double start_loss = 0.0;
    ConvergenceTrace trace;
    std::size_t evaluations = 0;
};

/// Runs ask/evaluate/tell generations until the next one would exceed the
/// budget. The start point is evaluated once (trace sample at 0 evaluations)
/// and does not count toward the budget.
OptimizeResult minimize(const BatchObjective& objective, ParamVector start, const CmaConfig& config,
                        const ProgressSink& sink = {});

struct SpectralInit {
    ParamVector vector;
    bool fallback = false; // unvoiced target: every coordinate 0.5
};

/// Even/odd ratio above which the initial point leans toward sawtooth.
inline constexpr double kSawThreshold = 0.15;

SpectralInit spectral_init(const FeatureSummary& features, Tier tier);

/// Spectral init from the loudest target.
SpectralInit spectral_init(std::span<const NoteSegment> targets, Tier tier);

struct MatchResult {
    Tier tier = Tier::T28;
    Patch patch;
    OptimizeResult run;
    std::vector<double> per_pitch_losses;
    bool init_fallback = false;
};

MatchResult optimize(std::span<const NoteSegment> targets, const CmaConfig& config, Tier tier,
                     const ProgressSink& sink = {}, std::optional<ParamVector> start = std::nullopt);

struct MultiStartResult {
    MatchResult best;
    std::vector<MatchResult> runs;
};

/// n independent runs, each with budget / n evaluations, started from the
/// spectral init perturbed by N(0, 0.1^2) per coordinate (n == 1 starts
/// unperturbed and matches optimize()).
MultiStartResult multi_start(std::span<const NoteSegment> targets, const CmaConfig& config, Tier tier,
                             std::size_t n = 8);

struct SpsaConfig {
    std::size_t iterations = 50;
    double a = 0.005;
    double c = 0.02;
    std::uint64_t seed = 7;
};

struct SpsaResult {
    ParamVector x;
    double loss = 0.0;
    double input_loss = 0.0;
    bool improved = false;
};

/// One simultaneous-perturbation gradient estimate with Rademacher signs.
ParamVector spsa_gradient(const ScalarObjective& f, const ParamVector& x, double c, std::mt19937_64& rng);

/// Standard SPSA (a_k = a/(k+1)^0.602, c_k = c/(k+1)^0.101), clamped to the
/// unit box. Returns the better of the input and the final iterate.
SpsaResult spsa_finetune(const ScalarObjective& f, ParamVector x, const SpsaConfig& config = {});

} // namespace timbrefit
