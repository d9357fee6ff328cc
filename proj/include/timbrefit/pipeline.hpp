#pragma once

#include "timbrefit/dsp.hpp"
#include "timbrefit/optimizer.hpp"
#include "timbrefit/params.hpp"
#include "timbrefit/synth.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace timbrefit {

struct SegmentConfig {
    OnsetConfig onsets{};
    double min_duration = 0.05; // s
    double fmin = 40.0;
    double fmax = 4000.0;
};

/// Onset-delimited notes, pitch-tracked; unvoiced and too-short regions are
/// dropped. Throws OptimizationAborted when nothing voiced remains.
std::vector<NoteSegment> segment(const AudioBuffer& audio, const SegmentConfig& config = {});

inline constexpr double kPitchClusterCents = 50.0;

/// Groups segments whose pitch lies within 50 cents of a cluster's first
/// member, keeps the k most populated clusters (ties: lower pitch first) and
/// returns the loudest segment of each, ordered by pitch.
std::vector<NoteSegment> select_pitches(const std::vector<NoteSegment>& segments, std::size_t k = 3);

struct HarmonicComparison {
    double f0 = 0.0;
    std::vector<double> original;
    std::vector<double> matched;
};

struct MatchReport {
    Patch patch;
    Tier tier = Tier::T28;
    ConvergenceTrace trace;
    std::vector<double> per_pitch_losses;
    FeatureSummary feature_summary;
    std::vector<HarmonicComparison> harmonic_comparison;
    double init_loss = 0.0;
    double final_loss = 0.0;
    std::size_t evaluations = 0;
    std::size_t budget = 0;
    std::uint64_t seed = 0;
    std::size_t segments_found = 0;
    bool init_fallback = false;
    bool detune_at_bound = false;
};

inline constexpr int kReportSchemaVersion = 1;

/// Versioned JSON, without wall-clock fields, so identical runs produce
/// identical bytes.
std::string report_to_json(const MatchReport& report);

/// True when the normalized detune sits within `tolerance` of either bound.
bool detune_at_bound(const ParamVector& normalized, Tier tier, double tolerance = 1e-3);

struct MatchOptions {
    Tier tier = Tier::T28;
    CmaConfig cma{.budget = kFastBudget};
    std::size_t pitches = 3;
    SegmentConfig segmentation{};
};

struct MatchOutcome {
    MatchReport report;
    std::vector<NoteSegment> targets;
    /// The representative segments followed by the matched renders at the
    /// same pitches and lengths.
    AudioBuffer comparison;
};

/// Fits a patch to already extracted target notes.
MatchOutcome match_targets(std::vector<NoteSegment> targets, const MatchOptions& options,
                           const ProgressSink& sink = {}, std::size_t segments_found = 0);

/// Full pipeline on a decoded recording.
MatchOutcome match_audio(const AudioBuffer& audio, const MatchOptions& options, const ProgressSink& sink = {});

/// Reads a WAV file and runs match_audio.
MatchOutcome match(const std::filesystem::path& audio_path, const MatchOptions& options,
                   const ProgressSink& sink = {});

/// Writes patch.preset, trace.csv, report.json and comparison.wav into `dir`.
void write_outputs(const MatchOutcome& outcome, const std::filesystem::path& dir);

struct AblationRow {
    Tier tier;
    std::size_t dimension;
    std::vector<double> losses; // one per seed
    double median_loss;
    bool detune_at_bound; // any seed ended with detune at a bound
};

/// Equal-budget runs per tier with the same seeds; rows sorted by dimension.
std::vector<AblationRow> ablate(const std::vector<NoteSegment>& targets, std::vector<Tier> tiers, std::size_t budget,
                                const std::vector<std::uint64_t>& seeds = {1});
std::string format_ablation(const std::vector<AblationRow>& rows);

inline constexpr double kReferenceEvalsPerSecond = 553.0;

struct BenchConfig {
    std::size_t batch = 40;
    std::size_t pitches = 3;
    double duration = 0.15;
    double min_seconds = 10.0;
    Tier tier = Tier::T28;
    std::uint64_t seed = 3;
};

struct BenchResult {
    std::size_t serial_generations = 0;
    std::size_t serial_evaluations = 0;
    double serial_seconds = 0.0;
    std::size_t batched_generations = 0;
    std::size_t batched_evaluations = 0;
    double batched_seconds = 0.0;
    std::size_t threads = 1;

    double serial_rate() const { return serial_evaluations / serial_seconds; }
    double batched_rate() const { return batched_evaluations / batched_seconds; }
    double speedup() const { return batched_rate() / serial_rate(); }
};

/// Throughput of population evaluation: a per-candidate loop that renders
/// and analyses every note from scratch, against the batched objective
/// (shared target features, per-candidate pitch-independent state reused
/// across pitches, candidates spread over worker threads). Each mode runs
/// whole generations of `batch` candidates for at least `min_seconds`.
BenchResult bench(const BenchConfig& config = {});
std::string format_bench(const BenchResult& result, const BenchConfig& config);

/// Parses "220", "220hz", "57" (MIDI when a bare integer <= 127) or "57m".
double parse_pitch(const std::string& text);

} // namespace timbrefit
