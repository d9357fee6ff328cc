#include "timbrefit/pipeline.hpp"

#include "timbrefit/error.hpp"
#include "timbrefit/loss.hpp"
#include "timbrefit/parallel.hpp"
#include "timbrefit/wav.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace timbrefit {
namespace {

using json = nlohmann::json;

constexpr double kTailFloor = 1e-3;  // relative to the segment peak
constexpr double kMaxTargetSeconds = 10.0;

double cents_between(double a, double b) { return 1200.0 * std::abs(std::log2(a / b)); }

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InputError("cannot write " + tmp.string());
        out << text;
        if (!out) throw InputError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

} // namespace

std::vector<NoteSegment> segment(const AudioBuffer& audio, const SegmentConfig& config) {
    const std::size_t n = audio.size();
    if (n == 0) throw OptimizationAborted("input audio is empty");
    auto onsets = detect_onsets(audio, config.onsets);
    if (onsets.empty() || onsets.front() > 0) {
        // Audio that is already sounding at the first sample still starts a
        // note there.
        const std::size_t head = std::min(n, onsets.empty() ? n : onsets.front());
        double peak = 0.0;
        for (std::size_t i = 0; i < head; ++i) peak = std::max(peak, std::abs(audio.samples[i]));
        if (peak > kSilentFrameRms) onsets.insert(onsets.begin(), 0);
    }
    const auto min_len = static_cast<std::size_t>(std::llround(config.min_duration * audio.sample_rate));
    const auto max_len = static_cast<std::size_t>(std::llround(kMaxTargetSeconds * audio.sample_rate));

    std::vector<NoteSegment> out;
    for (std::size_t i = 0; i < onsets.size(); ++i) {
        const std::size_t begin = onsets[i];
        std::size_t end = i + 1 < onsets.size() ? onsets[i + 1] : n;
        if (end <= begin) continue;
        double peak = 0.0;
        for (std::size_t j = begin; j < end; ++j) peak = std::max(peak, std::abs(audio.samples[j]));
        if (peak <= kSilentFrameRms) continue;
        while (end > begin && std::abs(audio.samples[end - 1]) < kTailFloor * peak) --end;
        end = std::min(end, begin + max_len);
        if (end - begin < min_len) continue;

        NoteSegment seg;
        seg.onset = begin;
        seg.offset = end;
        seg.samples.sample_rate = audio.sample_rate;
        seg.samples.samples.assign(audio.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                   audio.samples.begin() + static_cast<std::ptrdiff_t>(end));
        const auto pitch = detect_pitch(seg.samples, config.fmin, config.fmax);
        if (!pitch.voiced || !(pitch.f0 > 20.0 && pitch.f0 < audio.sample_rate / 4.0)) continue;
        seg.f0 = pitch.f0;
        seg.confidence = pitch.confidence;
        out.push_back(std::move(seg));
    }
    if (out.empty()) {
        throw OptimizationAborted("no voiced notes found (" + std::to_string(onsets.size()) +
                                  " onset regions examined); the input is silent, unpitched or too short");
    }
    return out;
}

std::vector<NoteSegment> select_pitches(const std::vector<NoteSegment>& segments, std::size_t k) {
    if (segments.empty() || k == 0) return {};
    std::vector<std::size_t> order(segments.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return segments[a].f0 < segments[b].f0; });

    std::vector<std::vector<std::size_t>> clusters;
    for (auto i : order) {
        if (clusters.empty() || cents_between(segments[i].f0, segments[clusters.back().front()].f0) > kPitchClusterCents) {
            clusters.emplace_back();
        }
        clusters.back().push_back(i);
    }
    std::stable_sort(clusters.begin(), clusters.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
    clusters.resize(std::min(k, clusters.size()));

    std::vector<NoteSegment> picked;
    for (const auto& c : clusters) {
        const auto loudest = *std::max_element(c.begin(), c.end(), [&](auto a, auto b) {
            return rms(segments[a].samples.samples) < rms(segments[b].samples.samples);
        });
        picked.push_back(segments[loudest]);
    }
    std::sort(picked.begin(), picked.end(), [](const auto& a, const auto& b) { return a.f0 < b.f0; });
    return picked;
}

bool detune_at_bound(const ParamVector& normalized, Tier tier, double tolerance) {
    const auto list = tier_params(tier);
    for (std::size_t i = 0; i < list.size() && i < normalized.size(); ++i) {
        if (list[i].id == ParamId::Detune) return normalized[i] <= tolerance || normalized[i] >= 1.0 - tolerance;
    }
    return false;
}

std::string report_to_json(const MatchReport& r) {
    json j;
    j["schema_version"] = kReportSchemaVersion;
    j["tier"] = tier_label(r.tier);
    json params = json::object();
    const auto list = tier_params(r.tier);
    for (std::size_t i = 0; i < list.size(); ++i) params[std::string(list[i].name)] = r.patch.values()[i];
    j["patch"] = params;
    j["init_loss"] = r.init_loss;
    j["final_loss"] = r.final_loss;
    j["evaluations"] = r.evaluations;
    j["budget"] = r.budget;
    j["seed"] = r.seed;
    j["segments_found"] = r.segments_found;
    j["init_fallback"] = r.init_fallback;
    j["detune_at_bound"] = r.detune_at_bound;
    j["per_pitch_losses"] = r.per_pitch_losses;
    json trace = json::array();
    for (const auto& s : r.trace.samples) trace.push_back({{"evaluations", s.evaluations}, {"best_loss", s.best_loss}});
    j["trace"] = trace;
    const auto& f = r.feature_summary;
    j["feature_summary"] = {{"f0", f.f0},
                            {"voiced", f.voiced},
                            {"rms", f.rms},
                            {"rolloff_95", f.rolloff_95},
                            {"flatness", f.flatness},
                            {"even_odd_ratio", f.even_odd_ratio},
                            {"centroid_mean", f.centroid_mean},
                            {"harmonic_amps", f.harmonic_amps}};
    json harmonics = json::array();
    for (const auto& h : r.harmonic_comparison) {
        harmonics.push_back({{"f0", h.f0}, {"original", h.original}, {"matched", h.matched}});
    }
    j["harmonic_comparison"] = harmonics;
    return j.dump(2) + "\n";
}

MatchOutcome match_targets(std::vector<NoteSegment> targets, const MatchOptions& options, const ProgressSink& sink,
                           std::size_t segments_found) {
    if (targets.empty()) throw OptimizationAborted("no target notes to match");
    for (auto& t : targets) {
        if (t.samples.size() == 0) throw InputError("empty target note");
    }
    MatchOutcome out;
    const auto result = optimize(targets, options.cma, options.tier, sink);
    if (!std::isfinite(result.run.best_loss)) {
        throw OptimizationAborted("optimization produced no finite loss");
    }
    auto& r = out.report;
    r.patch = result.patch;
    r.tier = options.tier;
    r.trace = result.run.trace;
    r.per_pitch_losses = result.per_pitch_losses;
    r.init_loss = result.run.start_loss;
    r.final_loss = result.run.best_loss;
    r.evaluations = result.run.evaluations;
    r.budget = options.cma.budget;
    r.seed = options.cma.seed;
    r.segments_found = segments_found ? segments_found : targets.size();
    r.init_fallback = result.init_fallback;
    r.detune_at_bound = detune_at_bound(result.run.best, options.tier);

    const auto loudest = std::max_element(targets.begin(), targets.end(), [](const auto& a, const auto& b) {
        return rms(a.samples.samples) < rms(b.samples.samples);
    });
    r.feature_summary = summarize(loudest->samples, loudest->f0);

    const double sr = targets.front().samples.sample_rate;
    out.comparison.sample_rate = sr;
    std::vector<AudioBuffer> renders;
    for (const auto& t : targets) {
        renders.push_back(render({r.patch, t.f0, t.samples.duration(), sr}));
        r.harmonic_comparison.push_back(
            {t.f0, harmonic_amplitudes(t.samples, t.f0), harmonic_amplitudes(renders.back(), t.f0)});
        auto& c = out.comparison.samples;
        c.insert(c.end(), t.samples.samples.begin(), t.samples.samples.end());
    }
    for (const auto& b : renders) {
        out.comparison.samples.insert(out.comparison.samples.end(), b.samples.begin(), b.samples.end());
    }
    out.targets = std::move(targets);
    return out;
}

MatchOutcome match_audio(const AudioBuffer& audio, const MatchOptions& options, const ProgressSink& sink) {
    const auto segments = segment(audio, options.segmentation);
    return match_targets(select_pitches(segments, options.pitches), options, sink, segments.size());
}

MatchOutcome match(const std::filesystem::path& audio_path, const MatchOptions& options, const ProgressSink& sink) {
    return match_audio(read_wav(audio_path), options, sink);
}

void write_outputs(const MatchOutcome& outcome, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto& r = outcome.report;
    std::ostringstream loss;
    loss.precision(17);
    loss << r.final_loss;
    save_preset(r.patch, dir / "patch.preset",
                {{"final_loss", loss.str()},
                 {"budget", std::to_string(r.budget)},
                 {"seed", std::to_string(r.seed)},
                 {"pitches", std::to_string(outcome.targets.size())}});
    write_text_atomic(dir / "trace.csv", r.trace.to_csv());
    write_text_atomic(dir / "report.json", report_to_json(r));
    write_wav(dir / "comparison.wav", outcome.comparison, WavFormat::Float32);
}

std::vector<AblationRow> ablate(const std::vector<NoteSegment>& targets, std::vector<Tier> tiers, std::size_t budget,
                                const std::vector<std::uint64_t>& seeds) {
    if (tiers.empty()) throw InputError("ablation needs at least one tier");
    if (seeds.empty()) throw InputError("ablation needs at least one seed");
    std::sort(tiers.begin(), tiers.end(), [](Tier a, Tier b) { return dimension(a) < dimension(b); });
    tiers.erase(std::unique(tiers.begin(), tiers.end()), tiers.end());
    std::vector<AblationRow> rows;
    for (Tier t : tiers) {
        AblationRow row{t, dimension(t), {}, 0.0, false};
        for (auto seed : seeds) {
            const auto res = optimize(targets, CmaConfig{.budget = budget, .seed = seed}, t);
            row.losses.push_back(res.run.best_loss);
            row.detune_at_bound = row.detune_at_bound || detune_at_bound(res.run.best, t);
        }
        row.median_loss = median(row.losses);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "tier  dim  median_loss  seeds  detune_at_bound\n";
    char line[128];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-4s  %3zu  %11.5f  %5zu  %s\n", std::string(tier_label(r.tier)).c_str(),
                      r.dimension, r.median_loss, r.losses.size(), r.detune_at_bound ? "yes" : "no");
        os << line;
    }
    return os.str();
}

BenchResult bench(const BenchConfig& config) {
    if (config.batch < 4) throw InputError("bench batch must be at least 4");
    if (config.pitches == 0) throw InputError("bench needs at least one pitch");
    static constexpr double kPitches[] = {221.0, 278.0, 295.0};
    std::vector<NoteSegment> targets;
    for (std::size_t k = 0; k < config.pitches; ++k) {
        const double f0 = kPitches[k % 3] * std::exp2(static_cast<double>(k / 3));
        targets.push_back({render({Patch::defaults(config.tier), f0, config.duration}), 0, 0, f0, 1.0});
    }
    const std::size_t dim = dimension(config.tier);
    const CmaConfig cma{.lambda = config.batch, .sigma0 = 0.15, .budget = kFullBudget, .seed = config.seed};
    using clock = std::chrono::steady_clock;
    BenchResult res;
    res.threads = num_threads();

    // Serial: every candidate rendered note by note and compared against the
    // raw target buffer, so target analysis is redone per comparison.
    {
        CmaEs es(ParamVector(dim, 0.5), cma);
        const auto t0 = clock::now();
        do {
            const auto pop = es.ask();
            std::vector<double> losses;
            for (const auto& v : pop) {
                const Patch p = denormalize(v, config.tier);
                double acc = 0.0;
                for (const auto& t : targets) {
                    acc += composite_loss(t.samples, render({p, t.f0, config.duration})).composite;
                }
                losses.push_back(acc / static_cast<double>(targets.size()));
            }
            es.tell(pop, losses);
            ++res.serial_generations;
            res.serial_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        } while (res.serial_seconds < config.min_seconds);
        res.serial_evaluations = res.serial_generations * config.batch;
    }
    {
        MatchObjective objective(targets, config.tier);
        CmaEs es(ParamVector(dim, 0.5), cma);
        const auto t0 = clock::now();
        do {
            const auto pop = es.ask();
            es.tell(pop, objective(pop));
            ++res.batched_generations;
            res.batched_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        } while (res.batched_seconds < config.min_seconds);
        res.batched_evaluations = res.batched_generations * config.batch;
    }
    return res;
}

std::string format_bench(const BenchResult& r, const BenchConfig& c) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "population %zu, %zu pitches, %.0f ms notes, %s, %zu worker thread(s)\n", c.batch,
                  c.pitches, c.duration * 1000.0, std::string(tier_label(c.tier)).c_str(), r.threads);
    os << line;
    std::snprintf(line, sizeof line, "serial : %zu generations, %zu evaluations in %.2f s -> %.1f evals/s\n",
                  r.serial_generations, r.serial_evaluations, r.serial_seconds, r.serial_rate());
    os << line;
    std::snprintf(line, sizeof line, "batched: %zu generations, %zu evaluations in %.2f s -> %.1f evals/s\n",
                  r.batched_generations, r.batched_evaluations, r.batched_seconds, r.batched_rate());
    os << line;
    std::snprintf(line, sizeof line, "speedup: %.2fx\n", r.speedup());
    os << line;
    std::snprintf(line, sizeof line, "reference: %.0f evals/s (published figure, different hardware; not asserted)\n",
                  kReferenceEvalsPerSecond);
    os << line;
    return os.str();
}

double parse_pitch(const std::string& text) {
    std::string s;
    for (char ch : text) s += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    bool midi = false, hz = false;
    if (s.size() > 2 && s.ends_with("hz")) {
        s.resize(s.size() - 2);
        hz = true;
    } else if (!s.empty() && s.back() == 'm') {
        s.pop_back();
        midi = true;
    }
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
        throw InputError("cannot parse pitch '" + text + "' (expected Hz, e.g. 220 or 220hz, or MIDI, e.g. 57 or 57m)");
    }
    if (!hz && !midi && v == std::floor(v) && v >= 0.0 && v <= 127.0) midi = true;
    return midi ? midi_to_hz(v) : v;
}

} // namespace timbrefit
