#include "timbrefit/optimizer.hpp"

#include "timbrefit/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace timbrefit {
namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t x = seed + 0x9E3779B97F4A7C15ull * (index + 1);
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

void clamp_unit(ParamVector& v) {
    for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
}

std::size_t slot_of(Tier tier, ParamId id) {
    auto list = tier_params(tier);
    for (std::size_t i = 0; i < list.size(); ++i) {
        if (list[i].id == id) return i;
    }
    throw InputError("parameter missing from tier");
}

} // namespace

std::string ConvergenceTrace::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "evaluations,best_loss,wall_ms\n";
    for (const auto& s : samples) os << s.evaluations << ',' << s.best_loss << ',' << s.wall_ms << '\n';
    return os.str();
}

double ConvergenceTrace::loss_at(std::size_t evaluations) const {
    double loss = samples.empty() ? 0.0 : samples.front().best_loss;
    for (const auto& s : samples) {
        if (s.evaluations > evaluations) break;
        loss = s.best_loss;
    }
    return loss;
}

MatchObjective::MatchObjective(std::span<const NoteSegment> targets, Tier tier, std::uint64_t render_seed)
    : tier_(tier), seed_(render_seed) {
    if (targets.empty()) throw InputError("optimization needs at least one target note");
    sample_rate_ = targets.front().samples.sample_rate;
    for (const auto& t : targets) {
        if (!(t.f0 > 0.0)) throw InputError("every target note needs a voiced f0");
        if (t.samples.sample_rate != sample_rate_) throw InputError("target notes must share a sample rate");
        pitches_.push_back(t.f0);
        durations_.push_back(t.samples.duration());
        targets_.emplace_back(t.samples);
    }
}

std::vector<double> MatchObjective::operator()(std::span<const ParamVector> population) const {
    const auto grid = render_batch(population, tier_, pitches_, durations_, sample_rate_, seed_);
    return composite_loss_batch(grid, targets_);
}

double MatchObjective::evaluate(const ParamVector& v) const { return (*this)(std::span<const ParamVector>(&v, 1))[0]; }

std::vector<double> MatchObjective::per_pitch(const ParamVector& v) const {
    const auto grid = render_batch(std::span<const ParamVector>(&v, 1), tier_, pitches_, durations_, sample_rate_, seed_);
    std::vector<double> out;
    for (std::size_t k = 0; k < pitches_.size(); ++k) out.push_back(composite_loss(targets_[k], grid.at(0, k)).composite);
    return out;
}

OptimizeResult minimize(const BatchObjective& objective, ParamVector start, const CmaConfig& config,
                        const ProgressSink& sink) {
    if (config.budget < config.lambda) {
        throw InputError("budget " + std::to_string(config.budget) + " is smaller than one generation (lambda = " +
                         std::to_string(config.lambda) + ")");
    }
    clamp_unit(start);
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed_ms = [&] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    };

    OptimizeResult r;
    r.start = start;
    r.start_loss = objective(std::span<const ParamVector>(&start, 1))[0];
    if (std::isnan(r.start_loss)) r.start_loss = std::numeric_limits<double>::infinity();
    r.best = start;
    r.best_loss = r.start_loss;
    r.trace.samples.push_back({0, r.best_loss, elapsed_ms()});

    CmaEs es(std::move(start), config);
    while (r.evaluations + config.lambda <= config.budget) {
        auto population = es.ask();
        const auto losses = objective(population);
        es.tell(population, losses);
        r.evaluations += config.lambda;
        if (es.best_loss() < r.best_loss) {
            r.best_loss = es.best_loss();
            r.best = es.best();
        }
        const TraceSample sample{r.evaluations, r.best_loss, elapsed_ms()};
        r.trace.samples.push_back(sample);
        if (sink) sink(es.generation(), sample);
    }
    return r;
}

SpectralInit spectral_init(const FeatureSummary& features, Tier tier) {
    SpectralInit init{ParamVector(dimension(tier), 0.5), false};
    if (!features.voiced) {
        init.fallback = true;
        return init;
    }
    auto& v = init.vector;
    const auto& cutoff = param_spec(ParamId::Cutoff, tier);
    v[slot_of(tier, ParamId::Cutoff)] =
        to_normalized(cutoff, std::clamp(features.rolloff_95, cutoff.physical_min, cutoff.physical_max));

    // Soft blend between pulse-leaning and saw-leaning mixes around the
    // threshold.
    const double lean = 1.0 / (1.0 + std::exp(-(features.even_odd_ratio - kSawThreshold) / 0.05));
    v[slot_of(tier, ParamId::OscMixSaw)] = 0.2 + 0.6 * lean;
    v[slot_of(tier, ParamId::OscMixPulse)] = 0.2 + 0.6 * (1.0 - lean);
    v[slot_of(tier, ParamId::OscMixSine)] = 0.25;
    v[slot_of(tier, ParamId::OscMixNoise)] = std::clamp(features.flatness * 2.0, 0.0, 1.0);
    v[slot_of(tier, ParamId::OutputGain)] = std::clamp(features.rms * 1.5, 0.0, 1.0);
    return init;
}

SpectralInit spectral_init(std::span<const NoteSegment> targets, Tier tier) {
    if (targets.empty()) throw InputError("spectral init needs at least one target");
    const auto loudest = std::max_element(targets.begin(), targets.end(), [](const auto& a, const auto& b) {
        return rms(a.samples.samples) < rms(b.samples.samples);
    });
    return spectral_init(summarize(loudest->samples, loudest->f0 > 0.0 ? loudest->f0 : 0.0), tier);
}

MatchResult optimize(std::span<const NoteSegment> targets, const CmaConfig& config, Tier tier,
                     const ProgressSink& sink, std::optional<ParamVector> start) {
    MatchObjective objective(targets, tier);
    MatchResult m;
    m.tier = tier;
    if (!start) {
        auto init = spectral_init(targets, tier);
        m.init_fallback = init.fallback;
        start = std::move(init.vector);
    }
    if (start->size() != dimension(tier)) throw InputError("start vector does not match the tier dimension");
    m.run = minimize([&](std::span<const ParamVector> pop) { return objective(pop); }, *start, config, sink);
    m.patch = denormalize(m.run.best, tier);
    m.per_pitch_losses = objective.per_pitch(m.run.best);
    return m;
}

MultiStartResult multi_start(std::span<const NoteSegment> targets, const CmaConfig& config, Tier tier, std::size_t n) {
    if (n == 0) throw InputError("multi_start needs at least one run");
    const auto base = spectral_init(targets, tier);
    MultiStartResult out;
    for (std::size_t i = 0; i < n; ++i) {
        CmaConfig run_cfg = config;
        run_cfg.budget = config.budget / n;
        ParamVector start = base.vector;
        if (n > 1) {
            run_cfg.seed = derive_seed(config.seed, i);
            std::mt19937_64 rng(derive_seed(config.seed, 1000 + i));
            std::normal_distribution<double> jitter(0.0, 0.1);
            for (auto& x : start) x = std::clamp(x + jitter(rng), 0.0, 1.0);
        }
        auto r = optimize(targets, run_cfg, tier, {}, start);
        r.init_fallback = base.fallback;
        out.runs.push_back(std::move(r));
    }
    const auto best = std::min_element(out.runs.begin(), out.runs.end(),
                                       [](const auto& a, const auto& b) { return a.run.best_loss < b.run.best_loss; });
    out.best = *best;
    return out;
}

ParamVector spsa_gradient(const ScalarObjective& f, const ParamVector& x, double c, std::mt19937_64& rng) {
    ParamVector delta(x.size()), plus = x, minus = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        delta[i] = (rng() & 1u) ? 1.0 : -1.0;
        plus[i] = std::clamp(x[i] + c * delta[i], 0.0, 1.0);
        minus[i] = std::clamp(x[i] - c * delta[i], 0.0, 1.0);
    }
    const double diff = f(plus) - f(minus);
    ParamVector g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = diff / (2.0 * c * delta[i]);
    return g;
}

SpsaResult spsa_finetune(const ScalarObjective& f, ParamVector x, const SpsaConfig& config) {
    clamp_unit(x);
    SpsaResult r;
    r.input_loss = f(x);
    std::mt19937_64 rng(config.seed);
    ParamVector iterate = x;
    for (std::size_t k = 0; k < config.iterations; ++k) {
        const double kk = static_cast<double>(k + 1);
        const double a_k = config.a / std::pow(kk, 0.602);
        const double c_k = config.c / std::pow(kk, 0.101);
        const auto g = spsa_gradient(f, iterate, c_k, rng);
        for (std::size_t i = 0; i < iterate.size(); ++i) {
            const double step = std::isfinite(g[i]) ? a_k * g[i] : 0.0;
            iterate[i] = std::clamp(iterate[i] - step, 0.0, 1.0);
        }
    }
    const double final_loss = f(iterate);
    if (final_loss < r.input_loss) {
        r.x = std::move(iterate);
        r.loss = final_loss;
        r.improved = true;
    } else {
        r.x = std::move(x);
        r.loss = r.input_loss;
    }
    return r;
}

} // namespace timbrefit
