#include "timbrefit/error.hpp"
#include "timbrefit/parallel.hpp"
#include "timbrefit/pipeline.hpp"
#include "timbrefit/wav.hpp"

#ifdef TIMBREFIT_WITH_SERVICE
#include "timbrefit/service.hpp"
#endif

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace timbrefit;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitAborted = 3;

std::vector<Tier> parse_tiers(const std::string& list) {
    std::vector<Tier> tiers;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) tiers.push_back(parse_tier(item));
    }
    if (tiers.empty()) throw InputError("no tiers given");
    return tiers;
}

ProgressSink console_progress(std::size_t budget, bool quiet) {
    if (quiet) return {};
    return [budget](std::size_t generation, const TraceSample& s) {
        if (generation % 25 != 0 && s.evaluations + CmaConfig{}.lambda <= budget) return;
        std::fprintf(stderr, "  %7zu / %zu evals  best %.6g  %.1f s\n", s.evaluations, budget, s.best_loss,
                     static_cast<double>(s.wall_ms) / 1000.0);
    };
}

/// Target of the bundled demonstration preset: a bright, slightly detuned
/// two-oscillator lead with a presence bump.
Patch demo_patch() {
    auto p = Patch::defaults(Tier::T28);
    p.set(ParamId::OscMixSaw, 0.75);
    p.set(ParamId::OscMixPulse, 0.35);
    p.set(ParamId::OscMixSine, 0.2);
    p.set(ParamId::OscMixNoise, 0.02);
    p.set(ParamId::Detune, 0.08);
    p.set(ParamId::Cutoff, 2400.0);
    p.set(ParamId::Resonance, 0.25);
    p.set(ParamId::AmpAttack, 0.01);
    p.set(ParamId::AmpDecay, 0.15);
    p.set(ParamId::AmpSustain, 0.7);
    p.set(ParamId::AmpRelease, 0.08);
    p.set(ParamId::Eq2Freq, 3500.0);
    p.set(ParamId::Eq2Gain, 3.0);
    p.set(ParamId::UnisonVoices, 2.0);
    p.set(ParamId::UnisonSpread, 0.1);
    p.set(ParamId::OutputGain, 0.6);
    return p;
}

int cmd_match(const std::string& input, const std::string& tier, std::size_t budget, bool full, std::uint64_t seed,
              std::size_t pitches, const std::string& out, bool quiet) {
    MatchOptions opts;
    opts.tier = parse_tier(tier);
    opts.cma.budget = full ? kFullBudget : budget;
    opts.cma.seed = seed;
    opts.pitches = pitches;
    const auto outcome = match(input, opts, console_progress(opts.cma.budget, quiet));
    write_outputs(outcome, out);
    const auto& r = outcome.report;
    std::printf("tier %s  segments %zu  pitches %zu  evals %zu\n", std::string(tier_label(r.tier)).c_str(),
                r.segments_found, outcome.targets.size(), r.evaluations);
    std::printf("loss: init %.6g -> final %.6g\n", r.init_loss, r.final_loss);
    if (r.detune_at_bound) std::printf("warning: detune ended at a range bound\n");
    std::printf("wrote %s/{patch.preset,trace.csv,report.json,comparison.wav}\n", out.c_str());
    return 0;
}

int cmd_render(const std::string& preset, const std::string& pitch, double dur, const std::string& out,
               bool float_out) {
    const auto patch = load_preset(preset);
    const auto audio = render({patch, parse_pitch(pitch), dur});
    write_wav(out, audio, float_out ? WavFormat::Float32 : WavFormat::Pcm16);
    std::printf("rendered %.3f s at %.2f Hz to %s\n", dur, parse_pitch(pitch), out.c_str());
    return 0;
}

int cmd_ablate(const std::string& input, const std::string& tiers, std::size_t budget, std::size_t seeds,
               std::size_t pitches) {
    if (seeds == 0) throw InputError("--seeds must be at least 1");
    const auto targets = select_pitches(segment(read_wav(input)), pitches);
    std::vector<std::uint64_t> seed_list;
    for (std::size_t s = 1; s <= seeds; ++s) seed_list.push_back(s);
    std::cout << format_ablation(ablate(targets, parse_tiers(tiers), budget, seed_list));
    return 0;
}

int cmd_bench(double min_seconds, std::size_t batch) {
    BenchConfig cfg;
    cfg.min_seconds = min_seconds;
    cfg.batch = batch;
    std::cout << format_bench(bench(cfg), cfg);
    return 0;
}

int cmd_bundle(const std::string& out, std::size_t budget, std::uint64_t seed) {
    const auto patch = demo_patch();
    std::vector<NoteSegment> targets;
    for (double f0 : {221.0, 278.0, 295.0}) {
        auto audio = render({patch, f0, 0.4});
        const auto n = audio.size();
        targets.push_back({std::move(audio), 0, n, f0, 1.0});
    }
    MatchOptions opts;
    opts.tier = Tier::T28;
    opts.cma.budget = budget;
    opts.cma.seed = seed;
    const auto outcome = match_targets(targets, opts, console_progress(budget, false));
    const auto& r = outcome.report;
    auto fmt = [](double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    };
    if (!out.empty() && fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    save_preset(r.patch, out,
                {{"round_trip_loss", fmt(r.final_loss)},
                 {"init_loss", fmt(r.init_loss)},
                 {"budget", std::to_string(budget)},
                 {"seed", std::to_string(seed)},
                 {"source", "round-trip of the built-in demo patch at 221/278/295 Hz"}});
    std::printf("round-trip loss %.6g (init %.6g); wrote %s\n", r.final_loss, r.init_loss, out.c_str());
    return 0;
}

#ifdef TIMBREFIT_WITH_SERVICE
int cmd_serve(const std::string& host, unsigned short port, const std::string& data_dir, const std::string& preset) {
    // Leave one core to the request handlers.
    const auto hw = std::max(2u, std::thread::hardware_concurrency());
    set_num_threads(hw - 1);

    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    service::JobManager jobs({.data_dir = data_dir});
    service::ServerConfig cfg{host, port, std::nullopt};
    if (!preset.empty()) cfg.best_preset = preset;
    service::Server server(jobs, cfg);
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        server.stop();
    });
    std::printf("listening on http://%s:%u\n", host.c_str(), server.port());
    std::fflush(stdout);
    server.run();
    if (waiter.joinable()) {
        pthread_kill(waiter.native_handle(), SIGTERM);
        waiter.join();
    }
    jobs.shutdown();
    return 0;
}
#endif

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Recover synthesizer patches from recorded notes"};
    app.require_subcommand(1);
    std::size_t threads = 0;
    app.add_option("--threads", threads, "Worker threads for candidate evaluation (default: all cores)");

    std::string input, tier = "t28", out = "timbrefit-out", tiers = "t15,t18,t24,t28";
    std::size_t budget = kFastBudget, pitches = 3, seeds = 1, batch = 40;
    std::uint64_t seed = 1;
    bool full = false, quiet = false, float_out = false;

    auto* m = app.add_subcommand("match", "Fit a patch to the notes of a WAV recording");
    m->add_option("input", input, "Input WAV")->required()->check(CLI::ExistingFile);
    m->add_option("--tier", tier, "Parameter tier (t15, t18, t24, t28, t29)");
    m->add_option("--budget", budget, "Evaluation budget");
    m->add_flag("--full", full, "Use the full 100000-evaluation budget");
    m->add_option("--seed", seed, "Optimizer seed");
    m->add_option("--pitches", pitches, "Representative pitches to fit");
    m->add_option("--out", out, "Output directory");
    m->add_flag("-q,--quiet", quiet, "No progress lines");

    std::string preset, pitch;
    double dur = 1.0;
    auto* r = app.add_subcommand("render", "Render one note from a preset");
    r->add_option("preset", preset, "Preset file")->required()->check(CLI::ExistingFile);
    r->add_option("--pitch", pitch, "Pitch: Hz (220, 220hz) or MIDI (57, 57m)")->required();
    r->add_option("--dur", dur, "Duration in seconds");
    r->add_option("--out", out, "Output WAV")->required();
    r->add_flag("--float", float_out, "Write 32-bit float instead of 16-bit PCM");

    auto* a = app.add_subcommand("ablate", "Compare final losses across tiers at equal budget");
    a->add_option("input", input, "Input WAV")->required()->check(CLI::ExistingFile);
    a->add_option("--tiers", tiers, "Comma-separated tiers");
    a->add_option("--budget", budget, "Evaluation budget per run");
    a->add_option("--seeds", seeds, "Number of seeds per tier (1..N)");
    a->add_option("--pitches", pitches, "Representative pitches to fit");

    double min_seconds = 10.0;
    auto* b = app.add_subcommand("bench", "Serial vs batched evaluation throughput");
    b->add_option("--min-seconds", min_seconds, "Minimum measured time per mode");
    b->add_option("--batch", batch, "Population size");

    std::string bundle_out = "presets/best.preset";
    auto* bp = app.add_subcommand("bundle-preset", "Produce the bundled demonstration preset by a round-trip run");
    bp->add_option("--out", bundle_out, "Preset path");
    bp->add_option("--budget", budget, "Evaluation budget");
    bp->add_option("--seed", seed, "Optimizer seed");

#ifdef TIMBREFIT_WITH_SERVICE
    std::string host = "127.0.0.1", data_dir = "timbrefit-jobs";
    std::string best_preset = TIMBREFIT_DEFAULT_PRESET;
    unsigned short port = 8080;
    auto* s = app.add_subcommand("serve", "Run the HTTP/WebSocket job service");
    s->add_option("--host", host, "Bind address");
    s->add_option("--port", port, "Port (0 picks a free one)");
    s->add_option("--data-dir", data_dir, "Directory for job results");
    s->add_option("--preset", best_preset, "Bundled preset served at /api/presets/best");
#endif

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitInput;
    }

    try {
        if (threads > 0) set_num_threads(threads);
        if (*m) return cmd_match(input, tier, budget, full, seed, pitches, out, quiet);
        if (*r) return cmd_render(preset, pitch, dur, out, float_out);
        if (*a) return cmd_ablate(input, tiers, budget, seeds, pitches);
        if (*b) return cmd_bench(min_seconds, batch);
        if (*bp) return cmd_bundle(bundle_out, budget, seed);
#ifdef TIMBREFIT_WITH_SERVICE
        if (*s) {
            if (!best_preset.empty() && !fs::exists(best_preset)) {
                std::fprintf(stderr, "note: %s not found, /api/presets/best disabled\n", best_preset.c_str());
                best_preset.clear();
            }
            return cmd_serve(host, port, data_dir, best_preset);
        }
#endif
    } catch (const InputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInput;
    } catch (const OptimizationAborted& e) {
        std::fprintf(stderr, "aborted: %s\n", e.what());
        return kExitAborted;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInput;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
