#include "timbrefit/dsp.hpp"
#include "timbrefit/error.hpp"
#include "timbrefit/loss.hpp"
#include "timbrefit/optimizer.hpp"
#include "timbrefit/params.hpp"
#include "timbrefit/pipeline.hpp"
#include "timbrefit/synth.hpp"
#include "timbrefit/wav.hpp"

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace timbrefit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

AudioBuffer to_buffer(const Array& a, double sample_rate) {
    if (a.ndim() != 1) throw InputError("audio must be a 1-D array");
    return {std::vector<double>(a.data(), a.data() + a.size()), sample_rate};
}

py::array_t<double> to_array(const std::vector<double>& v) {
    return py::array_t<double>(static_cast<py::ssize_t>(v.size()), v.data());
}

py::dict breakdown(const LossBreakdown& b) {
    py::dict d;
    d["mel"] = b.mel;
    d["centroid"] = b.centroid;
    d["mfcc"] = b.mfcc;
    d["composite"] = b.composite;
    d["silent"] = b.silent;
    return d;
}

std::vector<NoteSegment> to_targets(const std::vector<std::pair<Array, double>>& notes, double sample_rate) {
    std::vector<NoteSegment> out;
    for (const auto& [audio, f0] : notes) {
        auto buf = to_buffer(audio, sample_rate);
        const auto n = buf.size();
        out.push_back({std::move(buf), 0, n, f0, 1.0});
    }
    return out;
}

py::dict outcome_dict(const MatchOutcome& o) {
    py::dict d;
    d["patch"] = o.report.patch;
    d["report_json"] = report_to_json(o.report);
    d["init_loss"] = o.report.init_loss;
    d["final_loss"] = o.report.final_loss;
    d["per_pitch_losses"] = o.report.per_pitch_losses;
    d["evaluations"] = o.report.evaluations;
    d["detune_at_bound"] = o.report.detune_at_bound;
    std::vector<std::pair<std::size_t, double>> trace;
    for (const auto& s : o.report.trace.samples) trace.emplace_back(s.evaluations, s.best_loss);
    d["trace"] = trace;
    return d;
}

MatchOptions options(Tier tier, std::size_t budget, std::uint64_t seed) {
    MatchOptions o;
    o.tier = tier;
    o.cma.budget = budget;
    o.cma.seed = seed;
    return o;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Synthesizer patch recovery engine";

    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
    py::register_exception<OptimizationAborted>(m, "OptimizationAborted", PyExc_RuntimeError);

    m.attr("SAMPLE_RATE") = kDefaultSampleRate;

    py::enum_<Tier>(m, "Tier")
        .value("T15", Tier::T15)
        .value("T18", Tier::T18)
        .value("T24", Tier::T24)
        .value("T28", Tier::T28)
        .value("T29", Tier::T29);
    m.def("dimension", &dimension);
    m.def("tier_label", [](Tier t) { return std::string(tier_label(t)); });
    m.def("parse_tier", [](const std::string& s) { return parse_tier(s); });
    m.def("param_names", [](Tier t) {
        std::vector<std::string> out;
        for (const auto& s : tier_params(t)) out.emplace_back(s.name);
        return out;
    });

    py::class_<Patch>(m, "Patch")
        .def(py::init<Tier, std::vector<double>>(), py::arg("tier"), py::arg("values"))
        .def_static("defaults", &Patch::defaults, py::arg("tier") = Tier::T28)
        .def_property_readonly("tier", &Patch::tier)
        .def_property_readonly("values",
                               [](const Patch& p) { return std::vector<double>(p.values().begin(), p.values().end()); })
        .def("__getitem__", [](const Patch& p, const std::string& name) { return p.get(std::string_view(name)); })
        .def("__setitem__", [](Patch& p, const std::string& name, double v) { p.set(std::string_view(name), v); })
        .def("to_dict",
             [](const Patch& p) {
                 py::dict d;
                 const auto specs = tier_params(p.tier());
                 for (std::size_t i = 0; i < specs.size(); ++i) d[py::str(std::string(specs[i].name))] = p.values()[i];
                 return d;
             })
        .def(py::self == py::self)
        .def("__repr__", [](const Patch& p) { return "<Patch " + std::string(tier_label(p.tier())) + ">"; });

    m.def("normalize", [](const Patch& p) { return normalize(p).vector; });
    m.def("denormalize", [](const std::vector<double>& v, Tier t) { return denormalize(v, t); });

    m.def("format_preset", &format_preset, py::arg("patch"), py::arg("meta") = PresetMetadata{});
    m.def(
        "parse_preset",
        [](const std::string& text) {
            PresetMetadata meta;
            auto p = parse_preset(text, &meta);
            return std::make_pair(p, meta);
        },
        py::arg("text"));
    m.def("save_preset", &save_preset, py::arg("patch"), py::arg("path"), py::arg("meta") = PresetMetadata{});
    m.def(
        "load_preset",
        [](const std::filesystem::path& path) {
            PresetMetadata meta;
            auto p = load_preset(path, &meta);
            return std::make_pair(p, meta);
        },
        py::arg("path"));

    m.def(
        "render",
        [](const Patch& p, double f0, double duration, double sample_rate, std::uint64_t seed) {
            AudioBuffer out;
            {
                py::gil_scoped_release release;
                out = render({p, f0, duration, sample_rate, seed});
            }
            return to_array(out.samples);
        },
        py::arg("patch"), py::arg("f0"), py::arg("duration"), py::arg("sample_rate") = kDefaultSampleRate,
        py::arg("seed") = 0);
    m.def("midi_to_hz", &midi_to_hz);

    m.def(
        "composite_loss",
        [](const Array& target, const Array& candidate, double sample_rate) {
            return breakdown(composite_loss(to_buffer(target, sample_rate), to_buffer(candidate, sample_rate)));
        },
        py::arg("target"), py::arg("candidate"), py::arg("sample_rate") = kDefaultSampleRate);

    m.def(
        "detect_pitch",
        [](const Array& a, double sample_rate) {
            const auto p = detect_pitch(to_buffer(a, sample_rate));
            return py::make_tuple(p.f0, p.confidence, p.voiced);
        },
        py::arg("audio"), py::arg("sample_rate") = kDefaultSampleRate);
    m.def(
        "detect_onsets", [](const Array& a, double sample_rate) { return detect_onsets(to_buffer(a, sample_rate)); },
        py::arg("audio"), py::arg("sample_rate") = kDefaultSampleRate);
    m.def(
        "spectral_centroid",
        [](const Array& a, double sample_rate) { return spectral_centroid(to_buffer(a, sample_rate)).mean; },
        py::arg("audio"), py::arg("sample_rate") = kDefaultSampleRate);

    m.def(
        "read_wav",
        [](const std::filesystem::path& path) {
            const auto b = read_wav(path);
            return py::make_tuple(to_array(b.samples), b.sample_rate);
        },
        py::arg("path"));
    m.def(
        "write_wav",
        [](const std::filesystem::path& path, const Array& a, double sample_rate, bool float32) {
            write_wav(path, to_buffer(a, sample_rate), float32 ? WavFormat::Float32 : WavFormat::Pcm16);
        },
        py::arg("path"), py::arg("audio"), py::arg("sample_rate") = kDefaultSampleRate, py::arg("float32") = false);

    m.def(
        "match_notes",
        [](const std::vector<std::pair<Array, double>>& notes, Tier tier, std::size_t budget, std::uint64_t seed,
           double sample_rate) {
            auto targets = to_targets(notes, sample_rate);
            MatchOutcome o;
            {
                py::gil_scoped_release release;
                o = match_targets(std::move(targets), options(tier, budget, seed));
            }
            return outcome_dict(o);
        },
        py::arg("notes"), py::arg("tier") = Tier::T28, py::arg("budget") = kFastBudget, py::arg("seed") = 1,
        py::arg("sample_rate") = kDefaultSampleRate,
        "Fit a patch to (audio, f0) pairs that are already segmented.");
    m.def(
        "match_file",
        [](const std::filesystem::path& path, Tier tier, std::size_t budget, std::uint64_t seed) {
            MatchOutcome o;
            {
                py::gil_scoped_release release;
                o = match(path, options(tier, budget, seed));
            }
            return outcome_dict(o);
        },
        py::arg("path"), py::arg("tier") = Tier::T28, py::arg("budget") = kFastBudget, py::arg("seed") = 1);

    m.def(
        "minimize",
        [](const std::function<double(const std::vector<double>&)>& f, std::vector<double> start, std::size_t budget,
           std::size_t lam, double sigma0, std::uint64_t seed) {
            const CmaConfig cfg{.lambda = lam, .sigma0 = sigma0, .budget = budget, .seed = seed};
            const auto r = minimize(
                [&](std::span<const ParamVector> pop) {
                    std::vector<double> out;
                    for (const auto& x : pop) out.push_back(f(x));
                    return out;
                },
                std::move(start), cfg);
            return py::make_tuple(r.best, r.best_loss, r.evaluations);
        },
        py::arg("f"), py::arg("start"), py::arg("budget"), py::arg("lam") = 40, py::arg("sigma0") = 0.15,
        py::arg("seed") = 1, "CMA-ES on the unit box with a Python objective.");
}
