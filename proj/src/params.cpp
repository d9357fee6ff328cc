#include "timbrefit/params.hpp"

#include "timbrefit/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace timbrefit {
namespace {

using enum ParamId;

constexpr double kLinTol = 1e-9;

// Canonical parameter table. `introduced` decides tier membership; the
// default is what lower tiers render with.
constexpr std::array<ParamSpec, kParamCount> kSpecs{{
    {OscMixSaw, "osc_mix_saw", Tier::T15, 0.0, 1.0, Scale::Linear, "", false, 0.5},
    {OscMixPulse, "osc_mix_pulse", Tier::T15, 0.0, 1.0, Scale::Linear, "", false, 0.5},
    {OscMixSine, "osc_mix_sine", Tier::T15, 0.0, 1.0, Scale::Linear, "", false, 0.5},
    {OscMixNoise, "osc_mix_noise", Tier::T15, 0.0, 1.0, Scale::Linear, "", false, 0.0},
    {Detune, "detune", Tier::T15, -2.0, 2.0, Scale::Linear, "st", false, 0.0},
    {Cutoff, "cutoff", Tier::T15, 20.0, 16000.0, Scale::Logarithmic, "Hz", false, 2000.0},
    {Resonance, "resonance", Tier::T15, 0.0, 1.0, Scale::Linear, "", false, 0.0},
    {FilterSlope, "filter_slope", Tier::T24, 4.0, 48.0, Scale::Linear, "", false, 12.0},
    {FilterAttack, "filter_attack", Tier::T24, 0.001, 2.0, Scale::Logarithmic, "s", false, 0.005},
    {FilterDecay, "filter_decay", Tier::T24, 0.001, 2.0, Scale::Logarithmic, "s", false, 0.1},
    {FilterSustain, "filter_sustain", Tier::T24, 0.0, 1.0, Scale::Linear, "", false, 0.5},
    {FilterRelease, "filter_release", Tier::T24, 0.001, 2.0, Scale::Logarithmic, "s", false, 0.1},
    {AmpAttack, "amp_attack", Tier::T15, 0.001, 2.0, Scale::Logarithmic, "s", false, 0.005},
    {AmpDecay, "amp_decay", Tier::T15, 0.001, 2.0, Scale::Logarithmic, "s", false, 0.1},
    {AmpSustain, "amp_sustain", Tier::T15, 0.0, 1.0, Scale::Linear, "", false, 0.7},
    {AmpRelease, "amp_release", Tier::T15, 0.001, 2.0, Scale::Logarithmic, "s", false, 0.05},
    {Eq1Freq, "eq1_freq", Tier::T28, 200.0, 10000.0, Scale::Logarithmic, "Hz", false, 1000.0},
    {Eq1Gain, "eq1_gain", Tier::T28, -6.0, 6.0, Scale::Linear, "dB", false, 0.0},
    {Eq2Freq, "eq2_freq", Tier::T28, 200.0, 10000.0, Scale::Logarithmic, "Hz", false, 4000.0},
    {Eq2Gain, "eq2_gain", Tier::T28, -6.0, 6.0, Scale::Linear, "dB", false, 0.0},
    {PulseWidth, "pulse_width", Tier::T24, 0.05, 0.95, Scale::Linear, "", false, 0.5},
    {UnisonVoices, "unison_voices", Tier::T18, 1.0, 7.0, Scale::Linear, "voices", true, 1.0},
    {UnisonSpread, "unison_spread", Tier::T18, 0.0, 0.5, Scale::Linear, "st", false, 0.0},
    {NoiseFloor, "noise_floor", Tier::T18, 0.0, 0.2, Scale::Linear, "", false, 0.0},
    {ReverbSize, "reverb_size", Tier::T15, 0.0, 1.0, Scale::Linear, "", false, 0.3},
    {ReverbMix, "reverb_mix", Tier::T15, 0.0, 0.5, Scale::Linear, "", false, 0.0},
    {FilterEnvAmount, "filter_env_amount", Tier::T15, 0.0, 2.0, Scale::Linear, "", false, 0.0},
    {OutputGain, "output_gain", Tier::T15, 0.0, 1.0, Scale::Linear, "", false, 0.5},
    {DistortionDrive, "distortion_drive", Tier::T29, 1.0, 20.0, Scale::Linear, "", false, 1.0},
    {DelayFeedback, "delay_feedback", Tier::T29, 0.0, 0.95, Scale::Linear, "", false, 0.0},
    {VibratoDepth, "vibrato_depth", Tier::T29, 0.0, 1.0, Scale::Linear, "st", false, 0.0},
}};

// The unconstrained tier keeps the wide detune range that lets the
// optimizer drift by octaves.
constexpr ParamSpec kWideDetune{Detune, "detune", Tier::T15, -24.0, 24.0, Scale::Linear, "st", false, 0.0};

constexpr int tier_rank(Tier t) { return static_cast<int>(t); }

struct TierTables {
    std::array<std::vector<ParamSpec>, 5> lists;
    TierTables() {
        for (Tier t : kAllTiers) {
            auto& list = lists[static_cast<std::size_t>(tier_rank(t))];
            for (const auto& s : kSpecs) {
                if (tier_rank(s.introduced) <= tier_rank(t)) {
                    list.push_back(s.id == Detune && t == Tier::T29 ? kWideDetune : s);
                }
            }
        }
    }
};

const TierTables& tables() {
    static const TierTables t;
    return t;
}

std::size_t slot(Tier tier, ParamId id) {
    auto list = tier_params(tier);
    for (std::size_t i = 0; i < list.size(); ++i) {
        if (list[i].id == id) return i;
    }
    return list.size();
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

} // namespace

std::size_t dimension(Tier tier) {
    switch (tier) {
    case Tier::T15: return 15;
    case Tier::T18: return 18;
    case Tier::T24: return 24;
    case Tier::T28: return 28;
    case Tier::T29: return 31;
    }
    return 0;
}

std::string_view tier_label(Tier tier) {
    switch (tier) {
    case Tier::T15: return "T15";
    case Tier::T18: return "T18";
    case Tier::T24: return "T24";
    case Tier::T28: return "T28";
    case Tier::T29: return "T29";
    }
    return "?";
}

Tier parse_tier(std::string_view label) {
    std::string up(label);
    std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    for (Tier t : kAllTiers) {
        if (up == tier_label(t)) return t;
    }
    throw InputError("unknown tier label '" + std::string(label) + "' (expected one of T15, T18, T24, T28, T29)");
}

const ParamSpec& param_spec(ParamId id, Tier tier) {
    if (id == Detune && tier == Tier::T29) return kWideDetune;
    return kSpecs[static_cast<std::size_t>(id)];
}

std::span<const ParamSpec> tier_params(Tier tier) {
    return tables().lists[static_cast<std::size_t>(tier_rank(tier))];
}

bool tier_has(Tier tier, ParamId id) {
    return tier_rank(param_spec(id).introduced) <= tier_rank(tier);
}

std::optional<ParamId> find_param(std::string_view name) {
    for (const auto& s : kSpecs) {
        if (s.name == name) return s.id;
    }
    return std::nullopt;
}

std::string_view param_name(ParamId id) { return kSpecs[static_cast<std::size_t>(id)].name; }

double to_physical(const ParamSpec& spec, double x) {
    x = std::clamp(x, 0.0, 1.0);
    double v = spec.scale == Scale::Logarithmic
                   ? spec.physical_min * std::pow(spec.physical_max / spec.physical_min, x)
                   : spec.physical_min + x * (spec.physical_max - spec.physical_min);
    if (spec.integer) v = std::round(v);
    return std::clamp(v, spec.physical_min, spec.physical_max);
}

double to_normalized(const ParamSpec& spec, double value) {
    double x = spec.scale == Scale::Logarithmic
                   ? std::log(value / spec.physical_min) / std::log(spec.physical_max / spec.physical_min)
                   : (value - spec.physical_min) / (spec.physical_max - spec.physical_min);
    return std::clamp(x, 0.0, 1.0);
}

Patch::Patch(Tier tier, std::vector<double> values) : tier_(tier), values_(std::move(values)) {
    if (values_.size() != dimension(tier)) {
        throw InputError("patch for tier " + std::string(tier_label(tier)) + " needs " +
                         std::to_string(dimension(tier)) + " values, got " + std::to_string(values_.size()));
    }
}

Patch Patch::defaults(Tier tier) {
    std::vector<double> v;
    for (const auto& s : tier_params(tier)) v.push_back(s.default_value);
    return Patch(tier, std::move(v));
}

double Patch::get(ParamId id) const {
    auto i = slot(tier_, id);
    if (i < values_.size()) return values_[i];
    return param_spec(id, tier_).default_value;
}

void Patch::set(ParamId id, double value) {
    auto i = slot(tier_, id);
    if (i >= values_.size()) {
        throw InputError("parameter '" + std::string(param_name(id)) + "' is not part of tier " +
                         std::string(tier_label(tier_)));
    }
    values_[i] = value;
}

double Patch::get(std::string_view name) const {
    auto id = find_param(name);
    if (!id) throw InputError("unknown parameter '" + std::string(name) + "'");
    return get(*id);
}

void Patch::set(std::string_view name, double value) {
    auto id = find_param(name);
    if (!id) throw InputError("unknown parameter '" + std::string(name) + "'");
    set(*id, value);
}

Patch denormalize(std::span<const double> v, Tier tier) {
    auto specs = tier_params(tier);
    if (v.size() != specs.size()) {
        throw InputError("parameter vector has " + std::to_string(v.size()) + " coordinates but tier " +
                         std::string(tier_label(tier)) + " needs " + std::to_string(specs.size()));
    }
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = to_physical(specs[i], v[i]);
    return Patch(tier, std::move(out));
}

NormalizeResult normalize(const Patch& patch) {
    auto specs = tier_params(patch.tier());
    NormalizeResult r;
    r.vector.resize(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        double v = patch.values()[i];
        const auto& s = specs[i];
        if (!std::isfinite(v) || v < s.physical_min - kLinTol * std::abs(s.physical_min) - kLinTol ||
            v > s.physical_max + kLinTol * std::abs(s.physical_max) + kLinTol) {
            r.clamped = true;
        }
        if (!std::isfinite(v)) v = s.physical_min;
        v = std::clamp(v, s.physical_min, s.physical_max);
        r.vector[i] = to_normalized(s, v);
    }
    return r;
}

std::string format_preset(const Patch& patch, const PresetMetadata& meta) {
    std::ostringstream os;
    os << "# timbrefit synthesizer preset\n";
    os << "format_version = " << kPresetFormatVersion << "\n";
    os << "tier = " << tier_label(patch.tier()) << "\n";
    auto specs = tier_params(patch.tier());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        os << specs[i].name << " = " << format_double(patch.values()[i]) << "\n";
    }
    for (const auto& [k, v] : meta) {
        if (k.find_first_of(" =\n#") != std::string::npos || v.find('\n') != std::string::npos) {
            throw InputError("preset metadata key/value not representable: " + k);
        }
        os << "meta." << k << " = " << v << "\n";
    }
    return os.str();
}

Patch parse_preset(std::string_view text, PresetMetadata* meta) {
    std::map<std::string, std::string, std::less<>> kv;
    PresetMetadata md;
    std::size_t line_no = 0;
    while (!text.empty()) {
        auto nl = text.find('\n');
        auto line = trim(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw InputError("preset line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        std::string key(trim(line.substr(0, eq)));
        std::string value(trim(line.substr(eq + 1)));
        if (key.rfind("meta.", 0) == 0) {
            md[key.substr(5)] = value;
            continue;
        }
        if (!kv.emplace(key, value).second) {
            throw InputError("preset line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
    }

    auto version_it = kv.find("format_version");
    if (version_it == kv.end()) throw InputError("preset is missing field 'format_version'");
    if (version_it->second != std::to_string(kPresetFormatVersion)) {
        throw InputError("unsupported preset format_version " + version_it->second + " (expected " +
                         std::to_string(kPresetFormatVersion) + ")");
    }
    auto tier_it = kv.find("tier");
    if (tier_it == kv.end()) throw InputError("preset is missing field 'tier'");
    Tier tier = parse_tier(tier_it->second);

    auto specs = tier_params(tier);
    std::set<std::string, std::less<>> allowed{"format_version", "tier"};
    std::vector<double> values;
    for (const auto& s : specs) {
        allowed.emplace(s.name);
        auto it = kv.find(s.name);
        if (it == kv.end()) throw InputError("preset is missing field '" + std::string(s.name) + "'");
        double v = 0.0;
        const auto& str = it->second;
        auto res = std::from_chars(str.data(), str.data() + str.size(), v);
        if (res.ec != std::errc{} || res.ptr != str.data() + str.size() || !std::isfinite(v)) {
            throw InputError("preset field '" + std::string(s.name) + "' is not a finite number: '" + str + "'");
        }
        const double slack = 1e-9 * std::max(1.0, std::abs(s.physical_max));
        if (v < s.physical_min - slack || v > s.physical_max + slack) {
            throw InputError("preset field '" + std::string(s.name) + "' = " + str + " outside [" +
                             format_double(s.physical_min) + ", " + format_double(s.physical_max) + "]");
        }
        if (s.integer && v != std::round(v)) {
            throw InputError("preset field '" + std::string(s.name) + "' must be an integer");
        }
        values.push_back(v);
    }
    for (const auto& [k, v] : kv) {
        if (!allowed.contains(k)) {
            throw InputError("preset has unknown key '" + k + "' for tier " + std::string(tier_label(tier)));
        }
    }
    if (meta) *meta = std::move(md);
    return Patch(tier, std::move(values));
}

void save_preset(const Patch& patch, const std::filesystem::path& path, const PresetMetadata& meta) {
    auto text = format_preset(patch, meta);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InputError("cannot write preset to " + path.string());
        out << text;
        if (!out) throw InputError("failed writing preset to " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Patch load_preset(const std::filesystem::path& path, PresetMetadata* meta) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read preset " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_preset(ss.str(), meta);
}

} // namespace timbrefit
