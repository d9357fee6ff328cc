#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace timbrefit {

/// Synthesizer parameter tiers. Labels follow the ablation table; the
/// T29 label carries 31 coordinates (28 + distortion, delay, vibrato).
enum class Tier { T15, T18, T24, T28, T29 };

inline constexpr std::array<Tier, 5> kAllTiers{Tier::T15, Tier::T18, Tier::T24, Tier::T28, Tier::T29};

std::size_t dimension(Tier tier);
std::string_view tier_label(Tier tier);
/// Accepts "T28" or "t28".
Tier parse_tier(std::string_view label);

/// Every parameter the engine knows, in canonical order.
enum class ParamId : std::size_t {
    OscMixSaw,
    OscMixPulse,
    OscMixSine,
    OscMixNoise,
    Detune,
    Cutoff,
    Resonance,
    FilterSlope,
    FilterAttack,
    FilterDecay,
    FilterSustain,
    FilterRelease,
    AmpAttack,
    AmpDecay,
    AmpSustain,
    AmpRelease,
    Eq1Freq,
    Eq1Gain,
    Eq2Freq,
    Eq2Gain,
    PulseWidth,
    UnisonVoices,
    UnisonSpread,
    NoiseFloor,
    ReverbSize,
    ReverbMix,
    FilterEnvAmount,
    OutputGain,
    DistortionDrive,
    DelayFeedback,
    VibratoDepth,
    Count
};

inline constexpr std::size_t kParamCount = static_cast<std::size_t>(ParamId::Count);

enum class Scale { Linear, Logarithmic };

struct ParamSpec {
    ParamId id;
    std::string_view name;
    Tier introduced; // lowest tier containing the parameter
    double physical_min;
    double physical_max;
    Scale scale;
    std::string_view unit;
    bool integer = false;
    double default_value = 0.0; // used when the tier does not expose the parameter
};

/// Range and default for `id`, with the tier-specific override for detune
/// (T29 widens it to +/-24 semitones).
const ParamSpec& param_spec(ParamId id, Tier tier = Tier::T28);

/// Ordered parameter list of a tier. Length equals dimension(tier).
std::span<const ParamSpec> tier_params(Tier tier);

bool tier_has(Tier tier, ParamId id);

/// Map a single normalized coordinate to physical units and back.
double to_physical(const ParamSpec& spec, double x);
double to_normalized(const ParamSpec& spec, double value);

/// Normalized optimizer point in [0,1]^D.
using ParamVector = std::vector<double>;

/// Physical-unit parameter set for one tier. Values are stored in the
/// tier's canonical order.
class Patch {
public:
    Patch() = default;
    Patch(Tier tier, std::vector<double> values);

    /// Every parameter of the tier at its default (or range midpoint).
    static Patch defaults(Tier tier);

    Tier tier() const { return tier_; }
    std::span<const double> values() const { return values_; }

    /// Value of `id`; parameters the tier does not expose report their
    /// fixed default.
    double get(ParamId id) const;
    void set(ParamId id, double value);

    double get(std::string_view name) const;
    void set(std::string_view name, double value);

    bool operator==(const Patch&) const = default;

private:
    Tier tier_ = Tier::T28;
    std::vector<double> values_;
};

std::optional<ParamId> find_param(std::string_view name);
std::string_view param_name(ParamId id);

Patch denormalize(std::span<const double> v, Tier tier);

struct NormalizeResult {
    ParamVector vector;
    bool clamped = false; // at least one physical value was outside its range
};
NormalizeResult normalize(const Patch& patch);

/// Free-form numeric/text metadata stored alongside a preset under the
/// `meta.` key namespace.
using PresetMetadata = std::map<std::string, std::string>;

inline constexpr int kPresetFormatVersion = 1;

std::string format_preset(const Patch& patch, const PresetMetadata& meta = {});
Patch parse_preset(std::string_view text, PresetMetadata* meta = nullptr);

void save_preset(const Patch& patch, const std::filesystem::path& path, const PresetMetadata& meta = {});
Patch load_preset(const std::filesystem::path& path, PresetMetadata* meta = nullptr);

} // namespace timbrefit
