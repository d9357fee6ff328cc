#pragma once

#include "timbrefit/synth.hpp"

#include <vector>

namespace fixtures {

inline constexpr double kPitches[3] = {221.0, 278.0, 295.0};

/// Plucky T28 patch used to synthesize multi-note test material.
inline timbrefit::Patch sequence_patch() {
    using timbrefit::ParamId;
    auto p = timbrefit::Patch::defaults(timbrefit::Tier::T28);
    p.set(ParamId::OscMixSaw, 0.8);
    p.set(ParamId::OscMixPulse, 0.2);
    p.set(ParamId::OscMixSine, 0.3);
    p.set(ParamId::Cutoff, 3000.0);
    p.set(ParamId::AmpAttack, 0.003);
    p.set(ParamId::AmpDecay, 0.08);
    p.set(ParamId::AmpSustain, 0.6);
    p.set(ParamId::AmpRelease, 0.02);
    p.set(ParamId::OutputGain, 0.6);
    return p;
}

/// 22 sixteenth notes at 100 BPM (0.15 s each) cycling through the three
/// pitches in an uneven pattern: 8 x 221, 8 x 278, 6 x 295.
inline timbrefit::AudioBuffer note_sequence(std::vector<double>* pitches_out = nullptr) {
    static constexpr int kPattern[22] = {0, 1, 0, 2, 1, 0, 1, 2, 0, 1, 0, 2, 1, 0, 1, 2, 0, 1, 2, 0, 1, 2};
    const auto p = sequence_patch();
    timbrefit::AudioBuffer seq{{}, timbrefit::kDefaultSampleRate};
    for (int i : kPattern) {
        const auto note = timbrefit::render({p, kPitches[i], 0.15});
        seq.samples.insert(seq.samples.end(), note.samples.begin(), note.samples.end());
        if (pitches_out) pitches_out->push_back(kPitches[i]);
    }
    return seq;
}

} // namespace fixtures
