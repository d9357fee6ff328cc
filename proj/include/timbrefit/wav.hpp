#pragma once

#include "timbrefit/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace timbrefit {

enum class WavFormat { Pcm16, Float32 };

struct WavInfo {
    unsigned channels = 0;
    unsigned sample_rate = 0;
    unsigned bits_per_sample = 0;
    bool floating_point = false;
};

/// Decodes a RIFF/WAVE byte stream (integer PCM 8/16/24/32-bit, IEEE float
/// 32/64-bit, WAVE_FORMAT_EXTENSIBLE). Channels are averaged to mono; the
/// native sample rate is kept. Throws InputError on anything malformed.
AudioBuffer decode_wav(std::span<const std::uint8_t> bytes, WavInfo* info = nullptr);

/// decode_wav followed by resampling to `target_rate` when it differs.
AudioBuffer read_wav(const std::filesystem::path& path, double target_rate = kDefaultSampleRate);
AudioBuffer load_audio_bytes(std::span<const std::uint8_t> bytes, double target_rate = kDefaultSampleRate);

/// Mono little-endian RIFF. Pcm16 clips to [-1, 1].
std::vector<std::uint8_t> encode_wav(const AudioBuffer& buf, WavFormat format = WavFormat::Pcm16);
void write_wav(const std::filesystem::path& path, const AudioBuffer& buf, WavFormat format = WavFormat::Pcm16);

/// Band-limited windowed-sinc (Blackman, 32 zero crossings per side)
/// resampling; the cutoff follows the lower of the two Nyquist rates.
AudioBuffer resample(const AudioBuffer& buf, double target_rate);

} // namespace timbrefit
