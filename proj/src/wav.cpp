#include "timbrefit/wav.hpp"

#include "timbrefit/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace timbrefit {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;
constexpr int kSincZeroCrossings = 32;

std::uint32_t u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
std::uint16_t u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | p[1] << 8); }

double sample_at(const std::uint8_t* p, unsigned bits, bool is_float) {
    if (is_float) {
        if (bits == 32) return static_cast<double>(std::bit_cast<float>(u32(p)));
        const std::uint64_t lo = u32(p), hi = u32(p + 4);
        return std::bit_cast<double>(lo | hi << 32);
    }
    switch (bits) {
    case 8: return (static_cast<double>(p[0]) - 128.0) / 128.0;
    case 16: return static_cast<double>(static_cast<std::int16_t>(u16(p))) / 32768.0;
    case 24: {
        std::int32_t v = static_cast<std::int32_t>(p[0] | p[1] << 8 | p[2] << 16);
        if (v & 0x800000) v -= 0x1000000;
        return static_cast<double>(v) / 8388608.0;
    }
    default: return static_cast<double>(static_cast<std::int32_t>(u32(p))) / 2147483648.0;
    }
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

} // namespace

AudioBuffer decode_wav(std::span<const std::uint8_t> bytes, WavInfo* info) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw InputError("not a RIFF/WAVE file");
    }
    WavInfo fmt;
    std::uint16_t tag = 0;
    bool have_fmt = false;
    std::span<const std::uint8_t> data;
    bool have_data = false;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const auto* chunk = bytes.data() + pos;
        const std::size_t len = u32(chunk + 4);
        const std::size_t body = pos + 8;
        const std::size_t avail = std::min(len, bytes.size() - body);
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (avail < 16) throw InputError("truncated fmt chunk");
            const auto* f = bytes.data() + body;
            tag = u16(f);
            fmt.channels = u16(f + 2);
            fmt.sample_rate = u32(f + 4);
            fmt.bits_per_sample = u16(f + 14);
            if (tag == kFormatExtensible) {
                if (avail < 40) throw InputError("truncated WAVE_FORMAT_EXTENSIBLE header");
                tag = u16(f + 24); // first two bytes of the sub-format GUID
            }
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = bytes.subspan(body, avail);
            have_data = true;
        }
        pos = body + len + (len & 1u);
    }
    if (!have_fmt) throw InputError("WAV has no fmt chunk");
    if (!have_data) throw InputError("WAV has no data chunk");
    if (tag != kFormatPcm && tag != kFormatFloat) {
        throw InputError("unsupported WAV encoding (format tag " + std::to_string(tag) + ")");
    }
    fmt.floating_point = tag == kFormatFloat;
    const unsigned bits = fmt.bits_per_sample;
    const bool bits_ok = fmt.floating_point ? (bits == 32 || bits == 64) : (bits == 8 || bits == 16 || bits == 24 || bits == 32);
    if (!bits_ok) throw InputError("unsupported WAV sample width: " + std::to_string(bits) + " bits");
    if (fmt.channels == 0) throw InputError("WAV declares zero channels");
    if (fmt.sample_rate == 0) throw InputError("WAV declares a zero sample rate");

    const std::size_t width = bits / 8, frame = width * fmt.channels;
    const std::size_t frames = data.size() / frame;
    AudioBuffer out{std::vector<double>(frames), static_cast<double>(fmt.sample_rate)};
    for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (unsigned c = 0; c < fmt.channels; ++c) {
            acc += sample_at(data.data() + i * frame + c * width, bits, fmt.floating_point);
        }
        const double v = acc / fmt.channels;
        out.samples[i] = std::isfinite(v) ? v : 0.0;
    }
    if (info) *info = fmt;
    return out;
}

AudioBuffer load_audio_bytes(std::span<const std::uint8_t> bytes, double target_rate) {
    auto buf = decode_wav(bytes);
    return buf.sample_rate == target_rate ? buf : resample(buf, target_rate);
}

AudioBuffer read_wav(const std::filesystem::path& path, double target_rate) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return load_audio_bytes(bytes, target_rate);
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_wav(const AudioBuffer& buf, WavFormat format) {
    const bool pcm = format == WavFormat::Pcm16;
    const std::uint16_t bits = pcm ? 16 : 32;
    const std::uint32_t data_len = static_cast<std::uint32_t>(buf.size() * (bits / 8));
    const auto rate = static_cast<std::uint32_t>(std::lround(buf.sample_rate));
    std::vector<std::uint8_t> out;
    out.reserve(44 + data_len);
    put_tag(out, "RIFF");
    put_u32(out, 36 + data_len);
    put_tag(out, "WAVE");
    put_tag(out, "fmt ");
    put_u32(out, 16);
    put_u16(out, pcm ? kFormatPcm : kFormatFloat);
    put_u16(out, 1);
    put_u32(out, rate);
    put_u32(out, rate * (bits / 8));
    put_u16(out, bits / 8);
    put_u16(out, bits);
    put_tag(out, "data");
    put_u32(out, data_len);
    for (double s : buf.samples) {
        if (!std::isfinite(s)) s = 0.0;
        if (pcm) {
            const auto v = static_cast<std::int16_t>(std::lround(std::clamp(s, -1.0, 1.0) * 32767.0));
            put_u16(out, static_cast<std::uint16_t>(v));
        } else {
            put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(s)));
        }
    }
    return out;
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& buf, WavFormat format) {
    const auto bytes = encode_wav(buf, format);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("write failed: " + path.string());
}

AudioBuffer resample(const AudioBuffer& buf, double target_rate) {
    if (!(target_rate > 0.0) || !(buf.sample_rate > 0.0)) throw InputError("sample rates must be positive");
    if (buf.sample_rate == target_rate || buf.samples.empty()) return AudioBuffer{buf.samples, target_rate};
    const double ratio = target_rate / buf.sample_rate;
    const double cutoff = std::min(1.0, ratio); // relative to the input Nyquist
    const double half_width = kSincZeroCrossings / cutoff;
    const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(buf.size()) * ratio));
    const auto n_in = static_cast<std::ptrdiff_t>(buf.size());
    AudioBuffer out{std::vector<double>(n_out), target_rate};
    for (std::size_t i = 0; i < n_out; ++i) {
        const double t = static_cast<double>(i) / ratio;
        const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(t - half_width)));
        const auto hi = std::min<std::ptrdiff_t>(n_in - 1, static_cast<std::ptrdiff_t>(std::floor(t + half_width)));
        double acc = 0.0;
        for (auto j = lo; j <= hi; ++j) {
            const double d = static_cast<double>(j) - t;
            const double x = d * cutoff;
            const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
            const double w_pos = (d + half_width) / (2.0 * half_width); // Blackman over [-half_width, half_width]
            const double w = 0.42 - 0.5 * std::cos(2.0 * std::numbers::pi * w_pos) + 0.08 * std::cos(4.0 * std::numbers::pi * w_pos);
            acc += buf.samples[static_cast<std::size_t>(j)] * cutoff * sinc * w;
        }
        out.samples[i] = acc;
    }
    return out;
}

} // namespace timbrefit
