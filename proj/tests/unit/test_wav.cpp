#include "oracles.hpp"

#include "timbrefit/error.hpp"
#include "timbrefit/wav.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

using namespace timbrefit;

namespace {

// Hand-built RIFF writer, independent of encode_wav.
std::vector<std::uint8_t> riff(std::uint16_t tag, std::uint16_t channels, std::uint32_t rate, std::uint16_t bits,
                               const std::vector<std::uint8_t>& data, bool extensible = false) {
    std::vector<std::uint8_t> out;
    auto u32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    auto u16 = [&](std::uint16_t v) {
        out.push_back(static_cast<std::uint8_t>(v));
        out.push_back(static_cast<std::uint8_t>(v >> 8));
    };
    auto tag4 = [&](const char* t) { out.insert(out.end(), t, t + 4); };
    const std::uint32_t fmt_len = extensible ? 40 : 16;
    tag4("RIFF");
    u32(4 + 8 + fmt_len + 8 + 12 + 8 + static_cast<std::uint32_t>(data.size()));
    tag4("WAVE");
    tag4("fmt ");
    u32(fmt_len);
    u16(extensible ? 0xFFFE : tag);
    u16(channels);
    u32(rate);
    u32(rate * channels * bits / 8);
    u16(static_cast<std::uint16_t>(channels * bits / 8));
    u16(bits);
    if (extensible) {
        u16(22);
        u16(bits);
        u32(0);
        u16(tag);
        const std::uint8_t guid_tail[14] = {0x00, 0x00, 0x00, 0x00, 0x10, 0x00, 0x80, 0x00, 0x00, 0xAA, 0x00, 0x38, 0x9B, 0x71};
        out.insert(out.end(), guid_tail, guid_tail + 14);
    }
    tag4("LIST"); // unknown chunk to skip
    u32(4);
    tag4("INFO");
    tag4("data");
    u32(static_cast<std::uint32_t>(data.size()));
    out.insert(out.end(), data.begin(), data.end());
    return out;
}

} // namespace

TEST_CASE("16-bit stereo is averaged to mono") {
    std::vector<std::uint8_t> data;
    const std::int16_t frames[][2] = {{16384, 0}, {-32768, -32768}, {100, 300}};
    for (auto& f : frames)
        for (auto s : f) {
            data.push_back(static_cast<std::uint8_t>(s & 0xFF));
            data.push_back(static_cast<std::uint8_t>((s >> 8) & 0xFF));
        }
    WavInfo info;
    const auto buf = decode_wav(riff(1, 2, 44100, 16, data), &info);
    CHECK(info.channels == 2);
    CHECK(info.bits_per_sample == 16);
    REQUIRE(buf.size() == 3);
    CHECK(buf.samples[0] == doctest::Approx(0.25));
    CHECK(buf.samples[1] == doctest::Approx(-1.0));
    CHECK(buf.samples[2] == doctest::Approx(200.0 / 32768.0));
}

TEST_CASE("8/24/32-bit integer and float encodings") {
    CHECK(decode_wav(riff(1, 1, 8000, 8, {0, 128, 255})).samples ==
          std::vector<double>{-1.0, 0.0, 127.0 / 128.0});
    const auto s24 = decode_wav(riff(1, 1, 8000, 24, {0x00, 0x00, 0x40, 0x00, 0x00, 0xC0}));
    CHECK(s24.samples == std::vector<double>{0.5, -0.5});
    const auto s32 = decode_wav(riff(1, 1, 8000, 32, {0, 0, 0, 0x40}));
    CHECK(s32.samples[0] == 0.5);
    float f = -0.75f;
    std::vector<std::uint8_t> fb(4);
    std::memcpy(fb.data(), &f, 4);
    CHECK(decode_wav(riff(3, 1, 48000, 32, fb)).samples[0] == -0.75);
    double d = 0.125;
    std::vector<std::uint8_t> db(8);
    std::memcpy(db.data(), &d, 8);
    CHECK(decode_wav(riff(3, 1, 48000, 64, db)).samples[0] == 0.125);
    CHECK(decode_wav(riff(3, 1, 48000, 32, fb, true)).samples[0] == -0.75);
}

TEST_CASE("malformed input is rejected") {
    CHECK_THROWS_AS(decode_wav(std::vector<std::uint8_t>{1, 2, 3}), InputError);
    const std::string mp3 = "ID3\x03\x00\x00\x00\x00\x00\x00";
    CHECK_THROWS_AS(decode_wav(std::vector<std::uint8_t>(mp3.begin(), mp3.end())), InputError);
    CHECK_THROWS_AS(decode_wav(riff(2, 1, 8000, 16, {0, 0})), InputError);  // ADPCM
    CHECK_THROWS_AS(decode_wav(riff(1, 1, 8000, 12, {0, 0})), InputError);
    CHECK_THROWS_AS(decode_wav(riff(1, 0, 8000, 16, {0, 0})), InputError);
    CHECK_THROWS_AS(read_wav("/nonexistent/file.wav"), InputError);
}

TEST_CASE("encode/decode round trip") {
    AudioBuffer buf{oracle::sine(440.0, 44100.0, 1000, 0.8), 44100.0};
    buf.samples[10] = 1.7; // clipped in 16-bit
    const auto pcm = decode_wav(encode_wav(buf, WavFormat::Pcm16));
    CHECK(pcm.sample_rate == 44100.0);
    CHECK(pcm.samples[10] == doctest::Approx(32767.0 / 32768.0));
    for (std::size_t i = 0; i < buf.size(); ++i)
        if (i != 10) CHECK(std::abs(pcm.samples[i] - buf.samples[i]) < 1e-4);
    const auto flt = decode_wav(encode_wav(buf, WavFormat::Float32));
    for (std::size_t i = 0; i < buf.size(); ++i) CHECK(flt.samples[i] == static_cast<float>(buf.samples[i]));
    const auto bytes = encode_wav(buf);
    CHECK(bytes.size() == 44 + 2 * buf.size());
    CHECK(std::memcmp(bytes.data(), "RIFF", 4) == 0);

    const auto path = std::filesystem::temp_directory_path() / "timbrefit_test_rt.wav";
    write_wav(path, buf, WavFormat::Float32);
    CHECK(read_wav(path).size() == buf.size());
    std::filesystem::remove(path);
}

TEST_CASE("resampling preserves pitch and level") {
    const AudioBuffer at48{oracle::sine(1000.0, 48000.0, 48000, 0.5), 48000.0};
    const auto at44 = resample(at48, 44100.0);
    CHECK(at44.size() == 44100);
    CHECK(at44.sample_rate == 44100.0);
    CHECK(oracle::hann_dft_mag(at44.samples, 1000.0, 44100.0, 2000, 40000) == doctest::Approx(0.5).epsilon(0.01));
    CHECK(oracle::rms(at44.samples, 2000, 42000) == doctest::Approx(0.5 / std::sqrt(2.0)).epsilon(0.01));
    const AudioBuffer at22{oracle::sine(1000.0, 22050.0, 22050, 0.5), 22050.0};
    const auto up = resample(at22, 44100.0);
    CHECK(up.size() == 44100);
    CHECK(oracle::hann_dft_mag(up.samples, 1000.0, 44100.0, 2000, 40000) == doctest::Approx(0.5).epsilon(0.01));
    // Content above the new Nyquist is removed when downsampling.
    const AudioBuffer high{oracle::sine(20000.0, 48000.0, 48000, 0.5), 48000.0};
    const auto down = resample(high, 22050.0);
    CHECK(oracle::rms(down.samples, 1000, 21000) < 0.01);
}

TEST_CASE("load_audio_bytes resamples to 44.1 kHz") {
    const AudioBuffer at48{oracle::sine(500.0, 48000.0, 4800, 0.5), 48000.0};
    const auto loaded = load_audio_bytes(encode_wav(at48, WavFormat::Float32));
    CHECK(loaded.sample_rate == 44100.0);
    CHECK(loaded.size() == 4410);
}
