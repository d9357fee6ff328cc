#include "client.hpp"

#include "timbrefit/dsp.hpp"

#include <doctest.h>

#include <cmath>

using namespace timbrefit;
using namespace timbrefit::service;
using svc::json;

namespace {

void check_keyboard(httplib::Client& c, const std::string& prefix) {
    for (int midi = kKeyboardLowMidi; midi <= kKeyboardHighMidi; ++midi) {
        CAPTURE(midi);
        auto n = c.Get(prefix + std::to_string(midi));
        REQUIRE(n);
        REQUIRE(n->status == 200);
        const auto audio = svc::decode(n->body);
        CHECK(audio.duration() == doctest::Approx(kNoteSeconds));
        CHECK(rms(audio.samples) > 0.01);
        const auto p = detect_pitch(audio);
        CHECK(p.voiced);
        CHECK(p.f0 == doctest::Approx(midi_to_hz(midi)).epsilon(0.01));
    }
}

} // namespace

TEST_CASE("full-budget job streams one event per generation") {
    svc::Harness h(false);
    auto c = h.client();
    auto res = svc::post_job(c, svc::wav_bytes(220.0, 0.3), "10000", "t28", "1");
    REQUIRE(res->status == 201);
    const auto id = json::parse(res->body).at("id").get<std::string>();

    svc::Stream s(h.server.port(), id);
    REQUIRE(s.next()->at("type") == "snapshot");
    h.jobs.start();
    const auto records = s.drain();

    REQUIRE(records.size() == 251);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < 250; ++i) {
        const auto& r = records[i];
        REQUIRE(r.at("type") == "progress");
        CHECK(r.at("generation") == i + 1);
        CHECK(r.at("evaluations") == 40 * (i + 1));
        const double loss = r.at("best_loss").get<double>();
        CHECK(loss <= prev);
        prev = loss;
    }
    CHECK(records[249].at("progress_fraction").get<double>() == 1.0);
    CHECK(records[250].at("type") == "terminal");
    CHECK(records[250].at("state") == "done");

    check_keyboard(c, "/api/jobs/" + id + "/notes/");
}

TEST_CASE("shipped preset gives a playable keyboard without an upload") {
    const std::filesystem::path preset = TIMBREFIT_BUNDLED_PRESET;
    REQUIRE(std::filesystem::exists(preset));
    PresetMetadata meta;
    const auto patch = load_preset(preset, &meta);
    CHECK(patch.tier() == Tier::T28);
    REQUIRE(meta.count("round_trip_loss") == 1);
    CHECK(std::stod(meta.at("round_trip_loss")) >= 0.0);

    svc::Harness h(false, preset);
    auto c = h.client();
    check_keyboard(c, "/api/presets/best/notes/");
}
