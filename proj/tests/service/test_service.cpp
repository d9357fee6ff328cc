#include "client.hpp"

#include "timbrefit/dsp.hpp"
#include "timbrefit/error.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace timbrefit;
using namespace timbrefit::service;
using svc::json;

TEST_CASE("multipart parsing") {
    const std::string ct = "multipart/form-data; boundary=\"XyZ\"";
    const std::string body = "preamble\r\n--XyZ\r\n"
                             "Content-Disposition: form-data; name=\"file\"; filename=\"a.wav\"\r\n"
                             "Content-Type: audio/wav\r\n\r\n"
                             "RIFF\r\n--Xy\r\n"
                             "--XyZ\r\n"
                             "content-disposition: form-data; name=budget\r\n\r\n"
                             "400\r\n"
                             "--XyZ--\r\n";
    const auto parts = parse_multipart(ct, body);
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].name == "file");
    CHECK(parts[0].filename == "a.wav");
    CHECK(parts[0].content_type == "audio/wav");
    CHECK(parts[0].data == "RIFF\r\n--Xy");
    CHECK(parts[1].name == "budget");
    CHECK(parts[1].data == "400");

    CHECK_THROWS_AS(parse_multipart("multipart/form-data", body), InputError);
    CHECK_THROWS_AS(parse_multipart(ct, "--XyZ\r\nContent-Disposition: form-data; name=a\r\n\r\nno end"), InputError);
    CHECK_THROWS_AS(parse_multipart(ct, "nothing here"), InputError);
}

TEST_CASE("job options") {
    const auto o = parse_job_options({{"tier", "t24"}, {"budget", "400"}, {"seed", "9"}, {"other", "x"}});
    CHECK(o.tier == Tier::T24);
    CHECK(o.budget == 400);
    CHECK(o.seed == 9);
    const auto d = parse_job_options({});
    CHECK(d.tier == Tier::T28);
    CHECK(d.budget == 10000);
    CHECK_THROWS_AS(parse_job_options({{"budget", "12k"}}), InputError);
    CHECK_THROWS_AS(parse_job_options({{"tier", "t99"}}), InputError);
}

TEST_CASE("records carry the schema version and type") {
    JobStatus s;
    s.id = "abc";
    s.latest = ProgressEvent{3, 120, 0.5, 40, 0.012};
    for (const auto& text : {status_json(s), snapshot_json(s), terminal_json(s), progress_json("abc", *s.latest),
                             error_json("x"), created_json("abc")}) {
        const auto j = json::parse(text);
        CHECK(j.at("schema_version") == kApiSchemaVersion);
        CHECK(j.at("type").is_string());
    }
    const auto p = json::parse(progress_json("abc", *s.latest));
    CHECK(p.at("evaluations") == 120);
    CHECK(p.at("generation") == 3);
    CHECK(p.at("progress_fraction").get<double>() == doctest::Approx(0.012));
}

TEST_CASE("keyboard note rendering") {
    const auto patch = svc::upload_patch();
    CHECK_THROWS_AS(render_note_wav(patch, 47), InputError);
    CHECK_THROWS_AS(render_note_wav(patch, 73), InputError);
    const auto a = render_note_wav(patch, 57);
    const auto audio = load_audio_bytes(a);
    CHECK(audio.duration() == doctest::Approx(kNoteSeconds));
    CHECK(detect_pitch(audio).f0 == doctest::Approx(220.0).epsilon(0.01));
    NoteCache cache(patch);
    CHECK(cache.get(57) == a);
    CHECK(cache.get(57) == cache.get(57));
}

TEST_CASE("job manager: FIFO order and distinct ids") {
    const auto dir = svc::Harness::make_dir();
    {
        JobManager jobs({.data_dir = dir, .start_worker = false});
        const auto wav = svc::wav_bytes();
        const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(wav.data()), wav.size());
        const auto a = jobs.submit(bytes, {Tier::T15, 80, 1});
        const auto b = jobs.submit(bytes, {Tier::T15, 80, 2});
        CHECK(a != b);
        CHECK(jobs.status(a).state == JobState::Queued);
        CHECK_THROWS_AS(jobs.result(a), Conflict);
        CHECK_THROWS_AS(jobs.note(a, 60), Conflict);
        jobs.start();
        jobs.wait_idle();
        const auto sa = jobs.status(a), sb = jobs.status(b);
        REQUIRE(sa.state == JobState::Done);
        REQUIRE(sb.state == JobState::Done);
        CHECK(*sa.finished_ms <= *sb.started_ms);
        CHECK(*sa.started_ms <= *sa.finished_ms);

        // Atomic persistence: the final directory exists, no scratch left.
        CHECK(std::filesystem::exists(dir / a / "report.json"));
        CHECK(std::filesystem::exists(dir / a / "patch.preset"));
        CHECK(!std::filesystem::exists(dir / (a + ".partial")));

        CHECK_THROWS_AS(jobs.status("nope"), NotFound);
        CHECK_THROWS_AS(jobs.submit({}, {}), InputError);
        CHECK_THROWS_AS(jobs.submit(bytes, {Tier::T15, 10, 1}), InputError);
        const std::string junk = "definitely not audio";
        CHECK_THROWS_AS(
            jobs.submit({reinterpret_cast<const std::uint8_t*>(junk.data()), junk.size()}, {}), InputError);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("HTTP: create, poll, result, notes") {
    svc::Harness h;
    auto c = h.client();
    auto res = svc::post_job(c, svc::wav_bytes(), "80");
    REQUIRE(res);
    REQUIRE(res->status == 201);
    const auto id = json::parse(res->body).at("id").get<std::string>();
    CHECK(res->get_header_value("Location") == "/api/jobs/" + id);
    h.jobs.wait_idle();

    auto st = c.Get("/api/jobs/" + id);
    REQUIRE(st);
    CHECK(st->status == 200);
    const auto sj = json::parse(st->body);
    CHECK(sj.at("state") == "done");
    CHECK(sj.at("options").at("budget") == 80);
    CHECK(sj.at("options").at("tier") == "T15");
    CHECK(sj.at("progress").at("evaluations") == 80);

    auto rr = c.Get("/api/jobs/" + id + "/result");
    REQUIRE(rr);
    REQUIRE(rr->status == 200);
    const auto rj = json::parse(rr->body);
    CHECK(rj.at("report").at("schema_version") == kReportSchemaVersion);
    CHECK(rj.at("report").at("per_pitch_losses").size() == 1);
    PresetMetadata meta;
    const auto patch = parse_preset(rj.at("preset").get<std::string>(), &meta);
    CHECK(patch.tier() == Tier::T15);
    CHECK(meta.count("final_loss") == 1);

    for (int midi : {48, 57, 72}) {
        auto n = c.Get("/api/jobs/" + id + "/notes/" + std::to_string(midi));
        REQUIRE(n);
        REQUIRE(n->status == 200);
        CHECK(n->get_header_value("Content-Type") == "audio/wav");
        const auto audio = svc::decode(n->body);
        CHECK(detect_pitch(audio).f0 == doctest::Approx(midi_to_hz(midi)).epsilon(0.01));
        auto again = c.Get("/api/jobs/" + id + "/notes/" + std::to_string(midi));
        CHECK(again->body == n->body);
    }
    CHECK(c.Get("/api/jobs/" + id + "/notes/47")->status == 400);
    CHECK(c.Get("/api/jobs/" + id + "/notes/73")->status == 400);
    CHECK(c.Get("/api/jobs/" + id + "/notes/abc")->status == 400);
    CHECK(c.Get("/api/jobs/unknown")->status == 404);
    CHECK(c.Get("/api/jobs/unknown/result")->status == 404);
    CHECK(c.Get("/api/nothing")->status == 404);
    CHECK(c.Delete("/api/jobs/" + id)->status == 405);
}

TEST_CASE("HTTP: raw upload with query options") {
    svc::Harness h(false);
    auto c = h.client();
    auto res = c.Post("/api/jobs?tier=t18&budget=120&seed=4", svc::wav_bytes(), "audio/wav");
    REQUIRE(res);
    REQUIRE(res->status == 201);
    const auto id = json::parse(res->body).at("id").get<std::string>();
    const auto sj = json::parse(c.Get("/api/jobs/" + id)->body);
    CHECK(sj.at("state") == "queued");
    CHECK(sj.at("options").at("tier") == "T18");
    CHECK(sj.at("options").at("seed") == 4);
    CHECK(c.Get("/api/jobs/" + id + "/result")->status == 409);
    CHECK(c.Get("/api/jobs/" + id + "/notes/60")->status == 409);
}

TEST_CASE("HTTP: rejected uploads") {
    svc::Harness h(false);
    auto c = h.client();
    auto bad = svc::post_job(c, "not a wav file at all", "80");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    CHECK(json::parse(bad->body).at("error").get<std::string>().size() > 0);

    CHECK(svc::post_job(c, svc::wav_bytes(), "abc")->status == 400);
    CHECK(c.Post("/api/jobs", "", "audio/wav")->status == 400);
    httplib::MultipartFormDataItems no_file{{"budget", "80", "", ""}};
    CHECK(c.Post("/api/jobs", no_file)->status == 400);

    const std::string big(60u * 1024u * 1024u, 'x');
    auto huge = c.Post("/api/jobs", big, "audio/wav");
    REQUIRE(huge);
    CHECK(huge->status == 413);

    // The server keeps serving after a rejection.
    CHECK(svc::post_job(c, svc::wav_bytes(), "80")->status == 201);
}

TEST_CASE("failed job reports its diagnostic") {
    svc::Harness h;
    auto c = h.client();
    auto res = svc::post_job(c, svc::silent_wav(), "80");
    REQUIRE(res->status == 201);
    const auto id = json::parse(res->body).at("id").get<std::string>();
    h.jobs.wait_idle();
    const auto sj = json::parse(c.Get("/api/jobs/" + id)->body);
    CHECK(sj.at("state") == "failed");
    CHECK(sj.at("error").is_string());
    auto rr = c.Get("/api/jobs/" + id + "/result");
    CHECK(rr->status == 422);
    CHECK(json::parse(rr->body).at("error").get<std::string>().find("job failed") == 0);
    CHECK(c.Get("/api/jobs/" + id + "/notes/60")->status == 422);

    svc::Stream s(h.server.port(), id);
    const auto records = s.drain();
    REQUIRE(records.size() == 2);
    CHECK(records[0].at("type") == "snapshot");
    CHECK(records[1].at("type") == "terminal");
    CHECK(records[1].at("state") == "failed");
}

TEST_CASE("progress stream: snapshot first, late subscriber") {
    svc::Harness h(false);
    auto c = h.client();
    const auto id = json::parse(svc::post_job(c, svc::wav_bytes(), "400")->body).at("id").get<std::string>();

    svc::Stream live(h.server.port(), id);
    const auto first = live.next();
    REQUIRE(first);
    CHECK(first->at("type") == "snapshot");
    CHECK(first->at("state") == "queued");
    CHECK(first->at("latest").is_null());
    h.jobs.start();
    const auto rest = live.drain();
    REQUIRE(rest.size() == 11); // 400 / 40 generations + terminal
    for (std::size_t i = 0; i + 1 < rest.size(); ++i) {
        CHECK(rest[i].at("type") == "progress");
        CHECK(rest[i].at("generation") == i + 1);
        CHECK(rest[i].at("evaluations") == 40 * (i + 1));
    }
    CHECK(rest.back().at("type") == "terminal");
    CHECK(rest.back().at("state") == "done");

    svc::Stream late(h.server.port(), id);
    const auto replay = late.drain();
    REQUIRE(replay.size() == 2);
    CHECK(replay[0].at("type") == "snapshot");
    CHECK(replay[0].at("state") == "done");
    CHECK(replay[0].at("latest").at("evaluations") == 400);
    CHECK(replay[1].at("type") == "terminal");

    // Unknown job: the upgrade is refused.
    CHECK_THROWS(svc::Stream(h.server.port(), "missing"));
    CHECK(c.Get("/api/jobs/" + id + "/progress")->status == 426);
}

TEST_CASE("bundled preset endpoint") {
    const auto dir = svc::Harness::make_dir();
    auto p = svc::upload_patch();
    save_preset(p, dir / "best.preset", {{"round_trip_loss", "0.25"}});
    {
        svc::Harness h(false, dir / "best.preset");
        auto c = h.client();
        auto r = c.Get("/api/presets/best");
        REQUIRE(r);
        REQUIRE(r->status == 200);
        PresetMetadata meta;
        CHECK(parse_preset(r->body, &meta) == p);
        CHECK(meta.at("round_trip_loss") == "0.25");
        auto n = c.Get("/api/presets/best/notes/60");
        REQUIRE(n->status == 200);
        CHECK(rms(svc::decode(n->body).samples) > 0.01);
        CHECK(c.Get("/api/presets/best/notes/80")->status == 400);
    }
    {
        svc::Harness h(false);
        auto c = h.client();
        CHECK(c.Get("/api/presets/best")->status == 404);
    }
    std::filesystem::remove_all(dir);
}
