#pragma once

#include "timbrefit/service.hpp"
#include "timbrefit/synth.hpp"
#include "timbrefit/wav.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <httplib.h>
#include <json.hpp>

#include <filesystem>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace svc {

using json = nlohmann::json;

/// Server on an ephemeral port, run on a background thread.
struct Harness {
    std::filesystem::path dir;
    timbrefit::service::JobManager jobs;
    timbrefit::service::Server server;
    std::thread thread;

    explicit Harness(bool start_worker = true, std::optional<std::filesystem::path> preset = std::nullopt)
        : dir(make_dir()),
          jobs({.data_dir = dir, .start_worker = start_worker}),
          server(jobs, {"127.0.0.1", 0, std::move(preset)}),
          thread([this] { server.run(); }) {}

    ~Harness() {
        server.stop();
        thread.join();
        jobs.shutdown();
        std::error_code ec;
        std::filesystem::remove_all(dir, ec);
    }

    httplib::Client client() const {
        httplib::Client c("127.0.0.1", server.port());
        c.set_read_timeout(120, 0);
        c.set_write_timeout(120, 0);
        return c;
    }

    static std::filesystem::path make_dir() {
        std::random_device rd;
        auto d = std::filesystem::temp_directory_path() / ("timbrefit-svc-" + std::to_string(rd()));
        std::filesystem::create_directories(d);
        return d;
    }
};

/// Bright saw-leaning note used as upload material.
inline timbrefit::Patch upload_patch() {
    using timbrefit::ParamId;
    auto p = timbrefit::Patch::defaults(timbrefit::Tier::T28);
    p.set(ParamId::OscMixSaw, 0.8);
    p.set(ParamId::OscMixPulse, 0.1);
    p.set(ParamId::OscMixSine, 0.2);
    p.set(ParamId::Cutoff, 2500.0);
    p.set(ParamId::AmpAttack, 0.005);
    p.set(ParamId::AmpSustain, 0.7);
    p.set(ParamId::OutputGain, 0.6);
    return p;
}

inline std::string wav_bytes(double f0 = 220.0, double seconds = 0.3) {
    const auto bytes = timbrefit::encode_wav(timbrefit::render({upload_patch(), f0, seconds}));
    return std::string(bytes.begin(), bytes.end());
}

inline std::string silent_wav(double seconds = 0.5) {
    timbrefit::AudioBuffer b{std::vector<double>(static_cast<std::size_t>(seconds * 44100.0), 0.0), 44100.0};
    const auto bytes = timbrefit::encode_wav(b);
    return std::string(bytes.begin(), bytes.end());
}

/// POSTs a multipart upload; returns the response.
inline httplib::Result post_job(httplib::Client& c, const std::string& audio, const std::string& budget,
                                const std::string& tier = "t15", const std::string& seed = "1") {
    httplib::MultipartFormDataItems items{{"file", audio, "in.wav", "audio/wav"},
                                          {"tier", tier, "", ""},
                                          {"budget", budget, "", ""},
                                          {"seed", seed, "", ""}};
    return c.Post("/api/jobs", items);
}

/// Reads every text record of a progress stream until the server closes it.
class Stream {
public:
    Stream(unsigned short port, const std::string& job) : ws_(ioc_) {
        namespace net = boost::asio;
        net::ip::tcp::resolver resolver(ioc_);
        net::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
        ws_.handshake("127.0.0.1", "/api/jobs/" + job + "/progress");
    }

    /// Next record, or nullopt once the stream is closed.
    std::optional<json> next() {
        boost::beast::flat_buffer buf;
        boost::beast::error_code ec;
        ws_.read(buf, ec);
        if (ec) return std::nullopt;
        return json::parse(boost::beast::buffers_to_string(buf.data()));
    }

    std::vector<json> drain() {
        std::vector<json> out;
        while (auto r = next()) out.push_back(std::move(*r));
        return out;
    }

private:
    boost::asio::io_context ioc_;
    boost::beast::websocket::stream<boost::asio::ip::tcp::socket> ws_;
};

inline timbrefit::AudioBuffer decode(const std::string& body) {
    return timbrefit::load_audio_bytes(
        std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
}

} // namespace svc
