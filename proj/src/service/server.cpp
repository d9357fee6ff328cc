#include "timbrefit/error.hpp"
#include "timbrefit/service.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <sys/socket.h>

#include <atomic>
#include <charconv>
#include <fstream>
#include <limits>
#include <list>
#include <set>
#include <sstream>

namespace timbrefit::service {
namespace {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

using Request = http::request<http::string_body>;
using Response = http::response<http::string_body>;

// Room for multipart framing around a maximal upload.
constexpr std::size_t kBodyLimit = kMaxUploadBytes + 64 * 1024;

struct HttpError {
    http::status status;
    std::string message;
};

std::vector<std::string_view> split_path(std::string_view path) {
    std::vector<std::string_view> out;
    while (!path.empty()) {
        if (path.front() == '/') {
            path.remove_prefix(1);
            continue;
        }
        const auto slash = path.find('/');
        out.push_back(path.substr(0, slash));
        path = slash == std::string_view::npos ? std::string_view{} : path.substr(slash);
    }
    return out;
}

std::string percent_decode(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '+') {
            out += ' ';
        } else if (s[i] == '%' && i + 2 < s.size()) {
            int v = 0;
            const auto [p, ec] = std::from_chars(s.data() + i + 1, s.data() + i + 3, v, 16);
            if (ec == std::errc() && p == s.data() + i + 3) {
                out += static_cast<char>(v);
                i += 2;
            } else {
                out += s[i];
            }
        } else {
            out += s[i];
        }
    }
    return out;
}

std::map<std::string, std::string> parse_query(std::string_view q) {
    std::map<std::string, std::string> out;
    while (!q.empty()) {
        const auto amp = q.find('&');
        const auto item = q.substr(0, amp);
        const auto eq = item.find('=');
        if (!item.empty()) {
            out[percent_decode(item.substr(0, eq))] =
                eq == std::string_view::npos ? std::string{} : percent_decode(item.substr(eq + 1));
        }
        q = amp == std::string_view::npos ? std::string_view{} : q.substr(amp + 1);
    }
    return out;
}

int parse_midi(std::string_view s) {
    int v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw InputError("midi note must be an integer");
    return v;
}

Response make_response(const Request& req, http::status status, std::string body, std::string_view type) {
    Response res{status, req.version()};
    res.set(http::field::server, "timbrefit");
    res.set(http::field::content_type, beast::string_view(type.data(), type.size()));
    res.set(http::field::access_control_allow_origin, "*");
    res.keep_alive(req.keep_alive());
    res.body() = std::move(body);
    res.prepare_payload();
    return res;
}

Response json_response(const Request& req, http::status status, std::string body) {
    return make_response(req, status, std::move(body), "application/json");
}

Response wav_response(const Request& req, const std::vector<std::uint8_t>& bytes) {
    return make_response(req, http::status::ok, std::string(bytes.begin(), bytes.end()), "audio/wav");
}

} // namespace

struct Server::Impl {
    JobManager& jobs;
    ServerConfig config;
    std::optional<NoteCache> best;
    std::string best_text;

    net::io_context ioc;
    tcp::acceptor acceptor{ioc};
    std::atomic<bool> stopping{false};

    struct Session {
        std::thread thread;
        std::shared_ptr<std::atomic<bool>> done;
    };
    std::mutex mu;
    std::list<Session> sessions;
    std::set<std::shared_ptr<tcp::socket>> open;

    Impl(JobManager& j, ServerConfig c) : jobs(j), config(std::move(c)) {
        if (config.best_preset) {
            std::ifstream in(*config.best_preset, std::ios::binary);
            if (!in) throw InputError("cannot read preset " + config.best_preset->string());
            std::ostringstream ss;
            ss << in.rdbuf();
            best_text = ss.str();
            best.emplace(parse_preset(best_text));
        }
        const tcp::endpoint ep{net::ip::make_address(config.address), config.port};
        acceptor.open(ep.protocol());
        acceptor.set_option(net::socket_base::reuse_address(true));
        acceptor.bind(ep);
        acceptor.listen();
    }

    void reap() {
        for (auto it = sessions.begin(); it != sessions.end();) {
            if (*it->done) {
                it->thread.join();
                it = sessions.erase(it);
            } else {
                ++it;
            }
        }
    }

    void do_accept() {
        acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
            if (ec || stopping) return;
            auto sock = std::make_shared<tcp::socket>(std::move(socket));
            {
                std::lock_guard lock(mu);
                reap();
                auto done = std::make_shared<std::atomic<bool>>(false);
                open.insert(sock);
                sessions.push_back({std::thread([this, sock, done] {
                                        try {
                                            session(*sock);
                                        } catch (const std::exception&) {
                                            // Peer went away mid-exchange.
                                        }
                                        std::lock_guard lock(mu);
                                        open.erase(sock);
                                        *done = true;
                                    }),
                                    done});
            }
            do_accept();
        });
    }

    void session(tcp::socket& sock) {
        beast::flat_buffer buffer;
        while (!stopping) {
            http::request_parser<http::string_body> parser;
            // The limit is applied after the header so an oversized upload
            // still gets a 413 instead of a dropped connection.
            parser.body_limit(std::numeric_limits<std::uint64_t>::max());
            beast::error_code ec;
            http::read_header(sock, buffer, parser, ec);
            if (ec) return;

            if (const auto len = parser.content_length(); len && *len > kBodyLimit) {
                drain(sock, buffer, *len);
                send(sock, json_response(parser.get(), http::status::payload_too_large,
                                         error_json("upload exceeds the 50 MB limit")), true);
                return;
            }
            if (websocket::is_upgrade(parser.get())) {
                progress_socket(sock, parser.release());
                return;
            }
            parser.body_limit(kBodyLimit);
            http::read(sock, buffer, parser, ec);
            if (ec == http::error::body_limit) {
                send(sock, json_response(parser.get(), http::status::payload_too_large,
                                         error_json("upload exceeds the 50 MB limit")), true);
                return;
            }
            if (ec) return;
            const auto req = parser.release();
            auto res = handle(req);
            const bool close = !res.keep_alive();
            send(sock, std::move(res), close);
            if (close) return;
        }
    }

    static void drain(tcp::socket& sock, beast::flat_buffer& buffer, std::uint64_t length) {
        std::uint64_t remaining = length > buffer.size() ? length - buffer.size() : 0;
        buffer.consume(buffer.size());
        std::vector<char> sink(64 * 1024);
        beast::error_code ec;
        while (remaining > 0 && !ec) {
            const auto want = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, sink.size()));
            remaining -= sock.read_some(net::buffer(sink.data(), want), ec);
        }
    }

    static void send(tcp::socket& sock, Response res, bool close) {
        if (close) res.keep_alive(false);
        beast::error_code ec;
        http::write(sock, res, ec);
        if (close) sock.shutdown(tcp::socket::shutdown_send, ec);
    }

    Response handle(const Request& req) {
        try {
            return route(req);
        } catch (const HttpError& e) {
            return json_response(req, e.status, error_json(e.message));
        } catch (const InputError& e) {
            return json_response(req, http::status::bad_request, error_json(e.what()));
        } catch (const NotFound& e) {
            return json_response(req, http::status::not_found, error_json(e.what()));
        } catch (const Conflict& e) {
            return json_response(req, http::status::conflict, error_json(e.what()));
        } catch (const JobFailed& e) {
            return json_response(req, http::status::unprocessable_entity,
                                 error_json(std::string("job failed: ") + e.what()));
        } catch (const std::exception& e) {
            return json_response(req, http::status::internal_server_error, error_json(e.what()));
        }
    }

    Response route(const Request& req) {
        const std::string_view target(req.target().data(), req.target().size());
        const auto q = target.find('?');
        const auto parts = split_path(target.substr(0, q));
        const auto query = q == std::string_view::npos ? std::map<std::string, std::string>{}
                                                         : parse_query(target.substr(q + 1));
        const auto method = req.method();

        if (method == http::verb::options) {
            auto res = make_response(req, http::status::no_content, "", "text/plain");
            res.set(http::field::access_control_allow_methods, "GET, POST, OPTIONS");
            res.set(http::field::access_control_allow_headers, "Content-Type");
            return res;
        }
        if (parts.size() < 2 || parts[0] != "api") throw HttpError{http::status::not_found, "no such endpoint"};

        auto require = [&](http::verb v) {
            if (method != v) throw HttpError{http::status::method_not_allowed, "method not allowed"};
        };

        if (parts[1] == "jobs") {
            if (parts.size() == 2) {
                require(http::verb::post);
                return create_job(req, query);
            }
            require(http::verb::get);
            const std::string id(parts[2]);
            if (parts.size() == 3) return json_response(req, http::status::ok, status_json(jobs.status(id)));
            if (parts.size() == 4 && parts[3] == "result") {
                return json_response(req, http::status::ok, result_json(id, jobs.result(id)));
            }
            if (parts.size() == 5 && parts[3] == "notes") return wav_response(req, jobs.note(id, parse_midi(parts[4])));
            if (parts.size() == 4 && parts[3] == "progress") {
                throw HttpError{http::status::upgrade_required, "progress is served over WebSocket"};
            }
        } else if (parts[1] == "presets" && parts.size() >= 3 && parts[2] == "best") {
            require(http::verb::get);
            if (!best) throw HttpError{http::status::not_found, "no bundled preset configured"};
            if (parts.size() == 3) return make_response(req, http::status::ok, best_text, "text/plain; charset=utf-8");
            if (parts.size() == 5 && parts[3] == "notes") return wav_response(req, best->get(parse_midi(parts[4])));
        }
        throw HttpError{http::status::not_found, "no such endpoint"};
    }

    Response create_job(const Request& req, std::map<std::string, std::string> fields) {
        const std::string_view type(req[http::field::content_type].data(), req[http::field::content_type].size());
        std::string_view audio;
        std::vector<MultipartPart> parts;
        if (type.rfind("multipart/form-data", 0) == 0) {
            parts = parse_multipart(type, req.body());
            const MultipartPart* file = nullptr;
            for (const auto& p : parts) {
                if (p.name == "file" || (!file && !p.filename.empty())) {
                    file = &p;
                } else {
                    fields[p.name] = p.data;
                }
            }
            if (!file) throw InputError("multipart upload has no 'file' part");
            audio = file->data;
        } else {
            audio = req.body();
        }
        const auto* bytes = reinterpret_cast<const std::uint8_t*>(audio.data());
        const auto id = jobs.submit({bytes, audio.size()}, parse_job_options(fields));
        auto res = json_response(req, http::status::created, created_json(id));
        res.set(http::field::location, "/api/jobs/" + id);
        return res;
    }

    void progress_socket(tcp::socket& sock, Request req) {
        const std::string_view target(req.target().data(), req.target().size());
        const auto parts = split_path(target.substr(0, target.find('?')));
        std::shared_ptr<Channel> channel;
        try {
            if (parts.size() != 4 || parts[0] != "api" || parts[1] != "jobs" || parts[3] != "progress") {
                throw NotFound("no such stream");
            }
            channel = jobs.subscribe(std::string(parts[2]));
        } catch (const NotFound& e) {
            send(sock, json_response(req, http::status::not_found, error_json(e.what())), true);
            return;
        }
        websocket::stream<tcp::socket&> ws(sock);
        ws.accept(req);
        ws.text(true);
        std::string record;
        while (true) {
            switch (channel->pop(record, std::chrono::milliseconds(200))) {
            case Channel::Pop::Item: ws.write(net::buffer(record)); break;
            case Channel::Pop::Closed: {
                beast::error_code ec;
                ws.close(websocket::close_code::normal, ec);
                return;
            }
            case Channel::Pop::Timeout:
                if (stopping) {
                    beast::error_code ec;
                    ws.close(websocket::close_code::going_away, ec);
                    return;
                }
                break;
            }
        }
    }
};

Server::Server(JobManager& jobs, ServerConfig config) : impl_(std::make_unique<Impl>(jobs, std::move(config))) {}

Server::~Server() {
    stop();
    std::lock_guard lock(impl_->mu);
    for (auto& s : impl_->sessions) {
        if (s.thread.joinable()) s.thread.join();
    }
}

unsigned short Server::port() const { return impl_->acceptor.local_endpoint().port(); }

void Server::run() {
    impl_->do_accept();
    impl_->ioc.run();
    std::list<Impl::Session> sessions;
    {
        std::lock_guard lock(impl_->mu);
        sessions.swap(impl_->sessions);
    }
    for (auto& s : sessions) s.thread.join();
}

void Server::stop() {
    if (impl_->stopping.exchange(true)) return;
    {
        std::lock_guard lock(impl_->mu);
        for (const auto& sock : impl_->open) ::shutdown(sock->native_handle(), SHUT_RD);
    }
    impl_->ioc.stop();
}

} // namespace timbrefit::service
