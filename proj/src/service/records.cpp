#include "timbrefit/error.hpp"
#include "timbrefit/service.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>

namespace timbrefit::service {
namespace {

using json = nlohmann::json;

json event_object(const ProgressEvent& e) {
    return {{"generation", e.generation},
            {"evaluations", e.evaluations},
            {"best_loss", e.best_loss},
            {"elapsed_ms", e.elapsed_ms},
            {"progress_fraction", e.progress_fraction}};
}

json header(std::string_view type) { return {{"schema_version", kApiSchemaVersion}, {"type", type}}; }

json optional_ms(const std::optional<std::int64_t>& v) { return v ? json(*v) : json(nullptr); }

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
           });
}

/// Value of `key=` inside a header such as `form-data; name="file"`.
std::string header_param(std::string_view header, std::string_view key) {
    std::size_t pos = 0;
    while (pos < header.size()) {
        auto end = header.find(';', pos);
        if (end == std::string_view::npos) end = header.size();
        const auto item = trim(header.substr(pos, end - pos));
        const auto eq = item.find('=');
        if (eq != std::string_view::npos && iequals(trim(item.substr(0, eq)), key)) {
            auto v = trim(item.substr(eq + 1));
            if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
            return std::string(v);
        }
        pos = end + 1;
    }
    return {};
}

template <typename T>
T parse_number(const std::string& text, const char* what) {
    T value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) throw InputError(std::string("invalid ") + what + ": '" + text + "'");
    return value;
}

} // namespace

std::string_view state_name(JobState s) {
    switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
    }
    return "unknown";
}

std::string status_json(const JobStatus& s) {
    auto j = header("job");
    j["id"] = s.id;
    j["state"] = state_name(s.state);
    j["options"] = {{"tier", tier_label(s.options.tier)}, {"budget", s.options.budget}, {"seed", s.options.seed}};
    j["created_ms"] = s.created_ms;
    j["started_ms"] = optional_ms(s.started_ms);
    j["finished_ms"] = optional_ms(s.finished_ms);
    j["progress"] = s.latest ? event_object(*s.latest) : json(nullptr);
    j["error"] = s.error.empty() ? json(nullptr) : json(s.error);
    return j.dump();
}

std::string progress_json(const std::string& job, const ProgressEvent& e) {
    auto j = header("progress");
    j["job"] = job;
    j.update(event_object(e));
    return j.dump();
}

std::string snapshot_json(const JobStatus& s) {
    auto j = header("snapshot");
    j["job"] = s.id;
    j["state"] = state_name(s.state);
    j["budget"] = s.options.budget;
    j["latest"] = s.latest ? event_object(*s.latest) : json(nullptr);
    return j.dump();
}

std::string terminal_json(const JobStatus& s) {
    auto j = header("terminal");
    j["job"] = s.id;
    j["state"] = state_name(s.state);
    j["latest"] = s.latest ? event_object(*s.latest) : json(nullptr);
    j["error"] = s.error.empty() ? json(nullptr) : json(s.error);
    return j.dump();
}

std::string result_json(const std::string& job, const JobResult& r) {
    auto j = header("result");
    j["job"] = job;
    j["report"] = json::parse(r.report_json);
    j["preset"] = r.preset;
    return j.dump();
}

std::string created_json(const std::string& job) {
    auto j = header("created");
    j["id"] = job;
    return j.dump();
}

std::string error_json(const std::string& message) {
    auto j = header("error");
    j["error"] = message;
    return j.dump();
}

std::vector<MultipartPart> parse_multipart(std::string_view content_type, std::string_view body) {
    const auto boundary = header_param(content_type, "boundary");
    if (boundary.empty()) throw InputError("multipart body without a boundary");
    const std::string delim = "--" + boundary;

    std::vector<MultipartPart> parts;
    auto pos = body.find(delim);
    if (pos == std::string_view::npos) throw InputError("multipart boundary not found in body");
    pos += delim.size();
    while (true) {
        if (body.substr(pos, 2) == "--") return parts; // closing delimiter
        if (body.substr(pos, 2) != "\r\n") throw InputError("malformed multipart delimiter line");
        pos += 2;
        const auto head_end = body.find("\r\n\r\n", pos);
        if (head_end == std::string_view::npos) throw InputError("multipart part without a header block");
        MultipartPart part;
        auto headers = body.substr(pos, head_end - pos);
        while (!headers.empty()) {
            auto eol = headers.find("\r\n");
            const auto line = headers.substr(0, eol);
            headers = eol == std::string_view::npos ? std::string_view{} : headers.substr(eol + 2);
            const auto colon = line.find(':');
            if (colon == std::string_view::npos) continue;
            const auto key = trim(line.substr(0, colon));
            const auto value = trim(line.substr(colon + 1));
            if (iequals(key, "content-disposition")) {
                part.name = header_param(value, "name");
                part.filename = header_param(value, "filename");
            } else if (iequals(key, "content-type")) {
                part.content_type = std::string(value);
            }
        }
        const auto data_begin = head_end + 4;
        const auto next = body.find("\r\n" + delim, data_begin);
        if (next == std::string_view::npos) throw InputError("unterminated multipart part");
        part.data = std::string(body.substr(data_begin, next - data_begin));
        parts.push_back(std::move(part));
        pos = next + 2 + delim.size();
    }
}

JobOptions parse_job_options(const std::map<std::string, std::string>& fields) {
    JobOptions o;
    if (auto it = fields.find("tier"); it != fields.end() && !it->second.empty()) o.tier = parse_tier(it->second);
    if (auto it = fields.find("budget"); it != fields.end() && !it->second.empty()) {
        o.budget = parse_number<std::size_t>(it->second, "budget");
    }
    if (auto it = fields.find("seed"); it != fields.end() && !it->second.empty()) {
        o.seed = parse_number<std::uint64_t>(it->second, "seed");
    }
    return o;
}

} // namespace timbrefit::service
