#pragma once

#include "timbrefit/params.hpp"
#include "timbrefit/pipeline.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace timbrefit::service {

inline constexpr int kApiSchemaVersion = 1;
inline constexpr std::size_t kMaxUploadBytes = 50u * 1024u * 1024u;
inline constexpr int kKeyboardLowMidi = 48;
inline constexpr int kKeyboardHighMidi = 72;
inline constexpr double kNoteSeconds = 1.0;

class NotFound : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The job exists but is not in a state that allows the request.
class Conflict : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// result() of a job that failed; what() is the job's diagnostic.
class JobFailed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class JobState { Queued, Running, Done, Failed };
std::string_view state_name(JobState s);

struct JobOptions {
    Tier tier = Tier::T28;
    std::size_t budget = kFastBudget;
    std::uint64_t seed = 1;
};

struct ProgressEvent {
    std::size_t generation = 0;
    std::size_t evaluations = 0;
    double best_loss = 0.0;
    std::int64_t elapsed_ms = 0;
    double progress_fraction = 0.0;
};

struct JobStatus {
    std::string id;
    JobState state = JobState::Queued;
    JobOptions options;
    std::int64_t created_ms = 0;
    std::optional<std::int64_t> started_ms, finished_ms;
    std::optional<ProgressEvent> latest;
    std::string error;
};

struct JobResult {
    std::string report_json; // MatchReport, see report_to_json
    std::string preset;      // preset file text
    Patch patch;
};

/// Structured text records. Every record carries schema_version and type.
std::string status_json(const JobStatus& s);
std::string progress_json(const std::string& job, const ProgressEvent& e);
std::string snapshot_json(const JobStatus& s);
std::string terminal_json(const JobStatus& s);
std::string result_json(const std::string& job, const JobResult& r);
std::string created_json(const std::string& job);
std::string error_json(const std::string& message);

/// Blocking single-consumer queue of records for one subscriber.
class Channel {
public:
    enum class Pop { Item, Timeout, Closed };

    void push(std::string record);
    void close();
    Pop pop(std::string& out, std::chrono::milliseconds timeout);

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::string> items_;
    bool closed_ = false;
};

struct ManagerConfig {
    std::filesystem::path data_dir = "timbrefit-jobs";
    bool start_worker = true;
};

/// Job registry with one FIFO worker. Jobs run one at a time; candidate
/// evaluation inside a job uses the shared thread pool.
class JobManager {
public:
    explicit JobManager(ManagerConfig config = {});
    ~JobManager();
    JobManager(const JobManager&) = delete;
    JobManager& operator=(const JobManager&) = delete;

    /// Decodes the upload up front; throws InputError if it is oversized,
    /// undecodable or the options are invalid.
    std::string submit(std::span<const std::uint8_t> audio, const JobOptions& options);

    void start();
    /// Stops the worker after the current job and closes every subscriber.
    void shutdown();
    /// Blocks until the queue is empty and the worker is idle.
    void wait_idle();

    JobStatus status(const std::string& id) const;
    /// Conflict while queued or running, JobFailed after a failure.
    JobResult result(const std::string& id) const;
    /// 1 s of the matched patch at `midi` as 16-bit WAV bytes, cached.
    /// Same errors as result().
    std::vector<std::uint8_t> note(const std::string& id, int midi);

    /// The first record is a snapshot of the job; a finished job's channel
    /// then holds the terminal record and is closed.
    std::shared_ptr<Channel> subscribe(const std::string& id);

private:
    struct Job;

    void worker_loop();
    void run_job(Job& job);
    Job& find(const std::string& id) const;
    std::string next_id();

    ManagerConfig config_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable idle_cv_;
    std::map<std::string, std::unique_ptr<Job>> jobs_;
    std::deque<Job*> queue_;
    bool busy_ = false;
    bool stopping_ = false;
    std::uint64_t counter_ = 0;
    std::uint64_t id_salt_;
    std::thread worker_;
};

/// Renders keyboard notes for a fixed patch (the bundled preset).
class NoteCache {
public:
    explicit NoteCache(Patch patch) : patch_(std::move(patch)) {}
    std::vector<std::uint8_t> get(int midi);
    const Patch& patch() const { return patch_; }

private:
    Patch patch_;
    std::mutex mu_;
    std::map<int, std::vector<std::uint8_t>> cache_;
};

/// One key of the keyboard, tuned to the note regardless of the patch's
/// detune. Throws InputError outside 48..72.
std::vector<std::uint8_t> render_note_wav(const Patch& patch, int midi);

struct MultipartPart {
    std::string name;
    std::string filename;
    std::string content_type;
    std::string data;
};

/// multipart/form-data body split into parts. Throws InputError when the
/// boundary is missing or the body is malformed.
std::vector<MultipartPart> parse_multipart(std::string_view content_type, std::string_view body);

/// tier / budget / seed from string fields; unknown keys are ignored.
JobOptions parse_job_options(const std::map<std::string, std::string>& fields);

struct ServerConfig {
    std::string address = "127.0.0.1";
    unsigned short port = 8080;
    std::optional<std::filesystem::path> best_preset;
};

/// HTTP + WebSocket front end over a JobManager.
class Server {
public:
    Server(JobManager& jobs, ServerConfig config);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Bound port; valid after construction (port 0 picks a free one).
    unsigned short port() const;
    /// Accepts connections until stop().
    void run();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace timbrefit::service
