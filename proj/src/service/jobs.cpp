#include "timbrefit/error.hpp"
#include "timbrefit/service.hpp"
#include "timbrefit/synth.hpp"
#include "timbrefit/wav.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace timbrefit::service {
namespace {

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

constexpr std::size_t kMaxBudget = 1000000;

} // namespace

struct JobManager::Job {
    JobStatus status;
    AudioBuffer audio;
    std::optional<JobResult> result;
    std::map<int, std::vector<std::uint8_t>> notes;
    std::vector<std::shared_ptr<Channel>> subscribers;
};

void Channel::push(std::string record) {
    {
        std::lock_guard lock(mu_);
        if (closed_) return;
        items_.push_back(std::move(record));
    }
    cv_.notify_one();
}

void Channel::close() {
    {
        std::lock_guard lock(mu_);
        closed_ = true;
    }
    cv_.notify_all();
}

Channel::Pop Channel::pop(std::string& out, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return closed_ || !items_.empty(); });
    if (!items_.empty()) {
        out = std::move(items_.front());
        items_.pop_front();
        return Pop::Item;
    }
    return closed_ ? Pop::Closed : Pop::Timeout;
}

JobManager::JobManager(ManagerConfig config) : config_(std::move(config)), id_salt_(std::random_device{}()) {
    std::filesystem::create_directories(config_.data_dir);
    if (config_.start_worker) start();
}

JobManager::~JobManager() { shutdown(); }

void JobManager::start() {
    std::lock_guard lock(mu_);
    if (worker_.joinable() || stopping_) return;
    worker_ = std::thread([this] { worker_loop(); });
}

void JobManager::shutdown() {
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
        for (auto& [id, job] : jobs_) {
            for (auto& ch : job->subscribers) ch->close();
            job->subscribers.clear();
        }
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
    idle_cv_.notify_all();
}

void JobManager::wait_idle() {
    std::unique_lock lock(mu_);
    idle_cv_.wait(lock, [&] { return stopping_ || (queue_.empty() && !busy_); });
}

std::string JobManager::next_id() {
    std::mt19937_64 mix(id_salt_ ^ (++counter_ * 0x9E3779B97F4A7C15ull));
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04llx%012llx", static_cast<unsigned long long>(counter_ & 0xffff),
                  static_cast<unsigned long long>(mix() & 0xffffffffffffull));
    return buf;
}

std::string JobManager::submit(std::span<const std::uint8_t> audio, const JobOptions& options) {
    if (audio.size() > kMaxUploadBytes) throw InputError("upload exceeds the 50 MB limit");
    if (audio.empty()) throw InputError("empty upload");
    if (options.budget < CmaConfig{}.lambda || options.budget > kMaxBudget) {
        throw InputError("budget must lie in [" + std::to_string(CmaConfig{}.lambda) + ", " +
                         std::to_string(kMaxBudget) + "]");
    }
    auto job = std::make_unique<Job>();
    job->audio = load_audio_bytes(audio);
    job->status.options = options;
    job->status.created_ms = now_ms();

    std::lock_guard lock(mu_);
    if (stopping_) throw Conflict("service is shutting down");
    job->status.id = next_id();
    const auto id = job->status.id;
    queue_.push_back(job.get());
    jobs_.emplace(id, std::move(job));
    cv_.notify_all();
    return id;
}

JobManager::Job& JobManager::find(const std::string& id) const {
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) throw NotFound("unknown job '" + id + "'");
    return *it->second;
}

JobStatus JobManager::status(const std::string& id) const {
    std::lock_guard lock(mu_);
    return find(id).status;
}

JobResult JobManager::result(const std::string& id) const {
    std::lock_guard lock(mu_);
    const auto& job = find(id);
    switch (job.status.state) {
    case JobState::Done: return *job.result;
    case JobState::Failed: throw JobFailed(job.status.error);
    default: throw Conflict("job '" + id + "' is " + std::string(state_name(job.status.state)));
    }
}

std::vector<std::uint8_t> JobManager::note(const std::string& id, int midi) {
    Patch patch;
    {
        std::lock_guard lock(mu_);
        auto& job = find(id);
        if (job.status.state == JobState::Failed) throw JobFailed(job.status.error);
        if (job.status.state != JobState::Done) {
            throw Conflict("job '" + id + "' is " + std::string(state_name(job.status.state)));
        }
        if (auto it = job.notes.find(midi); it != job.notes.end()) return it->second;
        patch = job.result->patch;
    }
    auto wav = render_note_wav(patch, midi);
    std::lock_guard lock(mu_);
    return find(id).notes.emplace(midi, std::move(wav)).first->second;
}

std::shared_ptr<Channel> JobManager::subscribe(const std::string& id) {
    auto ch = std::make_shared<Channel>();
    std::lock_guard lock(mu_);
    auto& job = find(id);
    ch->push(snapshot_json(job.status));
    if (job.status.state == JobState::Done || job.status.state == JobState::Failed) {
        ch->push(terminal_json(job.status));
        ch->close();
    } else if (stopping_) {
        ch->close();
    } else {
        job.subscribers.push_back(ch);
    }
    return ch;
}

void JobManager::worker_loop() {
    while (true) {
        Job* job = nullptr;
        {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (stopping_) return;
            job = queue_.front();
            queue_.pop_front();
            busy_ = true;
            job->status.state = JobState::Running;
            job->status.started_ms = now_ms();
        }
        run_job(*job);
        {
            std::lock_guard lock(mu_);
            busy_ = false;
        }
        idle_cv_.notify_all();
    }
}

void JobManager::run_job(Job& job) {
    const auto& opts = job.status.options;
    MatchOptions mo;
    mo.tier = opts.tier;
    mo.cma.budget = opts.budget;
    mo.cma.seed = opts.seed;

    auto publish = [&](std::size_t generation, const TraceSample& s) {
        ProgressEvent e{generation, s.evaluations, s.best_loss, s.wall_ms,
                        static_cast<double>(s.evaluations) / static_cast<double>(opts.budget)};
        std::lock_guard lock(mu_);
        job.status.latest = e;
        const auto record = progress_json(job.status.id, e);
        for (auto& ch : job.subscribers) ch->push(record);
    };

    std::optional<JobResult> result;
    std::string error;
    try {
        auto outcome = match_audio(job.audio, mo, publish);
        // Persist under a scratch name, then publish the directory in one
        // rename so a reader never sees a half-written result.
        const auto final_dir = config_.data_dir / job.status.id;
        auto scratch = final_dir;
        scratch += ".partial";
        std::filesystem::remove_all(scratch);
        write_outputs(outcome, scratch);
        std::filesystem::remove_all(final_dir);
        std::filesystem::rename(scratch, final_dir);

        std::ostringstream loss;
        loss.precision(17);
        loss << outcome.report.final_loss;
        result = JobResult{report_to_json(outcome.report),
                           format_preset(outcome.report.patch, {{"final_loss", loss.str()}, {"job", job.status.id}}),
                           outcome.report.patch};
    } catch (const std::exception& e) {
        error = e.what();
    }

    std::lock_guard lock(mu_);
    job.audio = {};
    job.status.finished_ms = now_ms();
    if (result) {
        job.result = std::move(result);
        job.status.state = JobState::Done;
    } else {
        job.status.state = JobState::Failed;
        job.status.error = error.empty() ? "unknown failure" : error;
    }
    const auto record = terminal_json(job.status);
    for (auto& ch : job.subscribers) {
        ch->push(record);
        ch->close();
    }
    job.subscribers.clear();
}

std::vector<std::uint8_t> render_note_wav(const Patch& patch, int midi) {
    if (midi < kKeyboardLowMidi || midi > kKeyboardHighMidi) {
        throw InputError("midi note " + std::to_string(midi) + " outside the keyboard range " +
                         std::to_string(kKeyboardLowMidi) + ".." + std::to_string(kKeyboardHighMidi));
    }
    // The global detune only transposes the whole patch, so it is taken back
    // out here and each key sounds at its own frequency.
    const double f0 = midi_to_hz(midi) * std::exp2(-patch.get(ParamId::Detune) / 12.0);
    return encode_wav(render({patch, f0, kNoteSeconds}));
}

std::vector<std::uint8_t> NoteCache::get(int midi) {
    {
        std::lock_guard lock(mu_);
        if (auto it = cache_.find(midi); it != cache_.end()) return it->second;
    }
    auto wav = render_note_wav(patch_, midi);
    std::lock_guard lock(mu_);
    return cache_.emplace(midi, std::move(wav)).first->second;
}

} // namespace timbrefit::service
