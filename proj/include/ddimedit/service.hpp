#pragma once

// Edit job service: a bounded queue drained by one pipeline worker, jobs
// persisted under <out_dir>/jobs/<id>/, and an HTTP front end.
//
//   POST /edits               multipart: image (PNG), instruction, optional
//                             config (JSON object), before_caption,
//                             after_caption, image_id; Idempotency-Key header
//   GET  /edits/{id}          job view
//   POST /edits/{id}/rerun    {"weight": w}
//   GET  /images/{id}         PNG; "<run>" is the output, "<run>-input" the input
//   GET  /health
//   GET  /config

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ddimedit/editor.hpp"
#include "ddimedit/errors.hpp"

namespace ddimedit {

enum class JobStatus { queued, captioning, inverting, generating, done, failed };
std::string to_string(JobStatus s);
JobStatus job_status_from_string(const std::string& s);
// Position along queued -> captioning -> inverting -> generating -> done.
int job_status_rank(JobStatus s);

struct ServiceConfig {
    std::filesystem::path out_dir = "out";
    std::size_t max_upload_bytes = 8u << 20;
    std::size_t queue_capacity = 16;
    int retry_after_s = 5;
    EditConfig defaults;
    std::vector<double> weight_grid{0.75, 1.0, 1.25};
};

struct EditJob {
    std::string job_id;
    std::uint64_t seq = 0;      // submission order
    std::string kind = "edit";  // edit | rerun
    std::string root_job;       // the edit job a rerun descends from
    std::string parent_job;
    JobStatus status = JobStatus::queued;
    std::vector<std::string> status_history;  // every status entered, in order
    std::string stage;  // fine-grained editor stage
    int stage_step = 0;
    int stage_total = 0;
    std::string created_at;
    std::string updated_at;
    std::string idempotency_key;
    // request
    std::string instruction;
    std::string image_id;
    CaptionOverrides overrides;
    EditConfig config;
    // result
    std::string manifest_id;
    std::map<std::string, double> timings;
    nlohmann::json result;
    nlohmann::json error;  // {kind, stage, message}
};

nlohmann::json to_json(const EditJob& j);
EditJob edit_job_from_json(const nlohmann::json& j);

// Error with an HTTP status, raised for request-level failures.
class ServiceError : public Error {
public:
    ServiceError(int http_status, std::string kind, const std::string& what, std::string hint = {})
        : Error(std::move(kind), what), http_status_(http_status), hint_(std::move(hint)) {}
    int http_status() const noexcept { return http_status_; }
    const std::string& hint() const noexcept { return hint_; }
    int retry_after_s = 0;

private:
    int http_status_;
    std::string hint_;
};

struct SubmitRequest {
    std::vector<std::uint8_t> image_png;
    std::string instruction;
    std::string image_id;
    nlohmann::json config_overrides = nlohmann::json::object();
    CaptionOverrides overrides;
    std::string idempotency_key;
};

struct SubmitOutcome {
    std::string job_id;
    bool created = true;  // false: an existing job answered the request
};

class EditService {
public:
    EditService(AdapterSet adapters, ServiceConfig cfg);
    ~EditService();
    EditService(const EditService&) = delete;
    EditService& operator=(const EditService&) = delete;

    // Starts the worker. Queued jobs found on disk are re-enqueued; jobs
    // caught mid-pipeline by a restart are marked failed (kind "interrupted").
    void start();
    // Finishes the running job, then stops; queued jobs stay queued on disk.
    void stop();

    // ServiceError: 400 validation, 413 too large, 429 queue full.
    SubmitOutcome submit(const SubmitRequest& req);
    // ServiceError: 404 unknown, 409 not finished or artifacts gone.
    // A weight already produced for the same edit returns that job.
    SubmitOutcome rerun(const std::string& job_id, double weight);
    EditJob job(const std::string& job_id) const;  // 404 when unknown
    std::vector<std::uint8_t> image(const std::string& image_id) const;

    nlohmann::json job_view(const std::string& job_id) const;
    nlohmann::json health() const;
    nlohmann::json config_view() const;

    // Blocks until the job is done or failed, or the timeout passes.
    bool wait(const std::string& job_id, std::chrono::milliseconds timeout) const;

    const ServiceConfig& config() const noexcept { return cfg_; }
    const AdapterSet& adapters() const noexcept { return editor_.adapters(); }

private:
    std::filesystem::path job_dir(const std::string& id) const;
    void persist(const EditJob& j) const;
    void load_jobs();
    void enqueue_locked(const std::string& id);
    void worker_loop();
    void run_job(const std::string& id);
    void update(const std::string& id, const std::function<void(EditJob&)>& f, bool persist_now = true);
    std::string new_job_id();

    ServiceConfig cfg_;
    Editor editor_;
    mutable std::shared_mutex jobs_mu_;
    std::map<std::string, EditJob> jobs_;
    std::map<std::string, std::string> idempotency_;            // key -> job
    std::map<std::pair<std::string, double>, std::string> by_weight_;  // (root, w) -> job
    mutable std::mutex queue_mu_;
    std::condition_variable queue_cv_;
    mutable std::mutex done_mu_;  // taken before jobs_mu_ in wait()
    mutable std::condition_variable done_cv_;
    std::deque<std::string> queue_;
    std::string running_;
    bool stopping_ = false;
    std::thread worker_;
    std::uint64_t id_counter_ = 0;
};

// HTTP front end over an EditService.
class ServiceHttpServer {
public:
    explicit ServiceHttpServer(EditService& service);
    ~ServiceHttpServer();
    // Returns the bound port (0 picks a free one).
    int bind(const std::string& host, int port);
    // Blocks serving until stop().
    void listen();
    void stop();
    void wait_until_ready() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace ddimedit
