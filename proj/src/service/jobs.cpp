#include <algorithm>
#include <ctime>
#include <random>

#include "ddimedit/errors.hpp"
#include "ddimedit/hashing.hpp"
#include "ddimedit/image.hpp"
#include "ddimedit/mock_adapters.hpp"
#include "ddimedit/service.hpp"

namespace ddimedit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr JobStatus kStatuses[] = {JobStatus::queued,     JobStatus::captioning, JobStatus::inverting,
                                   JobStatus::generating, JobStatus::done,       JobStatus::failed};

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

bool terminal(JobStatus s) { return s == JobStatus::done || s == JobStatus::failed; }

// editor stage -> job status
std::optional<JobStatus> status_for_stage(const std::string& stage) {
    if (stage == "caption" || stage == "embed") return JobStatus::captioning;
    if (stage == "encode" || stage == "invert") return JobStatus::inverting;
    if (stage == "load" || stage == "generate" || stage == "decode") return JobStatus::generating;
    return std::nullopt;
}

json optional_text(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

std::optional<std::string> text_or_null(const json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<std::string>();
}

void write_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    write_text_file(tmp, text);
    fs::rename(tmp, path);
}

std::string image_url(const std::string& image_id) { return "/images/" + image_id; }

}  // namespace

std::string to_string(JobStatus s) {
    switch (s) {
        case JobStatus::queued: return "queued";
        case JobStatus::captioning: return "captioning";
        case JobStatus::inverting: return "inverting";
        case JobStatus::generating: return "generating";
        case JobStatus::done: return "done";
        case JobStatus::failed: return "failed";
    }
    return "failed";
}

JobStatus job_status_from_string(const std::string& s) {
    for (JobStatus st : kStatuses)
        if (to_string(st) == s) return st;
    throw InputFormatError("job", "unknown status '" + s + "'");
}

int job_status_rank(JobStatus s) { return static_cast<int>(s); }

json to_json(const EditJob& j) {
    return json{{"job_id", j.job_id},
                {"seq", j.seq},
                {"kind", j.kind},
                {"root_job", j.root_job},
                {"parent_job", j.parent_job},
                {"status", to_string(j.status)},
                {"status_history", j.status_history},
                {"stage", j.stage},
                {"stage_step", j.stage_step},
                {"stage_total", j.stage_total},
                {"created_at", j.created_at},
                {"updated_at", j.updated_at},
                {"idempotency_key", j.idempotency_key},
                {"instruction", j.instruction},
                {"image_id", j.image_id},
                {"before_caption", optional_text(j.overrides.before)},
                {"after_caption", optional_text(j.overrides.after)},
                {"config", to_json(j.config)},
                {"manifest_id", j.manifest_id},
                {"timings", j.timings},
                {"result", j.result},
                {"error", j.error}};
}

EditJob edit_job_from_json(const json& j) {
    EditJob e;
    e.job_id = j.at("job_id").get<std::string>();
    e.seq = j.value("seq", std::uint64_t{0});
    e.kind = j.value("kind", "edit");
    e.root_job = j.value("root_job", "");
    e.parent_job = j.value("parent_job", "");
    e.status = job_status_from_string(j.value("status", "queued"));
    e.status_history = j.value("status_history", std::vector<std::string>{});
    e.stage = j.value("stage", "");
    e.stage_step = j.value("stage_step", 0);
    e.stage_total = j.value("stage_total", 0);
    e.created_at = j.value("created_at", "");
    e.updated_at = j.value("updated_at", "");
    e.idempotency_key = j.value("idempotency_key", "");
    e.instruction = j.value("instruction", "");
    e.image_id = j.value("image_id", "");
    e.overrides.before = text_or_null(j, "before_caption");
    e.overrides.after = text_or_null(j, "after_caption");
    if (j.contains("config")) e.config = edit_config_from_json(j["config"]);
    e.manifest_id = j.value("manifest_id", "");
    if (j.contains("timings")) e.timings = j["timings"].get<std::map<std::string, double>>();
    e.result = j.value("result", json());
    e.error = j.value("error", json());
    return e;
}

EditService::EditService(AdapterSet adapters, ServiceConfig cfg)
    : cfg_(std::move(cfg)), editor_(std::move(adapters), cfg_.out_dir) {
    if (cfg_.queue_capacity == 0) throw ConfigError("queue_capacity", "must be >= 1");
    if (cfg_.weight_grid.empty()) throw ConfigError("weight_grid", "must not be empty");
    cfg_.defaults.validate();
    fs::create_directories(cfg_.out_dir / "jobs");
    load_jobs();
}

EditService::~EditService() { stop(); }

fs::path EditService::job_dir(const std::string& id) const { return cfg_.out_dir / "jobs" / id; }

void EditService::persist(const EditJob& j) const {
    fs::create_directories(job_dir(j.job_id));
    write_atomic(job_dir(j.job_id) / "job.json", to_json(j).dump(2) + "\n");
}

void EditService::load_jobs() {
    std::vector<EditJob> loaded;
    for (const auto& entry : fs::directory_iterator(cfg_.out_dir / "jobs")) {
        const fs::path p = entry.path() / "job.json";
        if (!entry.is_directory() || !fs::exists(p)) continue;
        try {
            loaded.push_back(edit_job_from_json(json::parse(read_text_file(p))));
        } catch (const std::exception&) {
            continue;  // unreadable job records are ignored
        }
    }
    std::sort(loaded.begin(), loaded.end(), [](const EditJob& a, const EditJob& b) { return a.seq < b.seq; });
    for (auto& j : loaded) {
        if (!terminal(j.status) && j.status != JobStatus::queued) {
            j.status = JobStatus::failed;
            j.status_history.push_back("failed");
            j.error = {{"kind", "interrupted"}, {"stage", j.stage}, {"message", "service restarted mid-job"}};
            j.updated_at = utc_now();
            persist(j);
        }
        id_counter_ = std::max(id_counter_, j.seq);
        if (!j.idempotency_key.empty()) idempotency_[j.idempotency_key] = j.job_id;
        if (j.status != JobStatus::failed) {
            const std::string root = j.root_job.empty() ? j.job_id : j.root_job;
            by_weight_[{root, j.config.weight}] = j.job_id;
        }
        jobs_[j.job_id] = std::move(j);
    }
}

void EditService::start() {
    {
        std::unique_lock jobs_lock(jobs_mu_);
        std::lock_guard lock(queue_mu_);
        if (worker_.joinable()) return;
        stopping_ = false;
        std::vector<const EditJob*> queued;
        for (const auto& [id, j] : jobs_)
            if (j.status == JobStatus::queued && std::find(queue_.begin(), queue_.end(), id) == queue_.end())
                queued.push_back(&j);
        std::sort(queued.begin(), queued.end(), [](const EditJob* a, const EditJob* b) { return a->seq < b->seq; });
        for (const EditJob* j : queued) queue_.push_back(j->job_id);
    }
    worker_ = std::thread([this] { worker_loop(); });
}

void EditService::stop() {
    {
        std::lock_guard lock(queue_mu_);
        stopping_ = true;
    }
    queue_cv_.notify_all();
    if (worker_.joinable()) worker_.join();
}

std::string EditService::new_job_id() {
    static thread_local std::random_device rd;
    Sha256 h;
    h.update(std::to_string(id_counter_));
    h.update(std::to_string(rd()) + ":" + std::to_string(rd()));
    h.update(std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
    return h.hex_digest().substr(0, 16);
}

void EditService::enqueue_locked(const std::string& id) {
    {
        std::lock_guard lock(queue_mu_);
        queue_.push_back(id);
    }
    queue_cv_.notify_one();
}

SubmitOutcome EditService::submit(const SubmitRequest& req) {
    if (!req.idempotency_key.empty()) {
        std::shared_lock lock(jobs_mu_);
        auto it = idempotency_.find(req.idempotency_key);
        if (it != idempotency_.end()) return {it->second, false};
    }
    if (normalize_whitespace(req.instruction).empty())
        throw ServiceError(400, "validation", "instruction must be non-empty");
    if (req.image_png.empty()) throw ServiceError(400, "validation", "image is required");
    if (req.image_png.size() > cfg_.max_upload_bytes)
        throw ServiceError(413, "payload_too_large",
                           "image is " + std::to_string(req.image_png.size()) + " bytes; limit is " +
                               std::to_string(cfg_.max_upload_bytes));
    Image img;
    try {
        img = decode_png(req.image_png, "image");
    } catch (const Error& e) {
        throw ServiceError(400, "input_format", e.what(), "upload a PNG image");
    }
    if (!req.config_overrides.is_object()) throw ServiceError(400, "validation", "config must be a JSON object");
    EditConfig config;
    try {
        config = edit_config_from_json(req.config_overrides, cfg_.defaults);
        config.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ServiceError(400, "validation", std::string("config: ") + e.what());
    }

    std::unique_lock lock(jobs_mu_);
    if (!req.idempotency_key.empty()) {
        auto it = idempotency_.find(req.idempotency_key);
        if (it != idempotency_.end()) return {it->second, false};
    }
    {
        std::lock_guard qlock(queue_mu_);
        if (queue_.size() >= cfg_.queue_capacity) {
            ServiceError e(429, "queue_full", "job queue is full", "retry after the hinted delay");
            e.retry_after_s = cfg_.retry_after_s;
            throw e;
        }
    }
    EditJob j;
    j.job_id = new_job_id();
    j.seq = ++id_counter_;
    j.created_at = j.updated_at = utc_now();
    j.status_history = {"queued"};
    j.idempotency_key = req.idempotency_key;
    j.instruction = req.instruction;
    j.image_id = req.image_id;
    j.overrides = req.overrides;
    j.config = config;
    fs::create_directories(job_dir(j.job_id));
    write_file(job_dir(j.job_id) / "input.png", req.image_png);
    persist(j);
    if (!j.idempotency_key.empty()) idempotency_[j.idempotency_key] = j.job_id;
    by_weight_[{j.job_id, j.config.weight}] = j.job_id;
    const std::string id = j.job_id;
    jobs_[id] = std::move(j);
    enqueue_locked(id);
    return {id, true};
}

SubmitOutcome EditService::rerun(const std::string& job_id, double weight) {
    std::unique_lock lock(jobs_mu_);
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) throw ServiceError(404, "not_found", "no job '" + job_id + "'");
    const std::string root_id = it->second.root_job.empty() ? job_id : it->second.root_job;
    const EditJob& root = jobs_.at(root_id);
    if (root.status != JobStatus::done)
        throw ServiceError(409, "not_ready", "job '" + root_id + "' is " + to_string(root.status),
                           root.status == JobStatus::failed ? "submit a new edit with POST /edits"
                                                            : "poll GET /edits/" + root_id + " until done");
    EditConfig config = root.config;
    config.weight = weight;
    try {
        config.validate();
    } catch (const ConfigError& e) {
        throw ServiceError(400, "validation", e.what());
    }
    if (auto w = by_weight_.find({root_id, weight}); w != by_weight_.end()) {
        const auto& existing = jobs_.at(w->second);
        if (existing.status != JobStatus::failed) return {existing.job_id, false};
    }
    try {
        editor_.check_rerun_artifacts(root.manifest_id);
    } catch (const Error& e) {
        throw ServiceError(409, "cache_miss", e.what(),
                           "resubmit the original image with POST /edits to rebuild the inversion");
    }
    {
        std::lock_guard qlock(queue_mu_);
        if (queue_.size() >= cfg_.queue_capacity) {
            ServiceError e(429, "queue_full", "job queue is full", "retry after the hinted delay");
            e.retry_after_s = cfg_.retry_after_s;
            throw e;
        }
    }
    EditJob j;
    j.job_id = new_job_id();
    j.seq = ++id_counter_;
    j.kind = "rerun";
    j.root_job = root_id;
    j.parent_job = job_id;
    j.created_at = j.updated_at = utc_now();
    j.status_history = {"queued"};
    j.instruction = root.instruction;
    j.image_id = root.image_id;
    j.overrides = root.overrides;
    j.config = config;
    persist(j);
    by_weight_[{root_id, weight}] = j.job_id;
    const std::string id = j.job_id;
    jobs_[id] = std::move(j);
    enqueue_locked(id);
    return {id, true};
}

EditJob EditService::job(const std::string& job_id) const {
    std::shared_lock lock(jobs_mu_);
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) throw ServiceError(404, "not_found", "no job '" + job_id + "'");
    return it->second;
}

std::vector<std::uint8_t> EditService::image(const std::string& image_id) const {
    std::string run = image_id;
    std::string file = "output.png";
    constexpr std::string_view suffix = "-input";
    if (run.size() > suffix.size() && run.compare(run.size() - suffix.size(), suffix.size(), suffix) == 0) {
        run.resize(run.size() - suffix.size());
        file = "input.png";
    }
    fs::path path;
    try {
        path = editor_.run_dir(run) / file;
    } catch (const NotFoundError&) {
        throw ServiceError(404, "not_found", "no image '" + image_id + "'");
    }
    if (!fs::exists(path)) throw ServiceError(404, "not_found", "no image '" + image_id + "'");
    return read_file(path);
}

json EditService::job_view(const std::string& job_id) const {
    const EditJob j = job(job_id);
    json v = to_json(j);
    v.erase("seq");
    v.erase("idempotency_key");
    v["progress"] = {{"stage", j.stage}, {"step", j.stage_step}, {"total", j.stage_total}};
    v["links"] = {{"self", "/edits/" + j.job_id}, {"rerun", "/edits/" + j.job_id + "/rerun"}};
    v["skipped_stages"] = j.kind == "rerun" ? json{"captioning", "inverting"} : json::array();
    v["weight"] = j.config.weight;
    return v;
}

json EditService::health() const {
    json counts = json::object();
    std::size_t total = 0;
    {
        std::shared_lock lock(jobs_mu_);
        for (JobStatus s : kStatuses) counts[to_string(s)] = 0;
        for (const auto& [id, j] : jobs_) counts[to_string(j.status)] = counts[to_string(j.status)].get<int>() + 1;
        total = jobs_.size();
    }
    std::size_t depth = 0;
    std::string running;
    {
        std::lock_guard lock(queue_mu_);
        depth = queue_.size();
        running = running_;
    }
    std::size_t inversions = 0;
    const fs::path cache = cfg_.out_dir / "cache" / "inversions";
    if (fs::exists(cache))
        for (const auto& e : fs::directory_iterator(cache))
            if (e.path().extension() == ".bin") ++inversions;
    return json{{"status", "ok"},
                {"profile", editor_.adapters().profile},
                {"worker", running.empty() ? "idle" : "busy"},
                {"running_job", running.empty() ? json(nullptr) : json(running)},
                {"queue_depth", depth},
                {"queue_capacity", cfg_.queue_capacity},
                {"jobs", total},
                {"jobs_by_status", counts},
                {"cache", {{"inversions", inversions}}}};
}

json EditService::config_view() const {
    const auto [lo, hi] = std::minmax_element(cfg_.weight_grid.begin(), cfg_.weight_grid.end());
    json statuses = json::array();
    for (JobStatus s : kStatuses) statuses.push_back(to_string(s));
    return json{{"profile", editor_.adapters().profile},
                {"weight_grid", cfg_.weight_grid},
                {"weight_min", *lo},
                {"weight_max", *hi},
                {"weight_default", cfg_.defaults.weight},
                {"steps_invert", cfg_.defaults.steps_invert},
                {"steps_generate", cfg_.defaults.steps_generate},
                {"guidance_scale", cfg_.defaults.guidance_scale},
                {"defaults", to_json(cfg_.defaults)},
                {"max_upload_bytes", cfg_.max_upload_bytes},
                {"queue_capacity", cfg_.queue_capacity},
                {"statuses", statuses}};
}

bool EditService::wait(const std::string& job_id, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(done_mu_);
    return done_cv_.wait_for(lock, timeout, [&] {
        std::shared_lock jobs_lock(jobs_mu_);
        auto it = jobs_.find(job_id);
        return it == jobs_.end() || terminal(it->second.status);
    });
}

void EditService::update(const std::string& id, const std::function<void(EditJob&)>& f, bool persist_now) {
    {
        std::unique_lock lock(jobs_mu_);
        EditJob& j = jobs_.at(id);
        const JobStatus before = j.status;
        f(j);
        if (j.status != before) j.status_history.push_back(to_string(j.status));
        j.updated_at = utc_now();
        if (persist_now) persist(j);
    }
    { std::lock_guard lock(done_mu_); }
    done_cv_.notify_all();
}

void EditService::worker_loop() {
    for (;;) {
        std::string id;
        {
            std::unique_lock lock(queue_mu_);
            queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (stopping_) return;
            id = queue_.front();
            queue_.pop_front();
            running_ = id;
        }
        run_job(id);
        std::lock_guard lock(queue_mu_);
        running_.clear();
    }
}

void EditService::run_job(const std::string& id) {
    const EditJob job_copy = job(id);
    auto progress = [&](const std::string& stage, int step, int total) {
        const auto st = status_for_stage(stage);
        bool advanced = false;
        update(
            id,
            [&](EditJob& j) {
                j.stage = stage;
                j.stage_step = step;
                j.stage_total = total;
                if (st && job_status_rank(*st) > job_status_rank(j.status)) {
                    j.status = *st;
                    advanced = true;
                }
            },
            false);
        if (advanced) update(id, [](EditJob&) {});
    };
    try {
        EditResult res;
        if (job_copy.kind == "rerun") {
            const EditJob root = job(job_copy.root_job);
            progress("load", 0, 1);
            res = editor_.rerun_with_weight(root.manifest_id, job_copy.config.weight, progress);
        } else {
            EditRequest req;
            req.image = read_png(job_dir(id) / "input.png");
            req.image_id = job_copy.image_id;
            req.instruction = job_copy.instruction;
            req.config = job_copy.config;
            req.overrides = job_copy.overrides;
            res = editor_.edit(req, progress);
        }
        const std::string mid = res.manifest_id;
        update(id, [&](EditJob& j) {
            j.status = JobStatus::done;
            j.stage = "done";
            j.manifest_id = mid;
            j.timings = res.timings;
            j.result = {{"manifest_id", mid},
                        {"image_id", mid},
                        {"images", {{"input", image_url(mid + "-input")}, {"output", image_url(mid)}}},
                        {"weight", job_copy.config.weight},
                        {"caption_pair", to_json(res.caption_pair)},
                        {"direction_norm", res.direction_norm},
                        {"inversion_cache_hit", res.inversion_cache_hit},
                        {"manifest", res.manifest}};
        });
    } catch (const Error& e) {
        std::string kind = e.kind();
        std::string stage;
        if (const auto* se = dynamic_cast<const StageError*>(&e)) {
            kind = se->cause_kind();
            stage = se->stage();
        }
        update(id, [&](EditJob& j) {
            j.status = JobStatus::failed;
            j.error = {{"kind", kind}, {"stage", stage}, {"message", e.what()}};
        });
    } catch (const std::exception& e) {
        update(id, [&](EditJob& j) {
            j.status = JobStatus::failed;
            j.error = {{"kind", "internal"}, {"stage", ""}, {"message", e.what()}};
        });
    }
}

}  // namespace ddimedit
