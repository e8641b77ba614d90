#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "ddimedit/errors.hpp"
#include "ddimedit/evaluation.hpp"
#include "ddimedit/image.hpp"

namespace ddimedit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// name -> member; the order fixes report columns
const std::vector<std::pair<const char*, std::optional<double> EvalRecord::*>>& metric_fields() {
    static const std::vector<std::pair<const char*, std::optional<double> EvalRecord::*>> f{
        {"clip_t_tgt", &EvalRecord::clip_t_tgt},         {"clip_i_tgt", &EvalRecord::clip_i_tgt},
        {"clip_t_src", &EvalRecord::clip_t_src},         {"clip_i_src", &EvalRecord::clip_i_src},
        {"bleu", &EvalRecord::bleu},                     {"caption_cosine", &EvalRecord::caption_cosine},
        {"clip_t_input_tgt", &EvalRecord::clip_t_input_tgt},
    };
    return f;
}

std::string format_fixed(double v, int digits) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
}

}  // namespace

json to_json(const EvalRecord& r) {
    json j{{"example_id", r.example_id},
           {"status", r.status},
           {"manifest_id", r.manifest_id},
           {"after_caption", r.after_caption},
           {"seconds", r.seconds}};
    if (!r.error.empty()) j["error"] = r.error;
    if (!r.error_kind.empty()) j["error_kind"] = r.error_kind;
    for (const auto& [name, field] : metric_fields()) {
        const auto& v = r.*field;
        j[name] = v ? json(*v) : json(nullptr);
    }
    return j;
}

EvalRecord eval_record_from_json(const json& j) {
    EvalRecord r;
    r.example_id = j.at("example_id").get<std::string>();
    r.status = j.value("status", "ok");
    r.error = j.value("error", "");
    r.error_kind = j.value("error_kind", "");
    r.manifest_id = j.value("manifest_id", "");
    r.after_caption = j.value("after_caption", "");
    r.seconds = j.value("seconds", 0.0);
    for (const auto& [name, field] : metric_fields())
        if (j.contains(name) && j[name].is_number()) r.*field = j[name].get<double>();
    return r;
}

EvalSummary summarize(const std::vector<EvalRecord>& records) {
    EvalSummary s;
    s.count = records.size();
    for (const auto& r : records)
        if (r.status != "ok") ++s.failures;
    for (const auto& [name, field] : metric_fields()) {
        std::vector<double> vals;
        for (const auto& r : records)
            if (r.status == "ok" && (r.*field)) vals.push_back(*(r.*field));
        if (vals.empty()) continue;
        // summation order fixed by value, so means do not depend on example order
        std::sort(vals.begin(), vals.end());
        double sum = 0.0;
        for (double v : vals) sum += v;
        s.means[name] = sum / static_cast<double>(vals.size());
        s.n[name] = vals.size();
    }
    return s;
}

json to_json(const EvalSummary& s) {
    return json{{"count", s.count}, {"failures", s.failures}, {"means", s.means}, {"n", s.n}};
}

ReferenceSet reference_set_from_string(const std::string& s) {
    if (s == "tgt") return ReferenceSet::tgt;
    if (s == "src") return ReferenceSet::src;
    if (s == "both") return ReferenceSet::both;
    throw ConfigError("refs", "must be tgt, src or both, got '" + s + "'");
}

namespace {
std::string to_string(ReferenceSet r) {
    switch (r) {
        case ReferenceSet::tgt: return "tgt";
        case ReferenceSet::src: return "src";
        case ReferenceSet::both: return "both";
    }
    return "both";
}
}  // namespace

EvalRecord evaluate_example(const DatasetExample& ex, const EditConfig& cfg, Editor& editor, ReferenceSet refs) {
    const auto t0 = std::chrono::steady_clock::now();
    const Image source = read_png(ex.source_image);
    const Image target = read_png(ex.target_image);
    EditRequest req;
    req.image = source;
    req.image_id = ex.example_id;
    req.instruction = ex.instruction;
    req.config = cfg;
    const EditResult res = editor.edit(req);
    AdapterSet a = editor.adapters();

    EvalRecord r;
    r.example_id = ex.example_id;
    r.manifest_id = res.manifest_id;
    // with several generated captions the first one is scored
    r.after_caption = res.caption_pair.after.empty() ? std::string() : res.caption_pair.after.front();
    const Image& out = res.output_image;
    if (refs != ReferenceSet::src) {
        r.clip_i_tgt = clip_i(out, target, a);
        if (ex.target_caption) {
            r.clip_t_tgt = clip_t(out, *ex.target_caption, a);
            r.clip_t_input_tgt = clip_t(source, *ex.target_caption, a, ex.example_id);
        }
    }
    if (refs != ReferenceSet::tgt) {
        r.clip_i_src = clip_i(out, source, a);
        r.clip_t_src = clip_t(out, ex.source_caption ? *ex.source_caption : res.caption_pair.inversion_caption, a);
    }
    if (ex.target_caption) {
        r.bleu = bleu4(r.after_caption, *ex.target_caption);
        r.caption_cosine = caption_cosine(r.after_caption, *ex.target_caption, a);
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

std::vector<EvalRecord> read_records(const fs::path& jsonl) {
    std::vector<EvalRecord> out;
    std::ifstream in(jsonl);
    if (!in) return out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(eval_record_from_json(json::parse(line)));
        } catch (const json::exception&) {
            // a torn final line from an interrupted run is dropped
            if (in.peek() != EOF) throw InputFormatError(jsonl.string() + ":" + std::to_string(lineno), "bad record");
        }
    }
    return out;
}

namespace {

BatchResult run_batch_impl(const std::vector<DatasetExample>& examples, const EditConfig& cfg,
                           const std::function<AdapterSet()>& make_set, int workers, const BatchOptions& opts) {
    cfg.validate();
    if (workers < 1) throw ConfigError("workers", "must be >= 1");
    fs::create_directories(opts.out_dir);
    const fs::path log = opts.out_dir / "records.jsonl";

    std::map<std::string, EvalRecord> done;
    if (opts.resume) {
        for (auto& r : read_records(log))
            if (r.status == "ok") done[r.example_id] = r;
    } else {
        fs::remove(log);
    }

    BatchResult result;
    result.records.resize(examples.size());
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        auto it = done.find(examples[i].example_id);
        if (it != done.end()) {
            result.records[i] = it->second;
            ++result.skipped;
        } else {
            pending.push_back(i);
        }
    }

    std::mutex mu;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::exception_ptr failure;
    std::size_t completed = result.skipped;
    std::ofstream append(log, std::ios::app);

    auto worker = [&] {
        try {
            AdapterSet set = make_set();
            Editor editor(set, opts.out_dir);
            while (!abort) {
                const std::size_t k = next++;
                if (k >= pending.size()) break;
                const std::size_t idx = pending[k];
                const auto& ex = examples[idx];
                EvalRecord rec;
                try {
                    rec = evaluate_example(ex, cfg, editor, opts.refs);
                } catch (const Error& e) {
                    rec.example_id = ex.example_id;
                    rec.status = "failed";
                    rec.error = e.what();
                    rec.error_kind = e.kind();
                    if (const auto* se = dynamic_cast<const StageError*>(&e)) rec.error_kind = se->cause_kind();
                } catch (const std::exception& e) {
                    rec.example_id = ex.example_id;
                    rec.status = "failed";
                    rec.error = e.what();
                    rec.error_kind = "internal";
                }
                std::lock_guard<std::mutex> lock(mu);
                result.records[idx] = rec;
                append << to_json(rec).dump() << "\n";
                append.flush();
                ++completed;
                if (opts.on_record) opts.on_record(rec, completed, examples.size());
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(mu);
            if (!failure) failure = std::current_exception();
            abort = true;
        }
    };

    const int n = std::min(workers, static_cast<int>(std::max<std::size_t>(1, pending.size())));
    std::vector<std::thread> threads;
    for (int i = 1; i < n; ++i) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
    append.close();
    if (failure) std::rethrow_exception(failure);

    // canonical log: one line per example in example order
    std::ostringstream os;
    for (const auto& r : result.records) os << to_json(r).dump() << "\n";
    const fs::path tmp = log.string() + ".tmp";
    write_text_file(tmp, os.str());
    fs::rename(tmp, log);

    result.summary = summarize(result.records);
    return result;
}

}  // namespace

BatchResult run_batch(const std::vector<DatasetExample>& examples, const EditConfig& cfg,
                      const AdapterConfig& adapter_cfg, const BatchOptions& opts) {
    return run_batch_impl(examples, cfg, [&] { return make_adapters(adapter_cfg); }, opts.workers, opts);
}

BatchResult run_batch(const std::vector<DatasetExample>& examples, const EditConfig& cfg, AdapterSet& adapters,
                      const BatchOptions& opts) {
    return run_batch_impl(examples, cfg, [&] { return adapters; }, 1, opts);
}

std::string render_report_markdown(const BatchResult& result, const EditConfig& cfg, ReferenceSet refs) {
    const auto& m = result.summary.means;
    auto cell = [&](const char* key, int digits) {
        auto it = m.find(key);
        return it == m.end() ? std::string("-") : format_fixed(it->second, digits);
    };
    std::ostringstream os;
    os << "# Evaluation report\n\n";
    os << "examples: " << result.summary.count << ", failures: " << result.summary.failures
       << ", resumed: " << result.skipped << "\n\n";
    os << "w = " << cfg.weight << ", steps " << cfg.steps_invert << "/" << cfg.steps_generate
       << ", guidance " << cfg.guidance_scale << ", mode " << to_string(cfg.conditioning_mode) << ", refs "
       << to_string(refs) << "\n\n";
    os << "| CLIP-T | CLIP-I | BLEU | Cosine Sim. |\n|---|---|---|---|\n";
    os << "| " << cell("clip_t_tgt", 4) << " | " << cell("clip_i_tgt", 4) << " | " << cell("bleu", 2) << " | "
       << cell("caption_cosine", 4) << " |\n\n";
    os << "| CLIP-I Tgt | CLIP-T Tgt | CLIP-I Src | CLIP-T Src |\n|---|---|---|---|\n";
    os << "| " << cell("clip_i_tgt", 4) << " | " << cell("clip_t_tgt", 4) << " | " << cell("clip_i_src", 4) << " | "
       << cell("clip_t_src", 4) << " |\n";
    if (result.summary.failures) {
        os << "\n## Failures\n\n";
        for (const auto& r : result.records)
            if (r.status != "ok") os << "- `" << r.example_id << "` (" << r.error_kind << "): " << r.error << "\n";
    }
    return os.str();
}

void write_report(const fs::path& out_dir, const BatchResult& result, const EditConfig& cfg, ReferenceSet refs) {
    fs::create_directories(out_dir);
    const json report{{"summary", to_json(result.summary)},
                      {"skipped", result.skipped},
                      {"refs", to_string(refs)},
                      {"config", to_json(cfg)},
                      {"records", "records.jsonl"}};
    write_text_file(out_dir / "report.json", report.dump(2) + "\n");
    write_text_file(out_dir / "report.md", render_report_markdown(result, cfg, refs));
}

}  // namespace ddimedit
