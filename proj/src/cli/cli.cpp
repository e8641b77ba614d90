#include "ddimedit/cli.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "ddimedit/errors.hpp"
#include "ddimedit/evaluation.hpp"
#include "ddimedit/image.hpp"
#include "ddimedit/metaprompt.hpp"

namespace ddimedit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        out += c;
    }
    return out + "\"";
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::vector<double> parse_weights(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("weights", "not a number: '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError("weights", "empty weight list");
    return out;
}

std::string weight_label(double w) {
    std::ostringstream os;
    os << w;
    return os.str();
}

// Flags shared by every command that runs the editor.
struct EditFlags {
    std::optional<double> weight;
    std::optional<int> steps;
    std::optional<int> steps_invert;
    std::optional<int> steps_generate;
    std::optional<double> guidance;
    std::optional<std::string> mode;
    std::optional<std::string> template_name;
    std::optional<int> shots;
    std::optional<int> captions;
    std::optional<std::string> before_source;
    std::optional<int> fixed_point_iterations;
    std::optional<std::string> templates_dir;

    void add(CLI::App* cmd, bool with_weight = true, const std::string& steps_flag = "--steps") {
        if (with_weight) cmd->add_option("--weight", weight, "edit-direction weight");
        cmd->add_option(steps_flag, steps, "inversion and generation steps");
        cmd->add_option("--steps-invert", steps_invert, "inversion steps");
        cmd->add_option("--steps-generate", steps_generate, "generation steps");
        cmd->add_option("--guidance", guidance, "classifier-free guidance scale");
        cmd->add_option("--mode", mode, "conditioning: full | instruction_only | after_caption_only");
        cmd->add_option("--template", template_name, "caption prompt template");
        cmd->add_option("--shots", shots, "few-shot examples: 0, 1 or 3");
        cmd->add_option("--captions", captions, "captions per side: 1, 2 or 4");
        cmd->add_option("--before-source", before_source, "first before-caption: captioner | llm");
        cmd->add_option("--fixed-point-iterations", fixed_point_iterations, "inversion refinement iterations");
        cmd->add_option("--templates-dir", templates_dir, "directory of .tmpl files");
    }

    EditConfig apply(EditConfig c) const {
        if (weight) c.weight = *weight;
        if (steps) c.steps_invert = c.steps_generate = *steps;
        if (steps_invert) c.steps_invert = *steps_invert;
        if (steps_generate) c.steps_generate = *steps_generate;
        if (guidance) c.guidance_scale = *guidance;
        if (mode) c.conditioning_mode = conditioning_mode_from_string(*mode);
        if (template_name) c.caption.template_name = *template_name;
        if (shots) c.caption.shots = *shots;
        if (captions) c.caption.n_captions = *captions;
        if (before_source) c.caption.before_source = before_source_from_string(*before_source);
        if (fixed_point_iterations) c.fixed_point_iterations = *fixed_point_iterations;
        if (templates_dir) c.caption.templates_dir = *templates_dir;
        c.validate();
        return c;
    }
};

json result_json(const EditResult& r) {
    return json{{"manifest_id", r.manifest_id},
                {"run_dir", r.run_dir.string()},
                {"output", (r.run_dir / "output.png").string()},
                {"weight", r.manifest.at("config").at("weight")},
                {"before", r.caption_pair.before},
                {"after", r.caption_pair.after},
                {"inversion_cache_hit", r.inversion_cache_hit},
                {"output_sha256", r.manifest.at("outputs").at("output_sha256")}};
}

std::atomic<ServiceHttpServer*> g_server{nullptr};

extern "C" void on_signal(int) {
    if (auto* s = g_server.load()) s->stop();
}

void append_command_log(const fs::path& out_dir, const std::vector<std::string>& args, const std::string& command,
                        int code) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream log(out_dir / "commands.jsonl", std::ios::app);
    if (log) log << json{{"at", utc_now()}, {"command", command}, {"args", args}, {"exit", code}}.dump() << "\n";
}

}  // namespace

AppConfig app_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (k != "adapters" && k != "edit" && k != "service" && k != "optimizer")
            throw ConfigError(k, "unknown config section (expected adapters, edit, service, optimizer)");
    AppConfig c;
    if (j.contains("adapters")) c.adapters = adapter_config_from_json(j.at("adapters"));
    if (j.contains("edit")) c.edit = edit_config_from_json(j.at("edit"));
    c.edit.validate();
    c.service.defaults = c.edit;
    try {
        if (j.contains("service")) {
            const auto& s = j.at("service");
            c.host = s.value("host", c.host);
            c.port = s.value("port", c.port);
            c.service.max_upload_bytes = s.value("max_upload_bytes", c.service.max_upload_bytes);
            c.service.queue_capacity = s.value("queue_capacity", c.service.queue_capacity);
            c.service.retry_after_s = s.value("retry_after_s", c.service.retry_after_s);
            c.service.weight_grid = s.value("weight_grid", c.service.weight_grid);
        }
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            auto& d = c.optimizer;
            d.steps = o.value("steps", d.steps);
            d.top_k = o.value("top_k", d.top_k);
            d.examples_per_step = o.value("examples_per_step", d.examples_per_step);
            d.split = o.value("split", d.split);
            d.scorer = o.value("scorer", d.scorer);
            d.initial_prompts = o.value("initial_prompts", d.initial_prompts);
        }
    } catch (const json::exception& e) {
        throw ConfigError("service", std::string("malformed section: ") + e.what());
    }
    return c;
}

AppConfig load_app_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config", "file not found: " + path.string());
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw InputFormatError(path.string(), std::string("invalid JSON: ") + e.what());
    }
    return app_config_from_json(j);
}

std::string error_line(const std::exception& e) {
    std::string kind = "internal";
    std::string key;
    if (const auto* se = dynamic_cast<const StageError*>(&e)) {
        kind = se->cause_kind();
    } else if (const auto* de = dynamic_cast<const Error*>(&e)) {
        kind = de->kind();
    }
    if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) key = ce->key();
    std::string line = "error: kind=" + kind;
    if (!key.empty()) line += " key=" + key;
    return line + " message=" + quote(e.what());
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Instruction-guided image editing by caption difference and DDIM inversion", "ddimedit"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> profile;
    std::string out_root = "out";
    app.add_option("--config", config_path, "JSON config file")->envname("DDIMEDIT_CONFIG");
    app.add_option("--seed", seed, "seed for the edit, LLM calls and sampling");
    app.add_option("--profile", profile, "adapter profile")->check(CLI::IsMember({"mock", "real"}));
    app.add_option("--out", out_root, "output directory");

    auto sub = [&](const char* name, const char* desc) {
        auto* c = app.add_subcommand(name, desc);
        c->fallthrough();
        return c;
    };

    // edit
    auto* c_edit = sub("edit", "edit one image");
    std::string image_path, instruction, image_id, output_path, weights_csv;
    std::optional<std::string> before_override, after_override;
    EditFlags edit_flags;
    c_edit->add_option("--image", image_path, "input PNG")->required()->check(CLI::ExistingFile);
    c_edit->add_option("--instruction", instruction, "edit instruction")->required();
    c_edit->add_option("--image-id", image_id, "captioner fixture key");
    c_edit->add_option("--before-caption", before_override, "replace the captioner output");
    c_edit->add_option("--after-caption", after_override, "replace the LLM after-caption");
    c_edit->add_option("--output", output_path, "also copy the edited PNG here");
    c_edit->add_option("--weights", weights_csv, "comma-separated weight grid, e.g. 0.75,1,1.25");
    edit_flags.add(c_edit);

    // rerun
    auto* c_rerun = sub("rerun", "regenerate a finished edit at new weights (no caption or LLM calls)");
    std::string manifest_id;
    std::string rerun_weights;
    c_rerun->add_option("--manifest", manifest_id, "run id of a finished edit")->required();
    auto* rerun_w = c_rerun->add_option("--weight", rerun_weights, "weight, or comma-separated grid")->required();
    (void)rerun_w;

    // invert
    auto* c_invert = sub("invert", "DDIM-invert an image into the inversion cache");
    std::string inv_image, inv_caption, inv_image_id;
    int inv_steps = 0;
    int inv_fpi = 0;
    c_invert->add_option("--image", inv_image, "input PNG")->required()->check(CLI::ExistingFile);
    c_invert->add_option("--caption", inv_caption, "inversion caption (default: captioner)");
    c_invert->add_option("--image-id", inv_image_id, "captioner fixture key");
    c_invert->add_option("--steps", inv_steps, "inversion steps (default: config)");
    c_invert->add_option("--fixed-point-iterations", inv_fpi, "refinement iterations per step");

    // evaluate
    auto* c_eval = sub("evaluate", "run the evaluation harness over a dataset split");
    std::string dataset_dir, split = "test", refs = "both", eval_weights, report_dir;
    int limit = 0, workers = 1;
    bool no_resume = false;
    EditFlags eval_flags;
    c_eval->add_option("--dataset", dataset_dir, "dataset directory (manifest.json)")->required();
    c_eval->add_option("--split", split, "split name");
    c_eval->add_option("--limit", limit, "first N examples (0: all)")->check(CLI::NonNegativeNumber);
    c_eval->add_option("--workers", workers, "parallel editor instances")->check(CLI::PositiveNumber);
    c_eval->add_option("--refs", refs, "reference set: tgt | src | both")->check(CLI::IsMember({"tgt", "src", "both"}));
    c_eval->add_option("--weights", eval_weights, "comma-separated weight grid; one report per weight");
    c_eval->add_option("--report-dir", report_dir, "default: <out>/eval/<split>");
    c_eval->add_flag("--no-resume", no_resume, "ignore existing records");
    eval_flags.add(c_eval);

    // import-dataset
    auto* c_import = sub("import-dataset", "convert a MagicBrush distribution into a dataset directory");
    std::string import_src, import_dst, import_format = "magicbrush";
    c_import->add_option("--source", import_src, "MagicBrush root")->required()->check(CLI::ExistingDirectory);
    c_import->add_option("--dest", import_dst, "dataset directory to write")->required();
    c_import->add_option("--format", import_format, "source format")->check(CLI::IsMember({"magicbrush"}));

    // optimize-prompt
    auto* c_opt = sub("optimize-prompt", "meta-prompt optimization of the after-caption prompt");
    std::string opt_dataset, opt_split, opt_scorer, opt_dir;
    std::optional<int> opt_steps, opt_k, opt_top;
    std::vector<std::string> opt_initial;
    bool opt_no_resume = false;
    EditFlags opt_flags;
    c_opt->add_option("--dataset", opt_dataset, "dataset directory")->required();
    c_opt->add_option("--split", opt_split, "pool split (default: config, dev)");
    c_opt->add_option("--steps", opt_steps, "optimization steps");
    c_opt->add_option("--examples-per-step", opt_k, "examples sampled per step");
    c_opt->add_option("--top-k", opt_top, "retained history size");
    c_opt->add_option("--scorer", opt_scorer, "clip-i | text-hash")->check(CLI::IsMember({"clip-i", "text-hash"}));
    c_opt->add_option("--initial-prompt", opt_initial, "seed prompt template (repeatable)");
    c_opt->add_option("--dir", opt_dir, "default: <out>/optimize");
    c_opt->add_flag("--no-resume", opt_no_resume, "start over");
    opt_flags.add(c_opt, false, "--edit-steps");

    // report
    auto* c_report = sub("report", "render a trace curve or an evaluation report");
    std::string trace_path, records_path, report_out;
    c_report->add_option("--trace", trace_path, "optimizer trace.jsonl")->check(CLI::ExistingFile);
    c_report->add_option("--records", records_path, "evaluation records.jsonl")->check(CLI::ExistingFile);
    c_report->add_option("--output", report_out, "SVG path, or report directory for --records");
    c_report->add_option("--refs", refs, "reference set for --records")->check(CLI::IsMember({"tgt", "src", "both"}));

    // serve
    auto* c_serve = sub("serve", "HTTP job service");
    std::optional<std::string> host;
    std::optional<int> port;
    c_serve->add_option("--host", host, "bind address");
    c_serve->add_option("--port", port, "port (0 picks one)");

    std::vector<const char*> argv{"ddimedit"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        if (code == 0) return 0;
        err << "error: kind=usage message=" << quote(e.what()) << "\n";
        return kExitUsage;
    }

    std::string command;
    for (auto* s : app.get_subcommands()) command = s->get_name();
    const fs::path out_dir = out_root;
    int code = kExitRuntime;
    try {
        AppConfig cfg = config_path.empty() ? AppConfig{} : load_app_config(config_path);
        apply_env_overrides(cfg.adapters);
        if (profile) cfg.adapters.profile = *profile;
        if (seed) cfg.edit.seed = *seed;

        if (command == "edit") {
            const EditConfig ec = edit_flags.apply(cfg.edit);
            Editor editor(make_adapters(cfg.adapters), out_dir);
            EditRequest req;
            req.image = read_png(image_path);
            req.image_id = image_id;
            req.instruction = instruction;
            req.config = ec;
            req.overrides.before = before_override;
            req.overrides.after = after_override;
            const EditResult res = editor.edit(req);
            json summary = result_json(res);
            if (!weights_csv.empty()) {
                json grid = json::array();
                for (double w : parse_weights(weights_csv))
                    grid.push_back(w == ec.weight ? result_json(res) : result_json(editor.rerun_with_weight(res.manifest_id, w)));
                summary["grid"] = grid;
            }
            if (!output_path.empty()) {
                if (fs::path(output_path).has_parent_path()) fs::create_directories(fs::path(output_path).parent_path());
                fs::copy_file(res.run_dir / "output.png", output_path, fs::copy_options::overwrite_existing);
                summary["copied_to"] = output_path;
            }
            out << summary.dump() << "\n";
        } else if (command == "rerun") {
            AdapterSet adapters = make_adapters(cfg.adapters);
            Editor editor(adapters, out_dir);
            json results = json::array();
            for (double w : parse_weights(rerun_weights)) results.push_back(result_json(editor.rerun_with_weight(manifest_id, w)));
            out << json{{"parent", manifest_id},
                        {"results", results},
                        {"calls", {{"captioner", adapters.counters->caption.load()},
                                   {"llm", adapters.counters->generate_text.load()},
                                   {"embed_text", adapters.counters->embed_text.load()}}}}
                       .dump()
                << "\n";
        } else if (command == "invert") {
            Editor editor(make_adapters(cfg.adapters), out_dir);
            const int steps = inv_steps > 0 ? inv_steps : cfg.edit.steps_invert;
            const auto r = editor.invert(read_png(inv_image), inv_image_id, inv_caption, steps,
                                         inv_fpi > 0 ? inv_fpi : cfg.edit.fixed_point_iterations);
            out << json{{"cache_key", r.cache_key},
                        {"cache_path", r.cache_path.string()},
                        {"cache_hit", r.cache_hit},
                        {"caption", r.caption},
                        {"steps", r.latent.steps},
                        {"top_timestep", r.latent.top_timestep},
                        {"trajectory_checksum", r.latent.trajectory_checksum}}
                       .dump()
                << "\n";
        } else if (command == "evaluate") {
            const EditConfig base = eval_flags.apply(cfg.edit);
            const Dataset ds = load_dataset(dataset_dir);
            std::vector<DatasetExample> examples = ds.split(split);
            if (limit > 0 && static_cast<std::size_t>(limit) < examples.size()) examples.resize(static_cast<std::size_t>(limit));
            const ReferenceSet rs = reference_set_from_string(refs);
            const fs::path root = report_dir.empty() ? out_dir / "eval" / split : fs::path(report_dir);
            const std::vector<double> weights = eval_weights.empty() ? std::vector<double>{base.weight} : parse_weights(eval_weights);
            json reports = json::array();
            std::ostringstream grid_md;
            grid_md << "| w | CLIP-I Tgt | CLIP-T Tgt | CLIP-I Src | CLIP-T Src |\n|---|---|---|---|---|\n";
            for (double w : weights) {
                EditConfig ec = base;
                ec.weight = w;
                BatchOptions opts;
                opts.out_dir = weights.size() == 1 ? root : root / ("w" + weight_label(w));
                opts.workers = workers;
                opts.refs = rs;
                opts.resume = !no_resume;
                opts.on_record = [&](const EvalRecord& r, std::size_t done, std::size_t total) {
                    err << "[" << done << "/" << total << "] " << r.example_id << " " << r.status << "\n";
                };
                const BatchResult res = run_batch(examples, ec, cfg.adapters, opts);
                write_report(opts.out_dir, res, ec, rs);
                reports.push_back({{"weight", w},
                                   {"dir", opts.out_dir.string()},
                                   {"records", res.records.size()},
                                   {"skipped", res.skipped},
                                   {"summary", to_json(res.summary)}});
                auto cell = [&](const char* k) {
                    auto it = res.summary.means.find(k);
                    if (it == res.summary.means.end()) return std::string("-");
                    std::ostringstream os;
                    os.setf(std::ios::fixed);
                    os.precision(4);
                    os << it->second;
                    return os.str();
                };
                grid_md << "| " << weight_label(w) << " | " << cell("clip_i_tgt") << " | " << cell("clip_t_tgt") << " | "
                        << cell("clip_i_src") << " | " << cell("clip_t_src") << " |\n";
            }
            if (weights.size() > 1) write_text_file(root / "weights.md", grid_md.str());
            out << json{{"split", split}, {"examples", examples.size()}, {"reports", reports}}.dump() << "\n";
        } else if (command == "import-dataset") {
            const auto counts = import_magicbrush(import_src, import_dst);
            out << json{{"dest", import_dst}, {"splits", counts}}.dump() << "\n";
        } else if (command == "optimize-prompt") {
            const Dataset ds = load_dataset(opt_dataset);
            const std::string split_name = opt_split.empty() ? cfg.optimizer.split : opt_split;
            const std::vector<DatasetExample>& pool = ds.split(split_name);
            AdapterSet adapters = make_adapters(cfg.adapters);
            const fs::path dir = opt_dir.empty() ? out_dir / "optimize" : fs::path(opt_dir);
            OptimizerConfig oc;
            oc.steps = opt_steps.value_or(cfg.optimizer.steps);
            oc.top_k = opt_top.value_or(cfg.optimizer.top_k);
            oc.examples_per_step = opt_k.value_or(cfg.optimizer.examples_per_step);
            oc.seed = cfg.edit.seed;
            oc.propose.llm = adapters.llm_config;
            oc.initial_prompts = opt_initial.empty() ? cfg.optimizer.initial_prompts : opt_initial;
            oc.out_dir = dir;
            oc.resume = !opt_no_resume;
            oc.on_step = [&](const json& rec) {
                err << "[step " << rec.at("step").get<int>() + 1 << "/" << oc.steps
                    << "] best=" << rec.at("best_score").dump() << "\n";
            };
            const std::string scorer_name = opt_scorer.empty() ? cfg.optimizer.scorer : opt_scorer;
            Editor editor(adapters, dir);
            std::unique_ptr<PromptScorer> scorer;
            if (scorer_name == "text-hash") scorer = std::make_unique<TextHashScorer>(cfg.edit.seed);
            else if (scorer_name == "clip-i") scorer = std::make_unique<ClipIScorer>(editor, opt_flags.apply(cfg.edit));
            else throw ConfigError("optimizer.scorer", "must be clip-i or text-hash, got '" + scorer_name + "'");
            const OptimizeResult res = optimize(pool, *adapters.llm, *scorer, oc);
            write_text_file(dir / "trace.svg", render_trace_svg(res.trace));
            json best = res.state.history.empty() ? json(nullptr) : to_json(res.state.history.back());
            out << json{{"dir", dir.string()}, {"steps", res.state.step}, {"best", best}}.dump() << "\n";
        } else if (command == "report") {
            if (trace_path.empty() == records_path.empty())
                throw ConfigError("report", "give exactly one of --trace or --records");
            if (!trace_path.empty()) {
                const fs::path svg = report_out.empty() ? fs::path(trace_path).parent_path() / "trace.svg" : fs::path(report_out);
                const auto trace = read_trace(trace_path);
                write_text_file(svg, render_trace_svg(trace));
                out << json{{"svg", svg.string()}, {"steps", trace.size()}}.dump() << "\n";
            } else {
                BatchResult res;
                res.records = read_records(records_path);
                res.summary = summarize(res.records);
                const fs::path dir = report_out.empty() ? fs::path(records_path).parent_path() : fs::path(report_out);
                const ReferenceSet rs = reference_set_from_string(refs);
                write_report(dir, res, cfg.edit, rs);
                out << json{{"dir", dir.string()}, {"summary", to_json(res.summary)}}.dump() << "\n";
            }
        } else if (command == "serve") {
            ServiceConfig sc = cfg.service;
            sc.out_dir = out_dir;
            sc.defaults = cfg.edit;
            EditService svc(make_adapters(cfg.adapters), sc);
            ServiceHttpServer http(svc);
            const int bound = http.bind(host.value_or(cfg.host), port.value_or(cfg.port));
            if (bound < 0) throw ConfigError("port", "cannot bind");
            svc.start();
            out << json{{"listening", "http://" + host.value_or(cfg.host) + ":" + std::to_string(bound)}}.dump()
                << std::endl;
            g_server = &http;
            auto prev_int = std::signal(SIGINT, on_signal);
            auto prev_term = std::signal(SIGTERM, on_signal);
            http.listen();
            std::signal(SIGINT, prev_int);
            std::signal(SIGTERM, prev_term);
            g_server = nullptr;
            svc.stop();
        }
        code = 0;
    } catch (const ConfigError& e) {
        err << error_line(e) << "\n";
        code = kExitConfig;
    } catch (const std::exception& e) {
        err << error_line(e) << "\n";
        code = kExitRuntime;
    }
    append_command_log(out_dir, args, command, code);
    return code;
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace ddimedit::cli
