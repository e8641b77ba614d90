#include "ddimedit/editor.hpp"

#include <chrono>
#include <ctime>

#include "ddimedit/adapter_config.hpp"
#include "ddimedit/errors.hpp"
#include "ddimedit/hashing.hpp"
#include "ddimedit/image.hpp"
#include "ddimedit/kernels.hpp"
#include "ddimedit/mock_adapters.hpp"

namespace ddimedit {

using nlohmann::json;

std::string to_string(ConditioningMode m) {
    switch (m) {
        case ConditioningMode::full: return "full";
        case ConditioningMode::instruction_only: return "instruction_only";
        case ConditioningMode::after_caption_only: return "after_caption_only";
    }
    return "full";
}

ConditioningMode conditioning_mode_from_string(const std::string& s) {
    if (s == "full") return ConditioningMode::full;
    if (s == "instruction_only") return ConditioningMode::instruction_only;
    if (s == "after_caption_only") return ConditioningMode::after_caption_only;
    throw ConfigError("conditioning_mode", "expected full, instruction_only or after_caption_only, got '" + s + "'");
}

void EditConfig::validate() const {
    if (steps_invert < 1) throw ConfigError("steps_invert", "must be >= 1");
    if (steps_generate < 1) throw ConfigError("steps_generate", "must be >= 1");
    if (!(guidance_scale >= 1.0)) throw ConfigError("guidance_scale", "must be >= 1");
    if (!(weight > 0.0 || (allow_zero_weight && weight == 0.0)))
        throw ConfigError("weight", "must be > 0, got " + std::to_string(weight));
    if (fixed_point_iterations < 0) throw ConfigError("fixed_point_iterations", "must be >= 0");
}

json to_json(const EditConfig& c) {
    return json{{"weight", c.weight},
                {"steps_invert", c.steps_invert},
                {"steps_generate", c.steps_generate},
                {"guidance_scale", c.guidance_scale},
                {"caption", to_json(c.caption)},
                {"conditioning_mode", to_string(c.conditioning_mode)},
                {"seed", c.seed},
                {"fixed_point_iterations", c.fixed_point_iterations},
                {"allow_zero_weight", c.allow_zero_weight}};
}

EditConfig edit_config_from_json(const json& j, const EditConfig& defaults) {
    EditConfig c = defaults;
    try {
        c.weight = j.value("weight", c.weight);
        c.steps_invert = j.value("steps_invert", c.steps_invert);
        c.steps_generate = j.value("steps_generate", c.steps_generate);
        c.guidance_scale = j.value("guidance_scale", c.guidance_scale);
        if (j.contains("caption")) {
            json merged = to_json(c.caption);
            merged.update(j.at("caption"));
            c.caption = caption_config_from_json(merged);
        }
        c.conditioning_mode = conditioning_mode_from_string(j.value("conditioning_mode", to_string(c.conditioning_mode)));
        c.seed = j.value("seed", c.seed);
        c.fixed_point_iterations = j.value("fixed_point_iterations", c.fixed_point_iterations);
        c.allow_zero_weight = j.value("allow_zero_weight", c.allow_zero_weight);
    } catch (const json::exception& e) {
        throw ConfigError("edit", std::string("malformed edit config: ") + e.what());
    }
    return c;
}

std::string image_sha256(const Image& image) {
    Sha256 h;
    h.update(std::to_string(image.width) + "x" + std::to_string(image.height));
    h.update(image.pixels);
    return h.hex_digest();
}

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json models_json(const AdapterSet& a) {
    return json{{"text_embedder", a.text->model_id()},
                {"image_embedder", a.image ? a.image->model_id() : ""},
                {"captioner", a.captioner->model_id()},
                {"denoiser", a.denoiser->model_id()},
                {"codec", a.codec->model_id()},
                {"llm", a.llm->model_id()},
                {"llm_config",
                 {{"model_id", a.llm_config.model_id},
                  {"uses_chat_template", a.llm_config.uses_chat_template},
                  {"max_new_tokens", a.llm_config.max_new_tokens},
                  {"temperature", a.llm_config.temperature}}},
                {"fingerprint", model_fingerprint(a)},
                {"profile", a.profile},
                {"kernels", std::string(kernels::isa_name(kernels::active().isa))}};
}

// Tracks one run: stage timings and the manifest written on success or failure.
class RunRecorder {
public:
    RunRecorder(std::filesystem::path dir, json manifest) : dir_(std::move(dir)), manifest_(std::move(manifest)) {
        std::filesystem::create_directories(dir_);
        manifest_["status"] = "running";
    }

    template <class F>
    auto stage(const std::string& name, F&& f) -> decltype(f()) {
        const auto t0 = Clock::now();
        try {
            if constexpr (std::is_void_v<decltype(f())>) {
                f();
                finish(name, t0);
            } else {
                auto r = f();
                finish(name, t0);
                return r;
            }
        } catch (const StageError&) {
            throw;
        } catch (const Error& e) {
            fail(name, e.kind(), e.what());
            throw StageError(name, e.kind(), e.what());
        } catch (const std::exception& e) {
            fail(name, "internal", e.what());
            throw StageError(name, "internal", e.what());
        }
    }

    json& manifest() { return manifest_; }
    const std::map<std::string, double>& timings() const { return timings_; }
    void write() const { write_text_file(dir_ / "manifest.json", manifest_.dump(2) + "\n"); }

private:
    void finish(const std::string& name, Clock::time_point t0) {
        const double s = std::chrono::duration<double>(Clock::now() - t0).count();
        timings_[name] = s;
        manifest_["timings"][name] = s;
    }
    void fail(const std::string& name, const std::string& kind, const std::string& what) {
        manifest_["status"] = "failed";
        manifest_["error"] = {{"stage", name}, {"kind", kind}, {"message", what}};
        write();
    }

    std::filesystem::path dir_;
    json manifest_;
    std::map<std::string, double> timings_;
};

LatentImage cropped_latent(LatentImage latent) {
    // decode to the crop size; the caller pastes into the full canvas
    latent.original_width = latent.width;
    latent.original_height = latent.height;
    return latent;
}

}  // namespace

Editor::Editor(AdapterSet adapters, std::filesystem::path out_dir)
    : adapters_(std::move(adapters)), out_dir_(std::move(out_dir)) {
    if (!adapters_.text || !adapters_.captioner || !adapters_.denoiser || !adapters_.codec || !adapters_.llm)
        throw ConfigError("adapters", "editor needs text, captioner, denoiser, codec and llm adapters");
}

std::filesystem::path Editor::run_dir(const std::string& manifest_id) const {
    if (manifest_id.empty() || manifest_id.find_first_not_of("0123456789abcdef") != std::string::npos)
        throw NotFoundError("invalid run id '" + manifest_id + "'");
    return out_dir_ / "runs" / manifest_id;
}

json Editor::load_manifest(const std::string& manifest_id) const {
    const auto path = run_dir(manifest_id) / "manifest.json";
    if (!std::filesystem::exists(path)) throw NotFoundError("no run '" + manifest_id + "'");
    try {
        return json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw InputFormatError(path.string(), e.what());
    }
}

std::string Editor::inversion_cache_key(const Image& cropped, const std::string& caption, int steps,
                                        int fixed_point_iterations) const {
    Sha256 h;
    h.update(image_sha256(cropped));
    h.update(caption);
    h.update(std::to_string(steps));
    h.update(model_fingerprint(adapters_));
    h.update(std::to_string(fixed_point_iterations));
    return h.hex_digest();
}

EditResult Editor::edit(const EditRequest& req, const ProgressCallback& progress) {
    std::lock_guard lock(mutex_);
    if (normalize_whitespace(req.instruction).empty()) throw ContractError("edit: instruction must be non-empty");
    if (req.image.empty()) throw ContractError("edit: empty image");
    const EditConfig& cfg = req.config;
    cfg.validate();
    auto report = [&](const std::string& s, int i, int n) {
        if (progress) progress(s, i, n);
    };

    const std::string input_sha = image_sha256(req.image);
    const std::string image_id = req.image_id.empty() ? input_sha.substr(0, 16) : req.image_id;
    json identity{{"input_sha256", input_sha},
                  {"image_id", image_id},
                  {"instruction", req.instruction},
                  {"config", to_json(cfg)},
                  {"models", model_fingerprint(adapters_)},
                  {"llm", adapters_.llm->model_id()},
                  {"before_override", req.overrides.before.value_or("")},
                  {"after_override", req.overrides.after.value_or("")}};
    const std::string id = sha256_hex(identity.dump()).substr(0, 16);
    const auto dir = run_dir(id);

    const CropBox box = center_crop_box(req.image.width, req.image.height, adapters_.codec->factor());
    json manifest{{"id", id},
                  {"kind", "edit"},
                  {"created_at", utc_now()},
                  {"request",
                   {{"instruction", req.instruction},
                    {"image_id", image_id},
                    {"input_sha256", input_sha},
                    {"width", req.image.width},
                    {"height", req.image.height},
                    {"crop", {{"x", box.x}, {"y", box.y}, {"width", box.width}, {"height", box.height}}},
                    {"before_override", req.overrides.before ? json(*req.overrides.before) : json()},
                    {"after_override", req.overrides.after ? json(*req.overrides.after) : json()}}},
                  {"config", to_json(cfg)},
                  {"models", models_json(adapters_)}};
    RunRecorder run(dir, std::move(manifest));
    write_png(dir / "input.png", req.image);

    AdapterSet a = adapters_;
    a.llm_config.seed = cfg.seed;

    report("caption", 0, 1);
    const CaptionPair pair = run.stage("caption", [&] {
        return make_caption_pair(req.image, image_id, req.instruction, cfg.caption, a, req.overrides);
    });
    run.manifest()["caption_pair"] = to_json(pair);
    if (!req.overrides.after) {
        const auto tmpl = load_template(cfg.caption.template_name, cfg.caption.templates_dir);
        run.manifest()["template"] = {{"name", tmpl.name},
                                      {"shots", cfg.caption.shots},
                                      {"text_sha256", sha256_hex(tmpl.template_text)}};
    }
    report("caption", 1, 1);

    struct Conditionings {
        TextConditioning base;
        EditDirection direction;
        TextConditioning generation;
        TextConditioning uncond;
    };
    const Conditionings conds = run.stage("embed", [&] {
        Conditionings c;
        c.base = a.text->embed(pair.inversion_caption);
        c.direction = direction(mean_conditioning(*a.text, pair.before), mean_conditioning(*a.text, pair.after));
        c.direction.weight = cfg.weight;
        switch (cfg.conditioning_mode) {
            case ConditioningMode::full:
                c.generation = apply(c.direction, c.base, cfg.weight, cfg.allow_zero_weight);
                break;
            case ConditioningMode::instruction_only:
                c.generation = a.text->embed(req.instruction);
                break;
            case ConditioningMode::after_caption_only:
                c.generation = mean_conditioning(*a.text, pair.after);
                break;
        }
        if (cfg.guidance_scale != 1.0) c.uncond = a.text->embed_unconditional();
        save_conditioning(dir / "base.bin", c.base);
        save_direction(dir / "direction.bin", c.direction);
        if (cfg.conditioning_mode != ConditioningMode::full) save_conditioning(dir / "cond.bin", c.generation);
        if (cfg.guidance_scale != 1.0) save_conditioning(dir / "uncond.bin", c.uncond);
        return c;
    });
    const double dnorm = kernels::norm(conds.direction.delta_tokens.values());
    run.manifest()["direction"] = {{"norm", dnorm},
                                   {"weight", cfg.weight},
                                   {"shift_norm", shift_norm(conds.direction, cfg.weight)},
                                   {"file", "direction.bin"},
                                   {"base_file", "base.bin"}};
    if (!conds.base.warnings.empty()) run.manifest()["warnings"] = conds.base.warnings;

    const LatentImage latent = run.stage("encode", [&] { return a.codec->encode(req.image); });

    const Image cropped = crop(req.image, box);
    const std::string key =
        inversion_cache_key(cropped, pair.inversion_caption, cfg.steps_invert, cfg.fixed_point_iterations);
    const auto cache_path = out_dir_ / "cache" / "inversions" / (key + ".bin");
    const auto sched_inv = NoiseSchedule::scaled_linear(cfg.steps_invert);
    DdimEngine engine(*a.denoiser, *a.text);
    bool cache_hit = false;
    const InvertedLatent inv = run.stage("invert", [&] {
        if (std::filesystem::exists(cache_path)) {
            cache_hit = true;
            report("invert", cfg.steps_invert, cfg.steps_invert);
            return load_inverted_latent(cache_path);
        }
        auto r = engine.invert(latent, conds.base, sched_inv, {cfg.fixed_point_iterations},
                               [&](int s, int n) { report("invert", s, n); });
        std::filesystem::create_directories(cache_path.parent_path());
        save_inverted_latent(cache_path, r);
        return r;
    });
    run.manifest()["inversion"] = {{"cache_key", key},
                                   {"cache_hit", cache_hit},
                                   {"steps", inv.steps},
                                   {"top_timestep", inv.top_timestep},
                                   {"guidance_scale", inv.guidance_scale_inversion},
                                   {"fixed_point_iterations", inv.fixed_point_iterations},
                                   {"trajectory_checksum", inv.trajectory_checksum},
                                   {"caption", inv.conditioning_text}};

    if (cfg.guidance_scale != 1.0) engine.set_unconditional(conds.uncond);
    const auto sched_gen = NoiseSchedule::scaled_linear(cfg.steps_generate);
    const LatentImage out_latent = run.stage("generate", [&] {
        return engine.generate(inv, conds.generation, cfg.guidance_scale, sched_gen,
                               [&](int s, int n) { report("generate", s, n); });
    });

    Image output = run.stage("decode", [&] {
        const Image core = a.codec->decode(cropped_latent(out_latent));
        Image full = paste(req.image, core, box);
        write_png(dir / "output.png", full);
        return full;
    });

    run.manifest()["generation"] = {{"steps", cfg.steps_generate},
                                    {"guidance_scale", cfg.guidance_scale},
                                    {"conditioning_mode", to_string(cfg.conditioning_mode)},
                                    {"conditioning_text", conds.generation.source_text}};
    run.manifest()["outputs"] = {{"input", "input.png"},
                                 {"output", "output.png"},
                                 {"output_sha256", image_sha256(output)}};
    run.manifest()["status"] = "succeeded";
    run.write();

    EditResult res;
    res.output_image = std::move(output);
    res.caption_pair = pair;
    res.direction_norm = dnorm;
    res.timings = run.timings();
    res.manifest_id = id;
    res.run_dir = dir;
    res.inversion_cache_hit = cache_hit;
    res.manifest = run.manifest();
    report("done", 1, 1);
    return res;
}

InversionOutcome Editor::invert(const Image& image, const std::string& image_id, const std::string& caption,
                                int steps, int fixed_point_iterations, const ProgressCallback& progress) {
    std::lock_guard lock(mutex_);
    if (image.empty()) throw ContractError("invert: empty image");
    if (steps < 1) throw ConfigError("steps_invert", "must be >= 1");
    if (fixed_point_iterations < 0) throw ConfigError("fixed_point_iterations", "must be >= 0");
    InversionOutcome out;
    const std::string id = image_id.empty() ? image_sha256(image).substr(0, 16) : image_id;
    out.caption = caption.empty() ? before_caption(*adapters_.captioner, image, id) : normalize_whitespace(caption);
    if (out.caption.empty()) throw ContractError("invert: caption is empty");
    const CropBox box = center_crop_box(image.width, image.height, adapters_.codec->factor());
    out.cache_key = inversion_cache_key(crop(image, box), out.caption, steps, fixed_point_iterations);
    out.cache_path = out_dir_ / "cache" / "inversions" / (out.cache_key + ".bin");
    if (std::filesystem::exists(out.cache_path)) {
        out.cache_hit = true;
        out.latent = load_inverted_latent(out.cache_path);
        return out;
    }
    DdimEngine engine(*adapters_.denoiser, *adapters_.text);
    out.latent = engine.invert(adapters_.codec->encode(image), adapters_.text->embed(out.caption),
                               NoiseSchedule::scaled_linear(steps), {fixed_point_iterations},
                               [&](int s, int n) {
                                   if (progress) progress("invert", s, n);
                               });
    std::filesystem::create_directories(out.cache_path.parent_path());
    save_inverted_latent(out.cache_path, out.latent);
    return out;
}

void Editor::check_rerun_artifacts(const std::string& manifest_id) const {
    const json parent = load_manifest(manifest_id);
    if (parent.value("status", "") != "succeeded")
        throw CacheMissError("run '" + manifest_id + "' did not complete");
    const auto parent_dir = run_dir(manifest_id);
    const std::string key = parent.at("inversion").at("cache_key").get<std::string>();
    const auto cache_path = out_dir_ / "cache" / "inversions" / (key + ".bin");
    for (const auto& p : {cache_path, parent_dir / "base.bin", parent_dir / "direction.bin", parent_dir / "input.png"})
        if (!std::filesystem::exists(p)) throw CacheMissError("missing cached artifact " + p.string());
}

EditResult Editor::rerun_with_weight(const std::string& manifest_id, double weight, const ProgressCallback& progress) {
    std::lock_guard lock(mutex_);
    auto report = [&](const std::string& s, int i, int n) {
        if (progress) progress(s, i, n);
    };
    check_rerun_artifacts(manifest_id);
    const json parent = load_manifest(manifest_id);
    const auto parent_dir = run_dir(manifest_id);
    EditConfig cfg = edit_config_from_json(parent.at("config"));
    cfg.weight = weight;
    cfg.validate();

    const std::string key = parent.at("inversion").at("cache_key").get<std::string>();
    const auto cache_path = out_dir_ / "cache" / "inversions" / (key + ".bin");

    Sha256 h;
    h.update(manifest_id);
    h.update(to_json(cfg).dump());
    const std::string id = h.hex_digest().substr(0, 16);
    const auto dir = run_dir(id);

    json manifest = parent;
    manifest.erase("timings");
    manifest.erase("error");
    manifest["id"] = id;
    manifest["kind"] = "rerun";
    manifest["parent"] = manifest_id;
    manifest["created_at"] = utc_now();
    manifest["config"] = to_json(cfg);
    RunRecorder run(dir, std::move(manifest));

    struct Loaded {
        Image input;
        TextConditioning generation;
        std::optional<TextConditioning> uncond;
        EditDirection direction;
        InvertedLatent inv;
    };
    const Loaded in = run.stage("load", [&] {
        Loaded l;
        l.input = read_png(parent_dir / "input.png");
        l.direction = load_direction(parent_dir / "direction.bin");
        l.direction.weight = weight;
        const auto base = load_conditioning(parent_dir / "base.bin");
        if (cfg.conditioning_mode == ConditioningMode::full)
            l.generation = apply(l.direction, base, weight, cfg.allow_zero_weight);
        else
            l.generation = load_conditioning(parent_dir / "cond.bin");
        if (cfg.guidance_scale != 1.0) l.uncond = load_conditioning(parent_dir / "uncond.bin");
        l.inv = load_inverted_latent(cache_path);
        std::filesystem::copy_file(parent_dir / "input.png", dir / "input.png",
                                   std::filesystem::copy_options::overwrite_existing);
        save_conditioning(dir / "base.bin", base);
        save_direction(dir / "direction.bin", l.direction);
        if (cfg.conditioning_mode != ConditioningMode::full) save_conditioning(dir / "cond.bin", l.generation);
        if (l.uncond) save_conditioning(dir / "uncond.bin", *l.uncond);
        return l;
    });
    run.manifest()["direction"]["weight"] = weight;
    run.manifest()["direction"]["shift_norm"] = shift_norm(in.direction, weight);
    run.manifest()["inversion"]["cache_hit"] = true;

    DdimEngine engine(*adapters_.denoiser, *adapters_.text);
    if (in.uncond) engine.set_unconditional(*in.uncond);
    const auto sched_gen = NoiseSchedule::scaled_linear(cfg.steps_generate);
    const LatentImage out_latent = run.stage("generate", [&] {
        return engine.generate(in.inv, in.generation, cfg.guidance_scale, sched_gen,
                               [&](int s, int n) { report("generate", s, n); });
    });
    const CropBox box = center_crop_box(in.input.width, in.input.height, adapters_.codec->factor());
    Image output = run.stage("decode", [&] {
        const Image core = adapters_.codec->decode(cropped_latent(out_latent));
        Image full = paste(in.input, core, box);
        write_png(dir / "output.png", full);
        return full;
    });
    run.manifest()["generation"]["conditioning_text"] = in.generation.source_text;
    run.manifest()["outputs"]["output_sha256"] = image_sha256(output);
    run.manifest()["status"] = "succeeded";
    run.write();

    EditResult res;
    res.output_image = std::move(output);
    res.caption_pair = caption_pair_from_json(parent.at("caption_pair"));
    res.direction_norm = kernels::norm(in.direction.delta_tokens.values());
    res.timings = run.timings();
    res.manifest_id = id;
    res.run_dir = dir;
    res.inversion_cache_hit = true;
    res.manifest = run.manifest();
    report("done", 1, 1);
    return res;
}

}  // namespace ddimedit
