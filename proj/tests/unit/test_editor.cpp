#include <doctest.h>

#include "ddimedit/editor.hpp"
#include "ddimedit/errors.hpp"
#include "ddimedit/image.hpp"
#include "ddimedit/mock_adapters.hpp"
#include "test_paths.hpp"

using namespace ddimedit;

namespace {

Image gradient(int w, int h) {
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto* p = img.at(x, y);
            p[0] = static_cast<std::uint8_t>(40 + 4 * x);
            p[1] = static_cast<std::uint8_t>(20 + 5 * y);
            p[2] = static_cast<std::uint8_t>((x * y) % 200);
        }
    return img;
}

EditRequest request(const std::string& instruction = "add a hat") {
    EditRequest r;
    r.image = gradient(44, 37);
    r.image_id = "ex1";
    r.instruction = instruction;
    r.config.steps_invert = 10;
    r.config.steps_generate = 10;
    return r;
}

MockOptions options() {
    MockOptions o;
    o.captions["ex1"] = "a photo of a man standing in a field";
    return o;
}

}  // namespace

TEST_CASE("mock edit is deterministic and keeps the input size") {
    const auto dir = test_paths::scratch("editor_determinism");
    Editor a(make_mock_adapters(options()), dir / "a");
    Editor b(make_mock_adapters(options()), dir / "b");
    const auto ra = a.edit(request());
    const auto rb = b.edit(request());
    CHECK(ra.output_image.width == 44);
    CHECK(ra.output_image.height == 37);
    CHECK(ra.manifest_id == rb.manifest_id);
    CHECK(read_file(ra.run_dir / "output.png") == read_file(rb.run_dir / "output.png"));
    CHECK(ra.output_image != request().image);
    CHECK(ra.caption_pair.before.at(0) == "a photo of a man standing in a field");
    CHECK(ra.direction_norm > 0.0);
    const auto m = a.load_manifest(ra.manifest_id);
    CHECK(m.at("status") == "succeeded");
    for (const char* key : {"models", "config", "caption_pair", "template", "inversion", "direction", "outputs"})
        CHECK(m.contains(key));
    CHECK(m.at("inversion").at("cache_hit") == false);
    CHECK(edit_config_from_json(m.at("config")).steps_invert == 10);
}

TEST_CASE("second edit of the same image and caption reuses the inversion") {
    const auto dir = test_paths::scratch("editor_cache");
    Editor ed(make_mock_adapters(options()), dir);
    const auto first = ed.edit(request("add a hat"));
    const auto second = ed.edit(request("make it night"));
    CHECK_FALSE(first.inversion_cache_hit);
    CHECK(second.inversion_cache_hit);
    CHECK(first.manifest.at("inversion").at("cache_key") == second.manifest.at("inversion").at("cache_key"));
    auto other = request("add a hat");
    other.config.steps_invert = 12;
    CHECK_FALSE(ed.edit(other).inversion_cache_hit);
}

TEST_CASE("rerun_with_weight") {
    const auto dir = test_paths::scratch("editor_rerun");
    auto adapters = make_mock_adapters(options());
    Editor ed(adapters, dir);
    const auto base = ed.edit(request());
    const auto calls_caption = adapters.counters->caption.load();
    const auto calls_llm = adapters.counters->generate_text.load();
    const auto calls_embed = adapters.counters->embed_text.load();

    const auto r075 = ed.rerun_with_weight(base.manifest_id, 0.75);
    const auto r100 = ed.rerun_with_weight(base.manifest_id, 1.0);
    const auto r125 = ed.rerun_with_weight(base.manifest_id, 1.25);
    CHECK(adapters.counters->caption == calls_caption);
    CHECK(adapters.counters->generate_text == calls_llm);
    CHECK(adapters.counters->embed_text == calls_embed);

    CHECK(r100.output_image == base.output_image);
    CHECK(r075.output_image != r100.output_image);
    CHECK(r125.output_image != r100.output_image);
    CHECK(r075.output_image != r125.output_image);
    CHECK(ed.load_manifest(r125.manifest_id).at("parent") == base.manifest_id);

    SUBCASE("equals a cold edit at the same weight") {
        Editor cold(make_mock_adapters(options()), dir / "cold");
        auto req = request();
        req.config.weight = 1.25;
        CHECK(cold.edit(req).output_image == r125.output_image);
    }
    SUBCASE("missing cache is an explicit cache miss") {
        std::filesystem::remove_all(dir / "cache");
        CHECK_THROWS_AS(ed.rerun_with_weight(base.manifest_id, 1.25), CacheMissError);
    }
    SUBCASE("unknown runs") {
        CHECK_THROWS_AS(ed.rerun_with_weight("0123456789abcdef", 1.0), NotFoundError);
        CHECK_THROWS_AS(ed.rerun_with_weight("../etc", 1.0), NotFoundError);
        CHECK_THROWS_AS(ed.rerun_with_weight(base.manifest_id, -1.0), ConfigError);
    }
}

TEST_CASE("conditioning modes give distinct outputs") {
    const auto dir = test_paths::scratch("editor_modes");
    Editor ed(make_mock_adapters(options()), dir);
    auto req = request();
    const auto full = ed.edit(req);
    req.config.conditioning_mode = ConditioningMode::instruction_only;
    const auto instr = ed.edit(req);
    req.config.conditioning_mode = ConditioningMode::after_caption_only;
    const auto after = ed.edit(req);
    CHECK(full.output_image != instr.output_image);
    // one caption per side with the captioner as base: base + 1 * (after - base) is the after-caption
    CHECK(mean_abs_pixel_error(full.output_image, after.output_image) < 0.5);
    auto heavier = request();
    heavier.config.weight = 1.25;
    CHECK(ed.edit(heavier).output_image != after.output_image);
    CHECK(instr.manifest.at("generation").at("conditioning_text") == "add a hat");
    CHECK(ed.rerun_with_weight(instr.manifest_id, 1.25).output_image == instr.output_image);
}

TEST_CASE("zero weight reconstructs through the base caption") {
    const auto dir = test_paths::scratch("editor_zero");
    auto opts = options();
    opts.predictor = "zero";
    opts.codec_factor = 1;
    Editor ed(make_mock_adapters(opts), dir);
    auto req = request();
    req.config.weight = 0.0;
    CHECK_THROWS_AS(ed.edit(req), ConfigError);
    req.config.allow_zero_weight = true;
    req.config.guidance_scale = 1.0;
    const auto res = ed.edit(req);
    CHECK(mean_abs_pixel_error(res.output_image, req.image) < 1.0);
}

TEST_CASE("caption overrides skip the captioner and LLM") {
    const auto dir = test_paths::scratch("editor_override");
    auto adapters = make_mock_adapters(options());
    Editor ed(adapters, dir);
    auto req = request();
    req.overrides.before = "a red barn";
    req.overrides.after = "a blue barn";
    const auto res = ed.edit(req);
    CHECK(adapters.counters->caption == 0);
    CHECK(adapters.counters->generate_text == 0);
    CHECK(res.caption_pair.after == std::vector<std::string>{"a blue barn"});
    CHECK(res.manifest.at("request").at("after_override") == "a blue barn");
}

TEST_CASE("stage failures are recorded in the manifest") {
    const auto dir = test_paths::scratch("editor_failure");
    auto opts = options();
    opts.llm_synthesize_unscripted = false;
    Editor ed(make_mock_adapters(opts), dir);
    try {
        ed.edit(request());
        FAIL("expected StageError");
    } catch (const StageError& e) {
        CHECK(e.stage() == "caption");
        CHECK(e.cause_kind() == "adapter_unavailable");
    }
    std::string id;
    for (const auto& entry : std::filesystem::directory_iterator(dir / "runs")) id = entry.path().filename().string();
    const auto m = ed.load_manifest(id);
    CHECK(m.at("status") == "failed");
    CHECK(m.at("error").at("stage") == "caption");
    CHECK(std::filesystem::exists(dir / "runs" / id / "input.png"));
}

TEST_CASE("request validation") {
    const auto dir = test_paths::scratch("editor_validation");
    Editor ed(make_mock_adapters(options()), dir);
    auto req = request("   ");
    CHECK_THROWS_AS(ed.edit(req), ContractError);
    req = request();
    req.config.steps_generate = 0;
    CHECK_THROWS_AS(ed.edit(req), ConfigError);
    req = request();
    req.config.caption.n_captions = 2;
    CHECK_THROWS_AS(ed.edit(req), StageError);
}

TEST_CASE("progress reports every stage") {
    const auto dir = test_paths::scratch("editor_progress");
    Editor ed(make_mock_adapters(options()), dir);
    std::vector<std::string> stages;
    int gen_steps = 0;
    ed.edit(request(), [&](const std::string& s, int, int total) {
        if (stages.empty() || stages.back() != s) stages.push_back(s);
        if (s == "generate") {
            ++gen_steps;
            CHECK(total == 10);
        }
    });
    CHECK(stages == std::vector<std::string>{"caption", "invert", "generate", "done"});
    CHECK(gen_steps == 10);
}
