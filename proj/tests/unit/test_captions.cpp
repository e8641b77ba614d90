#include <doctest.h>

#include <fstream>

#include <json.hpp>

#include "ddimedit/captions.hpp"
#include "ddimedit/errors.hpp"
#include "ddimedit/mock_adapters.hpp"
#include "test_paths.hpp"

using namespace ddimedit;

namespace {

const char* kSimplified =
    "Given the caption '[CAPTION]' describing an image and a transformation '[TRANSFORMATION]' to be applied "
    "to the image, generate the caption of the image after applying the transformation.";

Image solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto* p = img.at(x, y);
            p[0] = r;
            p[1] = g;
            p[2] = b;
        }
    return img;
}

}  // namespace

TEST_CASE("placeholders are discovered from the text") {
    CHECK(find_placeholders(kSimplified) == std::set<std::string>{"CAPTION", "TRANSFORMATION"});
    CHECK(find_placeholders("[SOURCE_CAPTION] and [x] and [] and [TRANSFORMATION").size() == 1);
}

TEST_CASE("simplified template renders the documented sentence") {
    const auto t = PromptTemplate::make("simplified", kSimplified);
    const auto out = render_prompt(t, {{"CAPTION", "a brown teddy bear"}, {"TRANSFORMATION", "Make the teddy bear black"}});
    CHECK(out ==
          "Given the caption 'a brown teddy bear' describing an image and a transformation 'Make the teddy bear "
          "black' to be applied to the image, generate the caption of the image after applying the transformation.");
}

TEST_CASE("rendering rules") {
    SUBCASE("missing binding names the placeholder") {
        const auto t = PromptTemplate::make("t", "say [CAPTION] then [TRANSFORMATION]");
        try {
            render_prompt(t, {{"CAPTION", "x"}});
            FAIL("expected TemplateError");
        } catch (const TemplateError& e) {
            CHECK(e.placeholder() == "[TRANSFORMATION]");
        }
    }
    SUBCASE("placeholder-free template is unchanged") {
        const auto t = PromptTemplate::make("t", "no placeholders here [lower]");
        CHECK(render_prompt(t, {}) == "no placeholders here [lower]");
    }
    SUBCASE("single pass, no recursive expansion") {
        const auto t = PromptTemplate::make("t", "A=[CAPTION] B=[TRANSFORMATION]");
        const auto out = render_prompt(t, {{"CAPTION", "[TRANSFORMATION]"}, {"TRANSFORMATION", "edit"}});
        CHECK(out == "A=[TRANSFORMATION] B=edit");
        CHECK(render_prompt(PromptTemplate::literal(out), {}) == out);
    }
    SUBCASE("few-shot examples come first, in order") {
        const auto t = PromptTemplate::make("t", "Q [CAPTION]", {{"Q one", "A one"}, {"Q two", "A two"}});
        CHECK(t.shots() == 2);
        CHECK(render_prompt(t, {{"CAPTION", "three"}}) == "Q one\nA one\n\nQ two\nA two\n\nQ three");
    }
    SUBCASE("declared placeholders must match the text") {
        CHECK_THROWS_AS(PromptTemplate::make("t", "[CAPTION]", {}, TemplateOutput::after_only,
                                             std::set<std::string>{"CAPTION", "NUMBER"}),
                        TemplateError);
        CHECK_THROWS_AS(PromptTemplate::make("t", "[CAPTION] [NUMBER]", {}, TemplateOutput::after_only,
                                             std::set<std::string>{"CAPTION"}),
                        TemplateError);
    }
}

TEST_CASE("built-in templates load and match the shipped files") {
    const auto names = builtin_template_names();
    CHECK(names == std::vector<std::string>{"expressive", "simplified", "terse"});
    for (const auto& name : names) {
        CAPTURE(name);
        const auto builtin = load_template(name);
        const auto file = load_template(name, test_paths::templates());
        CHECK(builtin.template_text == file.template_text);
        CHECK(builtin.shots() == 3);
        for (int k : {0, 1, 3}) CHECK(builtin.with_shots(k).shots() == k);
        CHECK_THROWS_AS(builtin.with_shots(2), ConfigError);
    }
    CHECK(load_template("simplified").template_text == kSimplified);
    CHECK(load_template("simplified").output == TemplateOutput::after_only);
    CHECK(load_template("terse").template_text ==
          "Given the transformation '[TRANSFORMATION]' generate [NUMBER] image captions for before and after the "
          "transformation.");
    CHECK(load_template("expressive").required_placeholders == std::set<std::string>{"NUMBER", "TRANSFORMATION"});
    CHECK_THROWS_AS(load_template("nope"), ConfigError);
}

TEST_CASE("template file format errors") {
    CHECK_THROWS_AS(parse_template_file("no front matter", "x"), InputFormatError);
    CHECK_THROWS_AS(parse_template_file("---\nname: a\n---\n", "x"), InputFormatError);
    CHECK_THROWS_AS(parse_template_file("---\nshots: 2\n---\n@@ template\nhi\n", "x"), InputFormatError);
    CHECK_THROWS_AS(parse_template_file("---\n---\n@@ bogus\nhi\n", "x"), InputFormatError);
    const auto t = parse_template_file(
        "---\nname: mine\nplaceholders: [CAPTION]\nshots: 1\n---\n@@ template\nDo [CAPTION]\n@@ shot\n@@ prompt\nDo a\n"
        "@@ completion\nb\n",
        "x");
    CHECK(t.name == "mine");
    CHECK(t.few_shot_examples.at(0).prompt == "Do a");
    CHECK(t.few_shot_examples.at(0).completion == "b");
}

TEST_CASE("parse corpus: every fixture recovers exactly n captions") {
    std::ifstream in(test_paths::fixtures() / "parse_corpus.json");
    const auto corpus = nlohmann::json::parse(in);
    const auto rules = parse_rules_for("microsoft/phi-2");
    for (const auto& c : corpus) {
        CAPTURE(c.at("name").get<std::string>());
        const auto mode = template_output_from_string(c.at("mode"));
        const int n = c.at("n");
        const auto parsed = parse_completion(c.at("completion").get<std::string>(), mode, rules, n);
        std::vector<std::string> after(parsed.after.begin(), parsed.after.begin() + std::min<std::size_t>(n, parsed.after.size()));
        CHECK(after == c.at("after").get<std::vector<std::string>>());
        if (mode == TemplateOutput::before_after) {
            std::vector<std::string> before(parsed.before.begin(),
                                            parsed.before.begin() + std::min<std::size_t>(n, parsed.before.size()));
            CHECK(before == c.at("before").get<std::vector<std::string>>());
        }
    }
}

TEST_CASE("after_caption with a scripted LLM") {
    ScriptedTextGenerator llm({}, false);
    const auto tmpl = load_template("simplified").with_shots(0);
    const std::string prompt = render_prompt(tmpl, {{"CAPTION", "a cat"}, {"TRANSFORMATION", "add a hat"}});
    llm.set(prompt, "Caption: \"a cat wearing a hat\"\n");
    LlmConfig cfg;
    CHECK(after_caption("a cat", "add a hat", tmpl, llm, cfg) == std::vector<std::string>{"a cat wearing a hat"});

    llm.set(render_prompt(tmpl, {{"CAPTION", "a dog"}, {"TRANSFORMATION", "x"}}), "\n  \n");
    try {
        after_caption("a dog", "x", tmpl, llm, cfg);
        FAIL("expected CaptionParseError");
    } catch (const CaptionParseError& e) {
        CHECK(e.raw_completion() == "\n  \n");
    }
    CHECK_THROWS_AS(after_caption("", "x", tmpl, llm, cfg), ContractError);
    CHECK_THROWS_AS(after_caption("a dog", "  ", tmpl, llm, cfg), ContractError);
}

TEST_CASE("two-caption before/after completion parses into both lists") {
    ScriptedTextGenerator llm({}, false);
    const auto tmpl = load_template("terse").with_shots(0);
    const auto prompt = render_prompt(tmpl, {{"TRANSFORMATION", "Make the cat a dog"}, {"NUMBER", "2"}});
    CHECK(prompt ==
          "Given the transformation 'Make the cat a dog' generate 2 image captions for before and after the "
          "transformation.");
    llm.set(prompt,
            "Before transformation\n\nCaption 1: A photo of a tabby cat sleeping.\nCaption 2: A cat playing with a "
            "ball of yarn.\n\nAfter transformation\n\nCaption 1: A photo of a cute dog.\nCaption 2: A dog chewing on "
            "a bone.");
    const auto after = after_caption("a photo of a tabby cat sleeping", "Make the cat a dog", tmpl, llm, {}, 2);
    CHECK(after == std::vector<std::string>{"A photo of a cute dog.", "A dog chewing on a bone."});
}

TEST_CASE("caption config validation") {
    const auto simplified = load_template("simplified");
    const auto terse = load_template("terse");
    CaptionConfig c;
    CHECK_NOTHROW(c.validate(simplified));
    c.n_captions = 2;
    CHECK_THROWS_AS(c.validate(simplified), ConfigError);
    CHECK_NOTHROW(c.validate(terse));
    c.n_captions = 3;
    CHECK_THROWS_AS(c.validate(terse), ConfigError);
    c.n_captions = 1;
    c.before_source = BeforeSource::llm;
    CHECK_THROWS_AS(c.validate(simplified), ConfigError);
    CHECK_NOTHROW(c.validate(terse));
    c.shots = 2;
    CHECK_THROWS_AS(c.validate(terse), ConfigError);
    const auto round = caption_config_from_json(to_json(CaptionConfig{"terse", 3, 4, BeforeSource::llm, {}}));
    CHECK(round.template_name == "terse");
    CHECK(round.n_captions == 4);
    CHECK(round.before_source == BeforeSource::llm);
}

TEST_CASE("make_caption_pair grid") {
    MockOptions opts;
    opts.captions["ex1"] = "a photo of a tabby cat sleeping";
    const auto adapters = make_mock_adapters(opts);
    const auto img = solid(16, 16, 200, 120, 40);

    SUBCASE("default: one BLIP caption, one LLM caption") {
        const auto pair = make_caption_pair(img, "ex1", "Make the cat a dog", CaptionConfig{}, adapters);
        CHECK(pair.before == std::vector<std::string>{"a photo of a tabby cat sleeping"});
        CHECK(pair.after.size() == 1);
        CHECK(pair.before_source == BeforeSource::captioner);
        CHECK(pair.inversion_caption == "a photo of a tabby cat sleeping");
        CHECK(pair.prompt.find("'a photo of a tabby cat sleeping'") != std::string::npos);
        CHECK(adapters.counters->caption == 1);
        CHECK(adapters.counters->generate_text == 1);
        const auto again = make_caption_pair(img, "ex1", "Make the cat a dog", CaptionConfig{}, adapters);
        CHECK(again.after == pair.after);
    }
    SUBCASE("3-shot, 4 captions, BLIP first") {
        CaptionConfig c{"terse", 3, 4, BeforeSource::captioner, {}};
        const auto pair = make_caption_pair(img, "ex1", "Make the cat a dog", c, adapters);
        CHECK(pair.before.size() == 4);
        CHECK(pair.after.size() == 4);
        CHECK(pair.before[0] == "a photo of a tabby cat sleeping");
        CHECK(pair.before[1] != pair.before[0]);
    }
    SUBCASE("LLM-generated before captions") {
        CaptionConfig c{"expressive", 1, 2, BeforeSource::llm, {}};
        const auto pair = make_caption_pair(img, "ex1", "Make the cat a dog", c, adapters);
        CHECK(pair.before.size() == 2);
        CHECK(pair.after.size() == 2);
        CHECK(pair.before_source == BeforeSource::llm);
        CHECK(pair.inversion_caption == "a photo of a tabby cat sleeping");
    }
    SUBCASE("overrides skip the adapters") {
        CaptionOverrides o{std::string("a red barn"), std::string("a blue barn")};
        const auto pair = make_caption_pair(img, "ex1", "paint it blue", CaptionConfig{}, adapters, o);
        CHECK(pair.before == std::vector<std::string>{"a red barn"});
        CHECK(pair.after == std::vector<std::string>{"a blue barn"});
        CHECK(adapters.counters->caption == 0);
        CHECK(adapters.counters->generate_text == 0);
    }
    SUBCASE("degenerate 1x1 image still gets a caption") {
        CHECK_FALSE(before_caption(*adapters.captioner, solid(1, 1, 0, 0, 0), "tiny").empty());
    }
}

TEST_CASE("caption pair json round trip") {
    CaptionPair p;
    p.before = {"a", "b"};
    p.after = {"c", "d"};
    p.n_captions = 2;
    p.before_source = BeforeSource::llm;
    p.inversion_caption = "a";
    p.prompt = "q";
    p.raw_completion = "r";
    const auto back = caption_pair_from_json(to_json(p));
    CHECK(back.before == p.before);
    CHECK(back.after == p.after);
    CHECK(back.before_source == BeforeSource::llm);
    CHECK(back.raw_completion == "r");
}
