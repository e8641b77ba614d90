#include <doctest.h>

#include <cmath>
#include <set>

#include "ddimedit/errors.hpp"
#include "ddimedit/image.hpp"
#include "ddimedit/metaprompt.hpp"
#include "ddimedit/mock_adapters.hpp"
#include "test_paths.hpp"

using namespace ddimedit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class SequenceLlm final : public TextGenerator {
public:
    explicit SequenceLlm(std::vector<std::string> replies) : replies_(std::move(replies)) {}
    std::string generate(std::string_view prompt, const LlmConfig&) override {
        prompts.emplace_back(prompt);
        return replies_[calls++ % replies_.size()];
    }
    std::string model_id() const override { return "sequence"; }
    std::size_t calls = 0;
    std::vector<std::string> prompts;

private:
    std::vector<std::string> replies_;
};

class ConstantScorer final : public PromptScorer {
public:
    explicit ConstantScorer(double v) : v_(v) {}
    double score_example(const std::string&, const DatasetExample& ex) override {
        if (ex.example_id == "broken") throw ContractError("boom");
        return v_;
    }
    std::string name() const override { return "constant"; }

private:
    double v_;
};

std::vector<DatasetExample> pool(int n) {
    std::vector<DatasetExample> out;
    for (int i = 0; i < n; ++i) {
        DatasetExample ex;
        ex.example_id = "d" + std::to_string(i);
        ex.instruction = "change " + std::to_string(i);
        out.push_back(ex);
    }
    return out;
}

PromptCandidate cand(const std::string& text, double score, int born = 0) {
    return PromptCandidate{text, score, score, born};
}

const std::string kP1 =
    "Write a caption for the image obtained by applying the transformation [TRANSFORMATION] to the original caption "
    "[SOURCE_CAPTION].";
const std::string kP2 =
    "Create a new caption describing the image after [TRANSFORMATION] has been applied to the original caption "
    "[SOURCE_CAPTION].";
const std::string kP3 =
    "Compose an image caption that represents the image after the transformation [TRANSFORMATION] is applied to the "
    "original caption [SOURCE_CAPTION].";

}  // namespace

TEST_CASE("meta prompt with empty history is the meta-instruction alone") {
    OptimizerState st;
    const std::string m = build_meta_prompt(st);
    CHECK(m == kMetaInstruction);
    CHECK(m.rfind("I have a list of prompts, each with its corresponding score.", 0) == 0);
    CHECK(m.find("must always contain two placeholder fields [SOURCE_CAPTION] and [TRANSFORMATION]") != std::string::npos);
    CHECK(m.substr(m.size() - 31) == "aims to achieve a higher score.");
}

TEST_CASE("meta prompt renders history blocks in stored ascending order") {
    OptimizerState st;
    st.history = {cand(kP1, 6.44245171546936), cand(kP2, 6.690672039985657), cand(kP3, 6.857702553272247)};
    const std::string m = build_meta_prompt(st);
    const std::string expect_tail = "prompt: \"" + kP1 + "\"\nscore: 6.44245171546936\n\n" + "prompt: \"" + kP2 +
                                    "\"\nscore: 6.690672039985657\n\n" + "prompt: \"" + kP3 +
                                    "\"\nscore: 6.857702553272247\n\n";
    CHECK(m == std::string(kMetaInstruction) + "\n\n" + expect_tail);

    OptimizerState one;
    one.history = {cand(kP2, 4.0)};
    const std::string m1 = build_meta_prompt(one);
    std::size_t blocks = 0;
    for (std::size_t p = m1.find("prompt: \""); p != std::string::npos; p = m1.find("prompt: \"", p + 1)) ++blocks;
    CHECK(blocks == 1);
    CHECK(m1.find("score: 4\n") != std::string::npos);
}

TEST_CASE("candidate parsing") {
    CHECK(parse_prompt_candidates("prompt: \"" + kP1 + "\"") == std::vector<std::string>{kP1});
    CHECK(parse_prompt_candidates("Sure!\nPrompt: \"" + kP1 + "\"\nscore: 7\nprompt: \"" + kP2 + "\"") ==
          std::vector<std::string>{kP1, kP2});
    CHECK(parse_prompt_candidates("prompt: " + kP3 + "\nthanks") == std::vector<std::string>{kP3});
    CHECK(parse_prompt_candidates("prompt: \xE2\x80\x9C" + kP2 + "\xE2\x80\x9D") == std::vector<std::string>{kP2});
    // fallback: longest placeholder line
    CHECK(parse_prompt_candidates("Here is one:\n\"" + kP1 + "\"\nUse [SOURCE_CAPTION] [TRANSFORMATION]") ==
          std::vector<std::string>{kP1});
    CHECK(parse_prompt_candidates("nothing useful").empty());
    CHECK(valid_prompt_template(kP1));
    CHECK(!valid_prompt_template("Describe [SOURCE_CAPTION] after the edit."));
}

TEST_CASE("propose returns n valid candidates with born_step") {
    OptimizerState st;
    st.step = 4;
    SequenceLlm llm({"prompt: \"" + kP1 + "\"", "prompt: \"" + kP2 + "\""});
    const auto r = propose(st, llm, ProposeOptions{});
    REQUIRE(r.candidates.size() == 2);
    CHECK(r.candidates[0].template_text == kP1);
    CHECK(r.candidates[1].template_text == kP2);
    CHECK(r.candidates[0].born_step == 4);
    CHECK(r.llm_calls == 2);
    CHECK(r.warnings.empty());
    CHECK(llm.prompts.at(0) == build_meta_prompt(st));
}

TEST_CASE("propose rejects a candidate missing a placeholder and consumes a retry") {
    OptimizerState st;
    SequenceLlm llm({"prompt: \"Describe [SOURCE_CAPTION] after the edit.\"", "prompt: \"" + kP1 + "\"",
                     "prompt: \"" + kP2 + "\""});
    const auto r = propose(st, llm, ProposeOptions{});
    REQUIRE(r.candidates.size() == 2);
    CHECK(r.llm_calls == 3);
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].find("missing placeholder") != std::string::npos);
    for (const auto& c : r.candidates) CHECK(valid_prompt_template(c.template_text));
}

TEST_CASE("propose drops candidates after 3 attempts and flags an empty step") {
    OptimizerState st;
    st.history = {cand(kP1, 1.0)};
    SequenceLlm llm({"prompt: \"" + kP1 + "\"", "no prompt here"});
    const auto r = propose(st, llm, ProposeOptions{});
    CHECK(r.candidates.empty());
    CHECK(r.llm_calls == 6);
    CHECK(r.warnings.back().find("history only") != std::string::npos);
}

TEST_CASE("score_prompt sums per-example scores; failures count 0") {
    ConstantScorer s(0.5);
    const auto p = cand(kP1, 0.0);
    CHECK(score_prompt(p, pool(8), s).sum == doctest::Approx(4.0));
    auto ex = pool(8);
    ex[3].example_id = "broken";
    const auto r = score_prompt(p, ex, s);
    CHECK(r.sum == doctest::Approx(3.5));
    CHECK(r.failures.size() == 1);
    CHECK(r.per_example[3] == 0.0);
}

TEST_CASE("example sampling is seeded, without replacement, per step") {
    const auto pl = pool(30);
    const auto a = sample_examples(pl, 8, 7, 3);
    const auto b = sample_examples(pl, 8, 7, 3);
    const auto c = sample_examples(pl, 8, 7, 4);
    REQUIRE(a.size() == 8);
    std::set<std::string> ids;
    for (const auto& e : a) ids.insert(e.example_id);
    CHECK(ids.size() == 8);
    std::vector<std::string> ia, ib, ic;
    for (std::size_t i = 0; i < 8; ++i) {
        ia.push_back(a[i].example_id);
        ib.push_back(b[i].example_id);
        ic.push_back(c[i].example_id);
    }
    CHECK(ia == ib);
    CHECK(ia != ic);
    CHECK(sample_examples(pool(3), 8, 0, 0).size() == 3);
}

TEST_CASE("20-step optimization under a fixed scorer") {
    AdapterSet a = make_mock_adapters(MockOptions{});
    TextHashScorer scorer(1);
    OptimizerConfig cfg;
    cfg.seed = 11;
    const auto r = optimize(pool(20), *a.llm, scorer, cfg);
    REQUIRE(r.trace.size() == 20);
    CHECK(r.state.step == 20);
    double prev = -1.0;
    for (const auto& rec : r.trace) {
        const auto& hist = rec.at("history");
        CHECK(hist.size() <= 3);
        CHECK(hist.size() >= 1);
        for (std::size_t i = 0; i < hist.size(); ++i) {
            CHECK(valid_prompt_template(hist[i].at("template_text").get<std::string>()));
            if (i) CHECK(hist[i - 1].at("score").get<double>() <= hist[i].at("score").get<double>());
        }
        const double best = rec.at("best_score").get<double>();
        CHECK(best >= prev);
        prev = best;
        CHECK(rec.at("examples").size() == 8);
        // sums of 8 per-example scores in [0.75, 0.90]
        CHECK(best >= 6.0);
        CHECK(best <= 7.2);
    }
    CHECK(a.counters->generate_text >= 40);
}

TEST_CASE("resumed optimization reproduces the uninterrupted trace") {
    const auto dir = test_paths::scratch("metaprompt_resume");
    TextHashScorer scorer(2);
    OptimizerConfig cfg;
    cfg.seed = 5;
    cfg.initial_prompts = {kP1};

    cfg.out_dir = dir / "full";
    AdapterSet a = make_mock_adapters(MockOptions{});
    const auto full = optimize(pool(12), *a.llm, scorer, cfg);

    cfg.out_dir = dir / "split";
    cfg.on_step = [](const json& rec) {
        if (rec.at("step") == 6) throw std::runtime_error("stop");
    };
    {
        AdapterSet b = make_mock_adapters(MockOptions{});
        CHECK_THROWS_WITH(optimize(pool(12), *b.llm, scorer, cfg), "stop");
    }
    CHECK(read_trace(cfg.out_dir / "trace.jsonl").size() == 7);
    cfg.on_step = nullptr;
    AdapterSet c = make_mock_adapters(MockOptions{});
    const auto resumed = optimize(pool(12), *c.llm, scorer, cfg);
    CHECK(resumed.trace == full.trace);
    CHECK(read_trace(cfg.out_dir / "trace.jsonl") == full.trace);
    CHECK(c.counters->generate_text < a.counters->generate_text);

    cfg.seed = 6;
    CHECK_THROWS_AS(optimize(pool(12), *c.llm, scorer, cfg), ConfigError);
}

TEST_CASE("ties keep the older candidate") {
    SequenceLlm llm({"prompt: \"" + kP2 + "\"", "prompt: \"" + kP3 + "\""});
    ConstantScorer s(0.5);
    OptimizerConfig cfg;
    cfg.steps = 2;
    cfg.top_k = 2;
    cfg.initial_prompts = {kP1};
    const auto r = optimize(pool(8), llm, s, cfg);
    // every candidate ties at 4.0; born -1 and step 0 survive over step 1
    const auto& hist = r.state.history;
    REQUIRE(hist.size() == 2);
    CHECK(hist.back().born_step == -1);
    CHECK(hist.front().born_step == 0);
}

TEST_CASE("pipeline CLIP-I scorer is reproducible under mock adapters") {
    const auto dir = test_paths::scratch("metaprompt_clipi");
    std::vector<DatasetExample> exs;
    for (int i = 0; i < 2; ++i) {
        DatasetExample ex;
        ex.example_id = "m" + std::to_string(i);
        ex.source_image = dir / (ex.example_id + "-in.png");
        ex.target_image = dir / (ex.example_id + "-out.png");
        Image src(24, 16), tgt(24, 16);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 24; ++x) {
                src.at(x, y)[0] = static_cast<std::uint8_t>(x * 9 + i * 40);
                tgt.at(x, y)[1] = static_cast<std::uint8_t>(y * 13 + i * 20);
            }
        write_png(ex.source_image, src);
        write_png(ex.target_image, tgt);
        ex.instruction = "make it green";
        exs.push_back(ex);
    }
    EditConfig ec;
    ec.steps_invert = 3;
    ec.steps_generate = 3;
    double first = 0;
    for (int run = 0; run < 2; ++run) {
        AdapterSet a = make_mock_adapters(MockOptions{});
        Editor editor(a, dir / ("out" + std::to_string(run)));
        ClipIScorer scorer(editor, ec);
        const auto s = score_prompt(cand(kP1, 0), exs, scorer);
        CHECK(s.failures.empty());
        CHECK(s.sum != 0.0);
        CHECK(std::abs(s.sum) <= 2.0);
        if (run == 0) first = s.sum;
        else CHECK(s.sum == first);
        CHECK(a.counters->generate_text == 2);
    }
}

TEST_CASE("trace curve renders as SVG") {
    ConstantScorer s(0.8);
    SequenceLlm llm({"prompt: \"" + kP2 + "\"", "prompt: \"" + kP3 + "\"", "prompt: \"" + kP1 + "\""});
    OptimizerConfig cfg;
    cfg.steps = 3;
    const auto r = optimize(pool(8), llm, s, cfg);
    const std::string svg = render_trace_svg(r.trace);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("<polyline") != std::string::npos);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(render_trace_svg({}).find("</svg>") != std::string::npos);
}
