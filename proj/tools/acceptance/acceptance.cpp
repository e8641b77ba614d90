// Acceptance suite: one PASS/FAIL line per model-free criterion, then a
// summary line. Exit status 0 only when every line passes.
//
//   ddimedit_acceptance [--fixtures DIR] [--scratch DIR]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ddimedit/cli.hpp"
#include "ddimedit/ddim.hpp"
#include "ddimedit/direction.hpp"
#include "ddimedit/evaluation.hpp"
#include "ddimedit/image.hpp"
#include "ddimedit/metaprompt.hpp"
#include "ddimedit/mock_adapters.hpp"

using namespace ddimedit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kStepTol = 1e-6;
constexpr int kStepTriples = 1000;
constexpr double kRoundTripTol = 1e-4;
constexpr int kRoundTripSteps = 50;
constexpr int kFixedPointIterations = 10;
constexpr double kDdimBudgetS = 10.0;

constexpr double kDirectionTol = 1e-6;
constexpr int kDirectionTrials = 200;
constexpr double kDirectionBudgetS = 5.0;

constexpr double kBleuTol = 5e-5;  // agreement to 4 decimals
constexpr std::size_t kBleuPairs = 50;
constexpr double kCosineTol = 1e-6;

constexpr int kOptimizerSteps = 20;
constexpr std::size_t kHistoryMax = 3;
constexpr int kResumeStopStep = 7;
constexpr double kOptimizerBudgetS = 30.0;

struct Line {
    bool pass;
    std::string name;
    std::string detail;
};

std::vector<Line> g_lines;

void report(bool pass, const std::string& name, const std::string& detail) {
    g_lines.push_back({pass, name, detail});
    std::printf("%s  %-34s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
}

void note(const std::string& text) { std::printf("      note: %s\n", text.c_str()); }

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs `body`; an exception fails the criterion with its message.
void criterion(const std::string& name, const std::function<void()>& body) {
    try {
        body();
    } catch (const std::exception& e) {
        report(false, name, std::string("threw: ") + e.what());
    }
}

Tensor gaussian(std::mt19937_64& rng, std::vector<std::int64_t> shape) {
    std::normal_distribution<float> d(0.0f, 1.0f);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = d(rng);
    return t;
}

LatentImage wrap(Tensor t) {
    LatentImage li;
    li.width = static_cast<int>(t.dim(2)) * 8;
    li.height = static_cast<int>(t.dim(1)) * 8;
    li.original_width = li.width;
    li.original_height = li.height;
    li.data = std::move(t);
    return li;
}

double round_trip(NoisePredictor& pred, int fixed_point_iterations) {
    MockTextEmbedder emb(MockOptions{});
    DdimEngine engine(pred, emb);
    const auto sched = NoiseSchedule::scaled_linear(kRoundTripSteps);
    std::mt19937_64 rng(11);
    const auto z0 = wrap(gaussian(rng, {4, 8, 8}));
    const auto cond = emb.embed("a photo of a cat");
    const auto inv = engine.invert(z0, cond, sched, {fixed_point_iterations});
    return relative_error(engine.generate(inv, cond, 1.0, sched).data, z0.data);
}

void ddim_algebra() {
    const auto t0 = std::chrono::steady_clock::now();
    // invert then step over random (z, eps, alpha_bar_t < alpha_bar_prev)
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> ua(1e-3, 0.999);
    double worst_step = 0.0;
    for (int i = 0; i < kStepTriples; ++i) {
        double a = ua(rng), b = ua(rng);
        if (a == b) b = a * 0.5;
        const auto sched = NoiseSchedule::from_alphas({1.0, std::max(a, b), std::min(a, b)}, {1, 2});
        const int t_prev = (i % 4 == 0) ? 0 : 1;  // a quarter land on the clean end
        const auto z = gaussian(rng, {64});
        const auto eps = gaussian(rng, {64});
        const auto back = ddim_step(ddim_invert_step(z, eps, 2, t_prev, sched), eps, 2, t_prev, sched);
        worst_step = std::max(worst_step, relative_error(back, z));
    }

    ZeroNoisePredictor zero;
    FrozenRandomNoisePredictor frozen(5);
    LinearNoisePredictor linear(0.1);
    const double e_zero = round_trip(zero, 0);
    const double e_frozen = round_trip(frozen, 0);
    const double e_linear = round_trip(linear, kFixedPointIterations);
    const double e_linear_lag = round_trip(linear, 0);
    const double secs = seconds_since(t0);

    report(worst_step < kStepTol, "ddim.step_identity",
           "max rel err " + fmt(worst_step) + " over " + std::to_string(kStepTriples) + " triples (tol " +
               fmt(kStepTol) + ")");
    report(e_zero < kRoundTripTol, "ddim.round_trip.zero", "rel err " + fmt(e_zero) + " (tol " + fmt(kRoundTripTol) + ")");
    report(e_frozen < kRoundTripTol, "ddim.round_trip.frozen_random",
           "rel err " + fmt(e_frozen) + " (tol " + fmt(kRoundTripTol) + ")");
    report(e_linear < kRoundTripTol, "ddim.round_trip.linear",
           "rel err " + fmt(e_linear) + " with " + std::to_string(kFixedPointIterations) +
               " fixed-point iterations (tol " + fmt(kRoundTripTol) + ")");
    note("linear predictor with the single-evaluation estimate: rel err " + fmt(e_linear_lag));
    report(secs < kDdimBudgetS, "ddim.runtime", fmt(secs) + " s (budget " + fmt(kDdimBudgetS) + " s)");
}

void edit_direction() {
    const auto t0 = std::chrono::steady_clock::now();
    MockTextEmbedder emb(MockOptions{});
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> word(0, 9);
    const char* words[] = {"red", "barn", "snow", "cat", "sunset", "glass", "forest", "old", "bright", "river"};
    auto sentence = [&] {
        std::string s = "a photo of";
        for (int k = 0; k < 4; ++k) s += std::string(" ") + words[word(rng)];
        return s;
    };
    auto shift = [](const TextConditioning& c, const TextConditioning& base) {
        Tensor out(c.tokens_embedded.shape());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = static_cast<float>(static_cast<double>(c.tokens_embedded[i]) - base.tokens_embedded[i]);
        return out;
    };
    double zero_err = 0.0, anti_err = 0.0, lin_err = 0.0, ratio_err = 0.0;
    std::uniform_real_distribution<double> uw(0.1, 2.0);
    int nonzero = 0;
    for (int i = 0; i < kDirectionTrials; ++i) {
        const auto before = emb.embed(sentence());
        const auto after = emb.embed(sentence());
        const auto d = direction(before, after);
        const auto r = direction(after, before);
        const double scale = std::max(1.0, l2_norm(before.tokens_embedded));
        zero_err = std::max(zero_err, relative_error(apply(d, before, 0.0, true).tokens_embedded, before.tokens_embedded));
        for (std::size_t k = 0; k < d.delta_tokens.size(); ++k)
            anti_err = std::max(anti_err, std::abs(static_cast<double>(d.delta_tokens[k]) + r.delta_tokens[k]));
        if (l2_norm(d.delta_tokens) == 0.0) continue;
        ++nonzero;
        const double w = uw(rng);
        const auto s1 = shift(apply(d, before, w), before);
        const auto s2 = shift(apply(d, before, 2 * w), before);
        double num = 0.0;
        for (std::size_t k = 0; k < s1.size(); ++k) num = std::max(num, std::abs(s2[k] - 2.0 * s1[k]));
        lin_err = std::max(lin_err, num / scale);
        const double hi = l2_norm(shift(apply(d, before, 1.25), before));
        const double lo = l2_norm(shift(apply(d, before, 0.75), before));
        ratio_err = std::max(ratio_err, std::abs(hi / lo - 1.25 / 0.75));
    }
    const double secs = seconds_since(t0);
    const std::string over = " over " + std::to_string(kDirectionTrials) + " pairs (tol " + fmt(kDirectionTol) + ")";
    report(zero_err < kDirectionTol, "direction.zero_identity", "max rel err " + fmt(zero_err) + over);
    report(anti_err < kDirectionTol, "direction.antisymmetry", "max abs err " + fmt(anti_err) + over);
    report(lin_err < kDirectionTol && nonzero > 0, "direction.weight_linearity", "max err " + fmt(lin_err) + over);
    report(ratio_err < kDirectionTol && nonzero > 0, "direction.norm_ratio_1.25/0.75",
           "max |ratio - 5/3| " + fmt(ratio_err) + over);
    report(secs < kDirectionBudgetS, "direction.runtime", fmt(secs) + " s (budget " + fmt(kDirectionBudgetS) + " s)");
}

void metrics(const fs::path& fixtures) {
    std::ifstream in(fixtures / "bleu_corpus.tsv");
    if (!in) throw std::runtime_error("missing " + (fixtures / "bleu_corpus.tsv").string());
    double worst = 0.0;
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line);) {
        std::istringstream ls(line);
        std::string cand, ref, score;
        std::getline(ls, cand, '\t');
        std::getline(ls, ref, '\t');
        std::getline(ls, score, '\t');
        worst = std::max(worst, std::abs(bleu4(cand, ref) - std::stod(score)));
        ++rows;
    }
    report(rows == kBleuPairs && worst < kBleuTol, "metrics.bleu4_oracle",
           "max |diff| " + fmt(worst) + " over " + std::to_string(rows) + " pairs (tol " + fmt(kBleuTol) + ")");

    AdapterSet a = make_mock_adapters(MockOptions{});
    Image img(32, 24);
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 32; ++x) {
            auto* p = img.at(x, y);
            p[0] = static_cast<std::uint8_t>(7 * x);
            p[1] = static_cast<std::uint8_t>(11 * y);
            p[2] = static_cast<std::uint8_t>(x * y);
        }
    const double ci = std::abs(clip_i(img, img, a) - 1.0);
    const double cc = std::abs(caption_cosine("a dog on a red couch", "a dog on a red couch", a) - 1.0);
    report(std::max(ci, cc) < kCosineTol, "metrics.cosine_self_similarity",
           "image |1 - cos| " + fmt(ci) + ", caption |1 - cos| " + fmt(cc) + " (tol " + fmt(kCosineTol) + ")");
}

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

void optimizer(const fs::path& scratch) {
    const auto t0 = std::chrono::steady_clock::now();
    TextHashScorer scorer(1);
    OptimizerConfig cfg;
    cfg.steps = kOptimizerSteps;
    cfg.seed = 11;
    cfg.out_dir = scratch / "optimize_full";
    fs::remove_all(cfg.out_dir);
    AdapterSet a = make_mock_adapters(MockOptions{});
    const auto full = optimize(pool(20), *a.llm, scorer, cfg);

    bool monotone = true, bounded = true, placeholders = true;
    double prev = -1e300;
    std::size_t longest = 0;
    for (const auto& rec : full.trace) {
        const double best = rec.at("best_score").get<double>();
        monotone = monotone && best >= prev;
        prev = best;
        const auto& hist = rec.at("history");
        longest = std::max(longest, hist.size());
        bounded = bounded && hist.size() <= kHistoryMax;
        for (const auto& h : hist) placeholders = placeholders && valid_prompt_template(h.at("template_text").get<std::string>());
    }

    cfg.out_dir = scratch / "optimize_split";
    fs::remove_all(cfg.out_dir);
    cfg.on_step = [](const json& rec) {
        if (rec.at("step") == kResumeStopStep - 1) throw std::runtime_error("interrupted");
    };
    bool interrupted = false;
    try {
        AdapterSet b = make_mock_adapters(MockOptions{});
        optimize(pool(20), *b.llm, scorer, cfg);
    } catch (const std::runtime_error&) {
        interrupted = true;
    }
    const std::size_t partial = read_trace(cfg.out_dir / "trace.jsonl").size();
    cfg.on_step = nullptr;
    AdapterSet c = make_mock_adapters(MockOptions{});
    const auto resumed = optimize(pool(20), *c.llm, scorer, cfg);
    const double secs = seconds_since(t0);

    report(full.trace.size() == static_cast<std::size_t>(kOptimizerSteps), "metaprompt.completes",
           std::to_string(full.trace.size()) + "/" + std::to_string(kOptimizerSteps) + " steps, best " + fmt(prev));
    report(monotone, "metaprompt.best_monotone", monotone ? "non-decreasing at every step" : "best score decreased");
    report(bounded, "metaprompt.history_bound",
           "max history " + std::to_string(longest) + " (limit " + std::to_string(kHistoryMax) + ")");
    report(placeholders, "metaprompt.placeholders", placeholders ? "every retained prompt has both" : "missing placeholder");
    const bool same = interrupted && partial == static_cast<std::size_t>(kResumeStopStep) && resumed.trace == full.trace;
    report(same, "metaprompt.resume_equivalence",
           "stopped after " + std::to_string(partial) + " steps; resumed trace " +
               (resumed.trace == full.trace ? "equals" : "differs from") + " uninterrupted");
    report(secs < kOptimizerBudgetS, "metaprompt.runtime", fmt(secs) + " s (budget " + fmt(kOptimizerBudgetS) + " s)");
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

json run_cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    if (const int code = cli::run(args, out, err); code != 0)
        throw std::runtime_error("ddimedit " + args.front() + " exited " + std::to_string(code) + ": " + err.str());
    return json::parse(out.str());
}

void end_to_end(const fs::path& scratch) {
    const fs::path dir = scratch / "e2e";
    fs::remove_all(dir);
    fs::create_directories(dir);
    Image img(64, 48);
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 64; ++x) {
            auto* p = img.at(x, y);
            p[0] = static_cast<std::uint8_t>(4 * x);
            p[1] = static_cast<std::uint8_t>(5 * y);
            p[2] = static_cast<std::uint8_t>(200 - x - y);
        }
    write_png(dir / "input.png", img);
    auto edit = [&](const std::string& out) {
        return run_cli({"edit", "--profile", "mock", "--seed", "42", "--image", (dir / "input.png").string(),
                        "--instruction", "make it look like winter", "--out", (dir / out).string()});
    };
    const json a = edit("a");
    const json b = edit("b");
    const std::string pa = file_bytes(a.at("output").get<std::string>());
    const std::string pb = file_bytes(b.at("output").get<std::string>());
    const bool identical = !pa.empty() && pa == pb && a.at("manifest_id") == b.at("manifest_id");
    report(identical, "e2e.edit_byte_identical",
           std::string("output.png ") + (pa == pb ? "identical" : "differs") + " (" + std::to_string(pa.size()) +
               " bytes), manifest id " + (a.at("manifest_id") == b.at("manifest_id") ? "identical" : "differs"));

    const json r = run_cli({"rerun", "--profile", "mock", "--manifest", a.at("manifest_id"), "--weight", "0.75,1.25",
                            "--out", (dir / "a").string()});
    const auto llm = r.at("calls").at("llm").get<std::uint64_t>();
    const auto cap = r.at("calls").at("captioner").get<std::uint64_t>();
    report(llm == 0 && cap == 0 && r.at("results").size() == 2, "e2e.rerun_zero_llm_captioner",
           "2 reruns: " + std::to_string(llm) + " LLM calls, " + std::to_string(cap) + " captioner calls");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"model-free acceptance suite", "ddimedit_acceptance"};
    std::string fixtures = DDIMEDIT_ACCEPTANCE_FIXTURES;
    std::string scratch = (fs::temp_directory_path() / "ddimedit-acceptance").string();
    app.add_option("--fixtures", fixtures, "directory holding bleu_corpus.tsv");
    app.add_option("--scratch", scratch, "working directory");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(scratch);

    criterion("ddim", ddim_algebra);
    criterion("direction", edit_direction);
    criterion("metrics", [&] { metrics(fixtures); });
    criterion("metaprompt", [&] { optimizer(scratch); });
    criterion("e2e", [&] { end_to_end(scratch); });

    std::size_t failed = 0;
    for (const auto& l : g_lines) failed += !l.pass;
    std::printf("%s  %zu/%zu criteria passed\n", failed ? "FAIL" : "PASS", g_lines.size() - failed, g_lines.size());
    return failed ? 1 : 0;
}
