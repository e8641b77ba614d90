// Real-model pilot and conditioning ablation on a small MagicBrush test
// sample. Needs a real-profile config whose servers are reachable and an
// imported dataset; otherwise every criterion prints BLOCKED and the exit
// status is 77 (ctest skip).
//
//   ddimedit_pilot --config real.json --dataset data/magicbrush [--n 20]
//   ddimedit_pilot --dry-run          mock adapters on a synthetic dataset;
//                                     exercises the harness, judges nothing

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ddimedit/cli.hpp"
#include "ddimedit/errors.hpp"
#include "ddimedit/evaluation.hpp"
#include "ddimedit/image.hpp"

using namespace ddimedit;
namespace fs = std::filesystem;

namespace {

constexpr int kPilotExamples = 20;
constexpr int kPilotSteps = 50;
constexpr double kLowWeight = 0.75;
constexpr double kHighWeight = 1.25;
// reference: ~30 s per image at 100 inversion + 100 generation steps
constexpr double kReferenceSeconds = 30.0;
constexpr int kReferenceTotalSteps = 200;
constexpr double kWallTimeFactor = 2.0;
constexpr int kSkip = 77;

const char* const kCriteria[] = {"pilot.edit_effect_clip_t", "pilot.weight_trend_clip_i", "pilot.wall_time",
                                 "ablation.full_vs_instruction_only"};

int blocked(const std::string& reason) {
    for (const char* c : kCriteria) std::printf("BLOCKED  %-36s %s\n", c, reason.c_str());
    return kSkip;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

double mean_of(const BatchResult& r, const std::string& key) {
    auto it = r.summary.means.find(key);
    if (it == r.summary.means.end()) throw std::runtime_error("no values for " + key);
    return it->second;
}

double mean_seconds(const BatchResult& r) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& rec : r.records)
        if (rec.status == "ok") {
            s += rec.seconds;
            ++n;
        }
    return n ? s / static_cast<double>(n) : 0.0;
}

fs::path synthetic_dataset(const fs::path& dir, int n) {
    Dataset ds;
    ds.root = dir;
    ds.name = "synthetic";
    fs::create_directories(dir / "img");
    for (int i = 0; i < n; ++i) {
        DatasetExample ex;
        ex.example_id = "syn" + std::to_string(i);
        ex.source_image = dir / "img" / (ex.example_id + "-in.png");
        ex.target_image = dir / "img" / (ex.example_id + "-out.png");
        Image a(32, 32), b(32, 32);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                auto* p = a.at(x, y);
                auto* q = b.at(x, y);
                p[0] = static_cast<std::uint8_t>(17 * i + 5 * x);
                p[1] = static_cast<std::uint8_t>(3 * y);
                p[2] = static_cast<std::uint8_t>(90 + i);
                q[0] = static_cast<std::uint8_t>(p[0] / 2);
                q[1] = static_cast<std::uint8_t>(p[1] + 40);
                q[2] = p[2];
            }
        write_png(ex.source_image, a);
        write_png(ex.target_image, b);
        ex.instruction = i % 2 ? "make the sky green" : "add snow on the ground";
        ex.target_caption = i % 2 ? "a field under a green sky" : "a snowy field";
        ds.splits["test"].push_back(ex);
    }
    save_dataset(ds);
    return dir;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"real-model pilot and ablation", "ddimedit_pilot"};
    std::string config_path, dataset_dir, split = "test";
    std::string out_dir = (fs::temp_directory_path() / "ddimedit-pilot").string();
    int n = kPilotExamples, steps = kPilotSteps, workers = 1;
    bool dry_run = false;
    app.add_option("--config", config_path, "config with a real adapter profile")->envname("DDIMEDIT_PILOT_CONFIG");
    app.add_option("--dataset", dataset_dir, "imported MagicBrush dataset")->envname("DDIMEDIT_PILOT_DATASET");
    app.add_option("--split", split, "split");
    app.add_option("--n", n, "examples")->check(CLI::PositiveNumber);
    app.add_option("--steps", steps, "inversion and generation steps")->check(CLI::PositiveNumber);
    app.add_option("--workers", workers, "parallel editors")->check(CLI::PositiveNumber);
    app.add_option("--out", out_dir, "working directory");
    app.add_flag("--dry-run", dry_run, "mock adapters, synthetic data, no verdicts");
    CLI11_PARSE(app, argc, argv);

    cli::AppConfig cfg;
    try {
        if (dry_run) {
            cfg.adapters.profile = "mock";
            dataset_dir = synthetic_dataset(fs::path(out_dir) / "synthetic", n).string();
        } else {
            if (config_path.empty()) return blocked("no real-profile config (--config or DDIMEDIT_PILOT_CONFIG)");
            cfg = cli::load_app_config(config_path);
            apply_env_overrides(cfg.adapters);
            if (cfg.adapters.profile != "real") return blocked("config profile is '" + cfg.adapters.profile + "', not real");
            if (dataset_dir.empty() || !fs::exists(fs::path(dataset_dir) / "manifest.json"))
                return blocked("no imported dataset (--dataset or DDIMEDIT_PILOT_DATASET)");
            AdapterSet probe = make_adapters(cfg.adapters);
            probe.text->embed("probe");
        }
    } catch (const TransportError& e) {
        return blocked(std::string("model servers unreachable: ") + e.what());
    } catch (const std::exception& e) {
        return blocked(cli::error_line(e));
    }

    try {
        const Dataset ds = load_dataset(dataset_dir);
        std::vector<DatasetExample> examples = ds.split(split);
        if (examples.size() > static_cast<std::size_t>(n)) examples.resize(static_cast<std::size_t>(n));

        EditConfig base = cfg.edit;
        base.steps_invert = steps;
        base.steps_generate = steps;
        base.validate();

        auto run = [&](const std::string& name, double weight, ConditioningMode mode) {
            EditConfig ec = base;
            ec.weight = weight;
            ec.conditioning_mode = mode;
            BatchOptions opts;
            opts.out_dir = fs::path(out_dir) / name;
            opts.workers = workers;
            opts.refs = ReferenceSet::tgt;
            opts.on_record = [&](const EvalRecord& r, std::size_t done, std::size_t total) {
                std::fprintf(stderr, "[%s %zu/%zu] %s %s %.1fs\n", name.c_str(), done, total, r.example_id.c_str(),
                             r.status.c_str(), r.seconds);
            };
            BatchResult res = run_batch(examples, ec, cfg.adapters, opts);
            write_report(opts.out_dir, res, ec, opts.refs);
            return res;
        };

        const BatchResult full = run("full_w1", 1.0, ConditioningMode::full);
        const BatchResult low = run("full_w0.75", kLowWeight, ConditioningMode::full);
        const BatchResult high = run("full_w1.25", kHighWeight, ConditioningMode::full);
        const BatchResult instr = run("instruction_only_w1", 1.0, ConditioningMode::instruction_only);

        const char* verdict_pass = dry_run ? "DRYRUN" : "PASS";
        const char* verdict_fail = dry_run ? "DRYRUN" : "FAIL";
        bool all = true;
        auto line = [&](bool ok, const char* name, const std::string& detail) {
            all = all && ok;
            std::printf("%-8s %-36s %s\n", ok ? verdict_pass : verdict_fail, name, detail.c_str());
        };

        const double t_out = mean_of(full, "clip_t_tgt");
        const double t_in = mean_of(full, "clip_t_input_tgt");
        line(t_out > t_in, kCriteria[0], "CLIP-T(output, tgt) " + fmt(t_out) + " vs CLIP-T(input, tgt) " + fmt(t_in));

        const double i_low = mean_of(low, "clip_i_tgt");
        const double i_high = mean_of(high, "clip_i_tgt");
        line(i_low >= i_high, kCriteria[1], "CLIP-I w=0.75 " + fmt(i_low) + " vs w=1.25 " + fmt(i_high));

        const double budget = kWallTimeFactor * kReferenceSeconds * (2.0 * steps) / kReferenceTotalSteps;
        const double secs = mean_seconds(full);
        line(secs <= budget, kCriteria[2], fmt(secs) + " s per image (budget " + fmt(budget) + " s)");

        const double i_full = mean_of(full, "clip_i_tgt");
        const double i_instr = mean_of(instr, "clip_i_tgt");
        line(i_full > i_instr, kCriteria[3], "CLIP-I full " + fmt(i_full) + " vs instruction-only " + fmt(i_instr));

        std::printf("examples %zu, failures %zu/%zu/%zu/%zu, steps %d/%d\n", examples.size(), full.summary.failures,
                    low.summary.failures, high.summary.failures, instr.summary.failures, steps, steps);
        if (dry_run) return 0;
        return all ? 0 : 1;
    } catch (const std::exception& e) {
        std::printf("FAIL     pilot                                %s\n", cli::error_line(e).c_str());
        return 1;
    }
}
