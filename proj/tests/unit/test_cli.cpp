#include <doctest.h>

#include <fstream>
#include <sstream>

#include "ddimedit/cli.hpp"
#include "ddimedit/errors.hpp"
#include "ddimedit/evaluation.hpp"
#include "ddimedit/image.hpp"
#include "ddimedit/metaprompt.hpp"
#include "test_paths.hpp"

using namespace ddimedit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
    json result() const { return json::parse(out); }
};

Run invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

Image pattern(int w, int h, int seed) {
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto* p = img.at(x, y);
            p[0] = static_cast<std::uint8_t>((seed * 37 + 3 * x) % 256);
            p[1] = static_cast<std::uint8_t>((seed * 11 + 5 * y) % 256);
            p[2] = static_cast<std::uint8_t>((seed * 53 + x * y) % 256);
        }
    return img;
}

fs::path make_dataset(const fs::path& dir, int n) {
    Dataset ds;
    ds.root = dir;
    ds.name = "cli";
    fs::create_directories(dir / "img");
    for (int i = 0; i < n; ++i) {
        DatasetExample ex;
        ex.example_id = "ex" + std::to_string(i);
        ex.source_image = dir / "img" / (ex.example_id + "-in.png");
        ex.target_image = dir / "img" / (ex.example_id + "-out.png");
        write_png(ex.source_image, pattern(24, 24, i));
        write_png(ex.target_image, pattern(24, 24, i + 50));
        ex.instruction = i % 2 ? "make it red" : "add snow";
        ex.target_caption = i % 2 ? "a red object" : "a snowy street";
        ds.splits["test"].push_back(ex);
        DatasetExample dev = ex;
        dev.example_id = "dev" + std::to_string(i);
        dev.target_caption.reset();
        ds.splits["dev"].push_back(dev);
    }
    save_dataset(ds);
    return dir;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("edit is reproducible and rerun skips captioning") {
    const auto dir = test_paths::scratch("cli_edit");
    write_png(dir / "in.png", pattern(40, 24, 1));
    const std::vector<std::string> edit{"edit",     "--image", (dir / "in.png").string(), "--instruction",
                                        "add snow", "--steps", "4",                       "--seed",
                                        "5",        "--out"};
    auto a_args = edit;
    a_args.push_back((dir / "a").string());
    auto b_args = edit;
    b_args.push_back((dir / "b").string());
    const Run a = invoke(a_args);
    const Run b = invoke(b_args);
    REQUIRE_MESSAGE(a.code == 0, a.err);
    REQUIRE(b.code == 0);
    const json ja = a.result(), jb = b.result();
    CHECK(ja.at("manifest_id") == jb.at("manifest_id"));
    CHECK(file_bytes(ja.at("output").get<std::string>()) == file_bytes(jb.at("output").get<std::string>()));

    const Run r = invoke({"rerun", "--manifest", ja.at("manifest_id"), "--weight", "0.75,1.25", "--out",
                       (dir / "a").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const json jr = r.result();
    CHECK(jr.at("results").size() == 2);
    CHECK(jr.at("calls").at("llm") == 0);
    CHECK(jr.at("calls").at("captioner") == 0);
    CHECK(jr.at("results")[0].at("inversion_cache_hit") == true);
    CHECK(jr.at("results")[0].at("manifest_id") != jr.at("results")[1].at("manifest_id"));

    // the command log records every invocation
    std::ifstream log(dir / "a" / "commands.jsonl");
    int lines = 0;
    for (std::string line; std::getline(log, line);) ++lines;
    CHECK(lines == 2);
}

TEST_CASE("edit with a weight grid returns one entry per weight") {
    const auto dir = test_paths::scratch("cli_grid");
    write_png(dir / "in.png", pattern(24, 24, 2));
    const Run r = invoke({"edit", "--image", (dir / "in.png").string(), "--instruction", "make it red", "--steps", "3",
                       "--weights", "0.75,1,1.25", "--out", (dir / "out").string(), "--output",
                       (dir / "copy.png").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const json j = r.result();
    REQUIRE(j.at("grid").size() == 3);
    CHECK(j.at("grid")[1].at("manifest_id") == j.at("manifest_id"));
    CHECK(j.at("grid")[0].at("weight") == 0.75);
    CHECK(fs::exists(dir / "copy.png"));
}

TEST_CASE("usage and configuration errors") {
    const auto dir = test_paths::scratch("cli_errors");
    write_png(dir / "in.png", pattern(16, 16, 3));
    const std::string out = (dir / "out").string();

    Run r = invoke({"edit", "--image", (dir / "in.png").string(), "--instruction", "x", "--bogus", "--out", out});
    CHECK(r.code == 2);
    CHECK(r.err.find("error: kind=usage") != std::string::npos);
    CHECK(invoke({}).code == 2);
    CHECK(invoke({"--help"}).code == 0);

    {
        std::ofstream(dir / "real.json") << R"({"adapters": {"profile": "real"}})";
    }
    r = invoke({"--config", (dir / "real.json").string(), "edit", "--image", (dir / "in.png").string(), "--instruction",
             "x", "--out", out});
    CHECK(r.code == 3);
    CHECK(r.err.find("kind=config key=roles.") != std::string::npos);

    {
        std::ofstream(dir / "bad.json") << R"({"edit": {"weight": 0}})";
    }
    r = invoke({"edit", "--config", (dir / "bad.json").string(), "--image", (dir / "in.png").string(), "--instruction",
             "x", "--out", out});
    CHECK(r.code == 3);
    CHECK(r.err.find("key=weight") != std::string::npos);

    r = invoke({"edit", "--image", (dir / "in.png").string(), "--instruction", "x", "--mode", "sideways", "--out", out});
    CHECK(r.code == 3);

    r = invoke({"rerun", "--manifest", "0123abcd", "--weight", "1", "--out", out});
    CHECK(r.code == 1);
    CHECK(r.err.rfind("error: kind=not_found message=", 0) == 0);

    r = invoke({"rerun", "--manifest", "0123abcd", "--weight", "big", "--out", out});
    CHECK(r.code == 3);
    CHECK(r.err.find("key=weights") != std::string::npos);

    CHECK_THROWS_AS(cli::app_config_from_json(json{{"adapter", json::object()}}), ConfigError);
    const auto cfg = cli::app_config_from_json(
        json{{"service", {{"port", 9000}, {"queue_capacity", 2}}}, {"optimizer", {{"steps", 4}}}});
    CHECK(cfg.port == 9000);
    CHECK(cfg.service.queue_capacity == 2);
    CHECK(cfg.optimizer.steps == 4);
}

TEST_CASE("error line format") {
    CHECK(cli::error_line(ConfigError("edit.weight", "bad")).rfind("error: kind=config key=edit.weight message=", 0) ==
          0);
    CHECK(cli::error_line(std::runtime_error("say \"hi\"")) == R"(error: kind=internal message="say \"hi\"")");
}

TEST_CASE("evaluate, report and invert") {
    const auto dir = test_paths::scratch("cli_eval");
    const auto ds = make_dataset(dir / "ds", 4);
    const std::string out = (dir / "out").string();

    Run r = invoke({"evaluate", "--dataset", ds.string(), "--limit", "3", "--steps", "3", "--out", out});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const fs::path records = dir / "out" / "eval" / "test" / "records.jsonl";
    CHECK(read_records(records).size() == 3);
    CHECK(fs::exists(dir / "out" / "eval" / "test" / "report.md"));

    // resumed: nothing recomputed
    r = invoke({"evaluate", "--dataset", ds.string(), "--limit", "3", "--steps", "3", "--out", out});
    REQUIRE(r.code == 0);
    CHECK(r.result().at("reports")[0].at("skipped") == 3);

    r = invoke({"evaluate", "--dataset", ds.string(), "--limit", "2", "--steps", "3", "--weights", "1,1.25", "--out",
             out, "--report-dir", (dir / "sweep").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(fs::exists(dir / "sweep" / "w1" / "records.jsonl"));
    CHECK(fs::exists(dir / "sweep" / "w1.25" / "records.jsonl"));
    CHECK(fs::exists(dir / "sweep" / "weights.md"));

    r = invoke({"report", "--records", records.string(), "--output", (dir / "rep").string(), "--out", out});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(fs::exists(dir / "rep" / "report.json"));

    CHECK(invoke({"evaluate", "--dataset", ds.string(), "--split", "nope", "--out", out}).code == 1);

    r = invoke({"invert", "--image", (dir / "ds" / "img" / "ex0-in.png").string(), "--steps", "3", "--out", out});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.result().at("cache_hit") == false);
    CHECK(fs::exists(r.result().at("cache_path").get<std::string>()));
    r = invoke({"invert", "--image", (dir / "ds" / "img" / "ex0-in.png").string(), "--steps", "3", "--out", out});
    CHECK(r.result().at("cache_hit") == true);
}

TEST_CASE("optimize-prompt writes a trace and its curve") {
    const auto dir = test_paths::scratch("cli_opt");
    const auto ds = make_dataset(dir / "ds", 4);
    const Run r = invoke({"optimize-prompt", "--dataset", ds.string(), "--steps", "3", "--examples-per-step", "2",
                       "--scorer", "text-hash", "--out", (dir / "out").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.result().at("steps") == 3);
    CHECK(read_trace(dir / "out" / "optimize" / "trace.jsonl").size() == 3);
    CHECK(file_bytes(dir / "out" / "optimize" / "trace.svg").rfind("<svg", 0) == 0);

    const Run rep = invoke({"report", "--trace", (dir / "out" / "optimize" / "trace.jsonl").string(), "--output",
                            (dir / "curve.svg").string(), "--out", (dir / "out").string()});
    REQUIRE(rep.code == 0);
    CHECK(file_bytes(dir / "curve.svg") == file_bytes(dir / "out" / "optimize" / "trace.svg"));
}
