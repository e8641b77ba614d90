#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "ddimedit/errors.hpp"
#include "ddimedit/evaluation.hpp"
#include "ddimedit/image.hpp"
#include "ddimedit/mock_adapters.hpp"
#include "test_paths.hpp"

using namespace ddimedit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

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

// n examples with alternating instructions under dir.
Dataset make_dataset(const fs::path& dir, int n) {
    Dataset ds;
    ds.root = dir;
    ds.name = "fixture";
    fs::create_directories(dir / "img");
    for (int i = 0; i < n; ++i) {
        DatasetExample ex;
        ex.example_id = "ex" + std::to_string(i);
        ex.source_image = dir / "img" / (ex.example_id + "-in.png");
        ex.target_image = dir / "img" / (ex.example_id + "-out.png");
        write_png(ex.source_image, pattern(24 + 8 * i, 24, i));
        write_png(ex.target_image, pattern(24 + 8 * i, 24, i + 100));
        ex.instruction = i % 2 ? "make it red" : "add snow";
        ex.target_caption = i % 2 ? "a red object on a table" : "a snowy street at night";
        ds.splits["test"].push_back(ex);
    }
    save_dataset(ds);
    return ds;
}

EditConfig quick_config() {
    EditConfig c;
    c.steps_invert = 4;
    c.steps_generate = 4;
    return c;
}

MockOptions mock() {
    MockOptions o;
    o.captions["ex0"] = "a street at night";
    o.captions["ex1"] = "an object on a table";
    o.captions["ex2"] = "a street in the day";
    return o;
}

}  // namespace

TEST_CASE("tokenizer matches the reference tokenizer on the frozen corpus") {
    std::ifstream in(test_paths::fixtures() / "tokenize_corpus.json");
    REQUIRE(in);
    const json cases = json::parse(in);
    REQUIRE(cases.size() >= 30);
    for (const auto& c : cases) {
        const auto text = c.at("text").get<std::string>();
        CAPTURE(text);
        CHECK(moses_tokenize(text) == c.at("tokens").get<std::vector<std::string>>());
    }
}

TEST_CASE("bleu4 matches the reference implementation to 4 decimals") {
    std::ifstream in(test_paths::fixtures() / "bleu_corpus.tsv");
    REQUIRE(in);
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string cand, ref, score;
        std::getline(ls, cand, '\t');
        std::getline(ls, ref, '\t');
        std::getline(ls, score, '\t');
        CAPTURE(cand);
        CAPTURE(ref);
        CHECK(std::fabs(bleu4(cand, ref) - std::stod(score)) < 5e-5);
        ++rows;
    }
    CHECK(rows == 50);
}

TEST_CASE("corpus bleu matches the reference implementation") {
    std::ifstream in(test_paths::fixtures() / "bleu_corpus.tsv");
    std::vector<std::string> cands, refs;
    std::string line;
    while (std::getline(in, line)) {
        const auto a = line.find('\t');
        const auto b = line.find('\t', a + 1);
        cands.push_back(line.substr(0, a));
        refs.push_back(line.substr(a + 1, b - a - 1));
    }
    // make_bleu_fixtures.py --corpus
    CHECK(corpus_bleu4(cands, refs) == doctest::Approx(42.773584).epsilon(1e-8));
    CHECK_THROWS_AS(corpus_bleu4({"a"}, {}), ContractError);
}

TEST_CASE("bleu4 trivial cases") {
    CHECK(bleu4("a dog on a red couch", "a dog on a red couch") == doctest::Approx(100.0));
    CHECK(bleu4("completely unrelated words here", "a dog on a red couch") == 0.0);
    CHECK(bleu4("a dog", "a dog") == 0.0);  // no 4-grams
    CHECK(bleu4("", "a dog on a couch") == 0.0);
    const double s = bleu4("a dog on a couch", "a dog on a red couch");
    CHECK(s > 0.0);
    CHECK(s < 100.0);
}

TEST_CASE("similarity metrics are 1 on identical inputs") {
    AdapterSet a = make_mock_adapters(MockOptions{});
    const Image img = pattern(32, 24, 3);
    CHECK(std::fabs(clip_i(img, img, a) - 1.0) < 1e-6);
    CHECK(std::fabs(caption_cosine("a cat on a mat", "a cat on a mat", a) - 1.0) < 1e-6);
    const double t = clip_t(img, "a cat on a mat", a);
    CHECK(t >= -1.0);
    CHECK(t <= 1.0);
    CHECK(clip_i(img, pattern(32, 24, 90), a) < 1.0);
}

TEST_CASE("dataset round trips and rejects bad manifests") {
    const auto dir = test_paths::scratch("eval_dataset");
    make_dataset(dir / "ds", 2);
    const Dataset ds = load_dataset(dir / "ds");
    REQUIRE(ds.split("test").size() == 2);
    CHECK(ds.split("test")[1].target_caption == "a red object on a table");
    CHECK(ds.split("test")[0].source_image == dir / "ds" / "img" / "ex0-in.png");
    CHECK_THROWS_AS(ds.split("dev"), NotFoundError);
    CHECK_THROWS_AS(load_dataset(dir / "missing"), InputFormatError);

    fs::create_directories(dir / "bad");
    write_text_file(dir / "bad" / "manifest.json",
                    R"({"splits": {"test": [{"example_id": "a", "source_image": "x.png", "target_image": "y.png", "instruction": " "}]}})");
    CHECK_THROWS_AS(load_dataset(dir / "bad"), InputFormatError);
}

TEST_CASE("magicbrush import converts every turn") {
    const auto dir = test_paths::scratch("eval_magicbrush");
    const fs::path src = dir / "mb" / "test";
    fs::create_directories(src / "images" / "100");
    fs::create_directories(src / "images" / "200");
    write_png(src / "images" / "100" / "100-input.png", pattern(16, 16, 1));
    write_png(src / "images" / "100" / "100-output1.png", pattern(16, 16, 2));
    write_png(src / "images" / "100" / "100-output2.png", pattern(16, 16, 3));
    write_png(src / "images" / "200" / "200-input.png", pattern(16, 16, 4));
    write_png(src / "images" / "200" / "200-output1.png", pattern(16, 16, 5));
    write_text_file(src / "edit_sessions.json", R"({
      "100": [{"input": "100-input.png", "mask": "m.png", "output": "100-output1.png", "instruction": "add a hat"},
              {"input": "100-output1.png", "mask": "m.png", "output": "100-output2.png", "instruction": "make it blue"}],
      "200": [{"input": "200-input.png", "mask": "m.png", "output": "200-output1.png", "instruction": "remove the car"}]})");
    write_text_file(src / "global_descriptions.json", R"({
      "100": {"100-input.png": "a man", "100-output1.png": "a man in a hat", "100-output2.png": "a man in a blue hat"}})");
    const auto counts = import_magicbrush(dir / "mb", dir / "out");
    CHECK(counts.at("test") == 3);
    const Dataset ds = load_dataset(dir / "out");
    const auto& t = ds.split("test");
    REQUIRE(t.size() == 3);
    CHECK(t[0].example_id == "100-1");
    CHECK(t[0].source_caption == "a man");
    CHECK(t[1].target_caption == "a man in a blue hat");
    CHECK(t[1].source_image.filename() == "100-output1.png");
    CHECK(!t[2].target_caption.has_value());
    CHECK(read_png(t[2].target_image) == pattern(16, 16, 5));
}

TEST_CASE("batch of 3 mock examples: records, means, report") {
    const auto dir = test_paths::scratch("eval_batch");
    const Dataset ds = make_dataset(dir / "ds", 3);
    AdapterSet a = make_mock_adapters(mock());
    BatchOptions opts;
    opts.out_dir = dir / "run";
    const auto res = run_batch(ds.split("test"), quick_config(), a, opts);
    REQUIRE(res.records.size() == 3);
    CHECK(res.summary.count == 3);
    CHECK(res.summary.failures == 0);
    for (const char* m : {"clip_t_tgt", "clip_i_tgt", "clip_t_src", "clip_i_src", "bleu", "caption_cosine"}) {
        CAPTURE(m);
        double sum = 0;
        for (const auto& r : res.records) {
            const json j = to_json(r);
            REQUIRE(j.at(m).is_number());
            sum += j.at(m).get<double>();
        }
        CHECK(res.summary.means.at(m) == doctest::Approx(sum / 3.0).epsilon(1e-12));
        CHECK(res.summary.n.at(m) == 3);
    }
    for (const auto& r : res.records) {
        CHECK(*r.clip_i_tgt >= -1.0);
        CHECK(*r.clip_i_tgt <= 1.0);
        CHECK(*r.bleu >= 0.0);
        CHECK(*r.bleu <= 100.0);
    }
    write_report(opts.out_dir, res, quick_config(), ReferenceSet::both);
    const json report = json::parse(read_text_file(opts.out_dir / "report.json"));
    CHECK(report.at("summary").at("count") == 3);
    const std::string md = read_text_file(opts.out_dir / "report.md");
    CHECK(md.find("| CLIP-I Tgt | CLIP-T Tgt | CLIP-I Src | CLIP-T Src |") != std::string::npos);
    CHECK(read_records(opts.out_dir / "records.jsonl").size() == 3);

    // ordering does not change the means
    auto reversed = res.records;
    std::reverse(reversed.begin(), reversed.end());
    CHECK(summarize(reversed).means == res.summary.means);
}

TEST_CASE("batch resumes without recomputing finished examples") {
    const auto dir = test_paths::scratch("eval_resume");
    const Dataset ds = make_dataset(dir / "ds", 3);
    BatchOptions opts;
    opts.out_dir = dir / "run";
    opts.on_record = [](const EvalRecord&, std::size_t done, std::size_t) {
        if (done == 1) throw std::runtime_error("interrupted");
    };
    {
        AdapterSet a = make_mock_adapters(mock());
        CHECK_THROWS_WITH(run_batch(ds.split("test"), quick_config(), a, opts), "interrupted");
    }
    REQUIRE(read_records(opts.out_dir / "records.jsonl").size() == 1);

    opts.on_record = nullptr;
    AdapterSet a = make_mock_adapters(mock());
    const auto res = run_batch(ds.split("test"), quick_config(), a, opts);
    CHECK(res.skipped == 1);
    CHECK(res.records.size() == 3);
    CHECK(a.counters->caption == 2);  // example 1 was not captioned again

    // an uninterrupted run gives the same records
    BatchOptions fresh;
    fresh.out_dir = dir / "fresh";
    AdapterSet b = make_mock_adapters(mock());
    const auto full = run_batch(ds.split("test"), quick_config(), b, fresh);
    for (std::size_t i = 0; i < 3; ++i) {
        json x = to_json(res.records[i]), y = to_json(full.records[i]);
        x.erase("seconds");
        y.erase("seconds");
        CHECK(x == y);
    }
}

TEST_CASE("batch records per-example failures and continues") {
    const auto dir = test_paths::scratch("eval_failures");
    Dataset ds = make_dataset(dir / "ds", 2);
    auto examples = ds.split("test");
    fs::remove(examples[0].target_image);
    AdapterSet a = make_mock_adapters(mock());
    BatchOptions opts;
    opts.out_dir = dir / "run";
    const auto res = run_batch(examples, quick_config(), a, opts);
    CHECK(res.summary.failures == 1);
    CHECK(res.records[0].status == "failed");
    CHECK(res.records[0].error_kind == "input_format");
    CHECK(res.records[1].status == "ok");
    CHECK(res.summary.n.at("clip_i_tgt") == 1);
    CHECK(render_report_markdown(res, quick_config(), ReferenceSet::both).find("ex0") != std::string::npos);
}

TEST_CASE("worker fan-out gives the same records as one worker") {
    const auto dir = test_paths::scratch("eval_workers");
    const Dataset ds = make_dataset(dir / "ds", 3);
    AdapterConfig cfg;
    cfg.mock = mock();
    BatchOptions one, three;
    one.out_dir = dir / "one";
    three.out_dir = dir / "three";
    three.workers = 3;
    const auto r1 = run_batch(ds.split("test"), quick_config(), cfg, one);
    const auto r3 = run_batch(ds.split("test"), quick_config(), cfg, three);
    CHECK(r1.summary.means == r3.summary.means);
    for (std::size_t i = 0; i < 3; ++i) CHECK(r1.records[i].manifest_id == r3.records[i].manifest_id);
}

TEST_CASE("reference set selection") {
    CHECK(reference_set_from_string("src") == ReferenceSet::src);
    CHECK_THROWS_AS(reference_set_from_string("gold"), ConfigError);
    const auto dir = test_paths::scratch("eval_refs");
    const Dataset ds = make_dataset(dir / "ds", 1);
    AdapterSet a = make_mock_adapters(mock());
    Editor editor(a, dir / "run");
    const auto r = evaluate_example(ds.split("test")[0], quick_config(), editor, ReferenceSet::tgt);
    CHECK(r.clip_i_tgt.has_value());
    CHECK(!r.clip_i_src.has_value());
    CHECK(r.bleu.has_value());
}
