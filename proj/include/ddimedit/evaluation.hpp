#pragma once

// Benchmark ingestion, image-editing metrics, and the batch harness.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddimedit/adapter_config.hpp"
#include "ddimedit/editor.hpp"

namespace ddimedit {

// ---- metrics ---------------------------------------------------------------

// Moses tokenizer, English rules, no XML escaping, no aggressive dash split.
std::vector<std::string> moses_tokenize(std::string_view text);

// Sentence-level 4-gram BLEU on Moses tokens, uniform weights, brevity
// penalty, no smoothing, scaled to [0, 100]. Any empty n-gram precision
// (including candidates shorter than 4 tokens) scores 0.
double bleu4(std::string_view candidate, std::string_view reference);

// Corpus-level BLEU: n-gram counts summed before taking precisions.
double corpus_bleu4(const std::vector<std::string>& candidates, const std::vector<std::string>& references);

// Cosine of image embedding and pooled text embedding.
double clip_t(const Image& output, const std::string& caption, AdapterSet& adapters, const std::string& image_id = "");
double clip_i(const Image& output, const Image& reference, AdapterSet& adapters);
double caption_cosine(const std::string& candidate, const std::string& reference, AdapterSet& adapters);

// ---- dataset -----------------------------------------------------------------

struct DatasetExample {
    std::string example_id;
    std::filesystem::path source_image;
    std::filesystem::path target_image;
    std::string instruction;
    std::optional<std::string> target_caption;  // absent in the dev split
    std::optional<std::string> source_caption;  // gold input caption when the source provides one
};

// Dataset directory: manifest.json = {"name", "splits": {"<split>": [example...]}}
// with image paths relative to the directory.
struct Dataset {
    std::filesystem::path root;
    std::string name;
    std::map<std::string, std::vector<DatasetExample>> splits;

    const std::vector<DatasetExample>& split(const std::string& name) const;  // NotFoundError
};

Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const Dataset& ds);

// Converts a MagicBrush distribution per split directory
//   <src>/<split>/edit_sessions.json, <src>/<split>/images/<img_id>/...
//   optional <src>/<split>/global_descriptions.json
// into the dataset layout under `dst`. Every turn becomes one example
// "<img_id>-<turn>" (input -> output image); captions come from the global
// descriptions when present. Returns the number of examples per split.
std::map<std::string, std::size_t> import_magicbrush(const std::filesystem::path& src, const std::filesystem::path& dst);

// ---- batch harness -------------------------------------------------------------

struct EvalRecord {
    std::string example_id;
    std::string status = "ok";  // ok | failed
    std::string error;
    std::string error_kind;
    std::optional<double> clip_t_tgt, clip_i_tgt, clip_t_src, clip_i_src;
    std::optional<double> bleu, caption_cosine;
    std::optional<double> clip_t_input_tgt;  // unedited input vs target caption (edit-effect baseline)
    std::string manifest_id;
    std::string after_caption;
    double seconds = 0.0;
};

nlohmann::json to_json(const EvalRecord& r);
EvalRecord eval_record_from_json(const nlohmann::json& j);

struct EvalSummary {
    std::size_t count = 0;
    std::size_t failures = 0;
    std::map<std::string, double> means;   // metric -> arithmetic mean over ok records
    std::map<std::string, std::size_t> n;  // metric -> records contributing
};

EvalSummary summarize(const std::vector<EvalRecord>& records);
nlohmann::json to_json(const EvalSummary& s);

enum class ReferenceSet { tgt, src, both };
ReferenceSet reference_set_from_string(const std::string& s);

struct BatchOptions {
    std::filesystem::path out_dir;  // records.jsonl, report.json, report.md, runs/
    int workers = 1;
    ReferenceSet refs = ReferenceSet::both;
    // Records already in records.jsonl with status ok are skipped.
    bool resume = true;
    // Called under the batch lock after each record is persisted; throwing
    // stops the batch (remaining examples stay pending for a resume).
    std::function<void(const EvalRecord&, std::size_t done, std::size_t total)> on_record;
};

struct BatchResult {
    std::vector<EvalRecord> records;  // in example order
    EvalSummary summary;
    std::size_t skipped = 0;          // satisfied from a previous run
};

// Each worker builds its own adapter set from `adapter_cfg`.
BatchResult run_batch(const std::vector<DatasetExample>& examples, const EditConfig& cfg,
                      const AdapterConfig& adapter_cfg, const BatchOptions& opts);

// Same, on a caller-owned adapter set (single worker).
BatchResult run_batch(const std::vector<DatasetExample>& examples, const EditConfig& cfg, AdapterSet& adapters,
                      const BatchOptions& opts);

// Scores one example end to end; throws on pipeline failure.
EvalRecord evaluate_example(const DatasetExample& ex, const EditConfig& cfg, Editor& editor, ReferenceSet refs);

std::string render_report_markdown(const BatchResult& result, const EditConfig& cfg, ReferenceSet refs);
void write_report(const std::filesystem::path& out_dir, const BatchResult& result, const EditConfig& cfg,
                  ReferenceSet refs);

std::vector<EvalRecord> read_records(const std::filesystem::path& jsonl);

}  // namespace ddimedit
