#pragma once

// Meta-prompt optimization of the after-caption prompt: an LLM proposes new
// prompt templates from a scored history, each candidate is scored by
// editing a sample of examples with it, and the best three are kept.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddimedit/editor.hpp"
#include "ddimedit/evaluation.hpp"

namespace ddimedit {

extern const char* const kMetaInstruction;

struct PromptCandidate {
    std::string template_text;
    std::optional<double> score;       // on the latest step's sample
    std::optional<double> best_score;  // best over all steps it was scored in
    int born_step = 0;                 // -1 for seeded initial prompts
};

nlohmann::json to_json(const PromptCandidate& c);
PromptCandidate prompt_candidate_from_json(const nlohmann::json& j);

struct OptimizerState {
    std::vector<PromptCandidate> history;  // ascending by score, at most top_k
    int step = 0;                          // next step to run
    std::uint64_t rng_seed = 0;
    std::vector<DatasetExample> eval_pool;
};

nlohmann::json to_json(const OptimizerState& s);
OptimizerState optimizer_state_from_json(const nlohmann::json& j);

// Both [SOURCE_CAPTION] and [TRANSFORMATION] present.
bool valid_prompt_template(std::string_view text);

// Meta-instruction, then one block per history entry in stored order:
//   prompt: "<text>"
//   score: <shortest round-trip decimal>
// separated by blank lines.
std::string build_meta_prompt(const OptimizerState& state);

// Quoted text after each "prompt:" marker (rest of line when unquoted);
// when none of those is valid, the longest line containing both
// placeholders is appended.
std::vector<std::string> parse_prompt_candidates(std::string_view completion);

struct ProposeOptions {
    int n = 2;
    int max_attempts = 3;  // LLM calls per wanted candidate
    LlmConfig llm;         // seed is re-derived per call
};

struct ProposeResult {
    std::vector<PromptCandidate> candidates;
    std::vector<std::string> warnings;
    int llm_calls = 0;
};

// Candidates duplicating the history or each other count as invalid.
ProposeResult propose(const OptimizerState& state, TextGenerator& llm, const ProposeOptions& opts);

// Per-example score of a template; higher is better.
class PromptScorer {
public:
    virtual ~PromptScorer() = default;
    virtual double score_example(const std::string& template_text, const DatasetExample& ex) = 0;
    virtual std::string name() const = 0;
};

// Deterministic function of the template text alone, in [0.75, 0.90].
class TextHashScorer final : public PromptScorer {
public:
    explicit TextHashScorer(std::uint64_t seed = 0) : seed_(seed) {}
    double score_example(const std::string& template_text, const DatasetExample& ex) override;
    std::string name() const override { return "text-hash"; }

private:
    std::uint64_t seed_;
};

// Renders the template with the captioner's before-caption and the
// instruction, asks the LLM for the after-caption, runs the full edit with
// that caption pair, and returns CLIP-I against the gold image.
class ClipIScorer final : public PromptScorer {
public:
    ClipIScorer(Editor& editor, EditConfig cfg) : editor_(editor), cfg_(std::move(cfg)) {}
    double score_example(const std::string& template_text, const DatasetExample& ex) override;
    std::string name() const override { return "clip-i"; }

private:
    Editor& editor_;
    EditConfig cfg_;
};

struct PromptScore {
    double sum = 0.0;
    std::vector<double> per_example;
    std::vector<std::string> failures;  // "<example_id>: <error>"
};

// Sum over examples; a failing example contributes 0 and is logged.
PromptScore score_prompt(const PromptCandidate& p, const std::vector<DatasetExample>& examples,
                         PromptScorer& scorer);

// `k` examples without replacement, a pure function of (seed, step, pool).
std::vector<DatasetExample> sample_examples(const std::vector<DatasetExample>& pool, int k, std::uint64_t seed,
                                            int step);

struct OptimizerConfig {
    int steps = 20;
    int top_k = 3;
    int examples_per_step = 8;
    ProposeOptions propose;
    std::uint64_t seed = 0;
    std::vector<std::string> initial_prompts;  // scored at the first step
    std::filesystem::path out_dir;             // state.json, trace.jsonl; empty: in memory
    bool resume = true;
    // Called after each persisted step; throwing stops the run.
    std::function<void(const nlohmann::json& trace_record)> on_step;
};

struct OptimizeResult {
    OptimizerState state;
    std::vector<nlohmann::json> trace;  // one record per step, all steps so far
};

// One record per step: step, examples, proposals, scored (every candidate
// with score and best_score), history, best_score, warnings.
OptimizeResult optimize(const std::vector<DatasetExample>& pool, TextGenerator& llm, PromptScorer& scorer,
                        const OptimizerConfig& cfg);

std::vector<nlohmann::json> read_trace(const std::filesystem::path& jsonl);

// Score-versus-step curve (best retained score and the mean of the step's
// scored candidates) as a standalone SVG document.
std::string render_trace_svg(const std::vector<nlohmann::json>& trace);

}  // namespace ddimedit
