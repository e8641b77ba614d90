#pragma once

// Before/after caption generation: prompt templates, single-pass rendering,
// completion parsing and CaptionPair assembly.

#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddimedit/adapters.hpp"

namespace ddimedit {

struct FewShotExample {
    std::string prompt;  // already filled
    std::string completion;
};

// after_only templates ask for the after-edit caption(s) alone; before_after
// templates ask for both lists under "Before"/"After" section headers.
enum class TemplateOutput { after_only, before_after };

std::string to_string(TemplateOutput m);
TemplateOutput template_output_from_string(const std::string& s);

struct PromptTemplate {
    std::string name;
    std::string template_text;
    std::set<std::string> required_placeholders;  // names without brackets
    std::vector<FewShotExample> few_shot_examples;
    TemplateOutput output = TemplateOutput::after_only;

    int shots() const noexcept { return static_cast<int>(few_shot_examples.size()); }

    // Placeholders are derived from the text. Throws TemplateError when
    // `declared` is given and differs from them.
    static PromptTemplate make(std::string name, std::string text, std::vector<FewShotExample> shots = {},
                               TemplateOutput output = TemplateOutput::after_only,
                               const std::optional<std::set<std::string>>& declared = std::nullopt);
    // Plain text with no placeholders; rendering returns it unchanged.
    static PromptTemplate literal(std::string text);

    // Copy keeping the first k few-shot examples. k in {0, 1, 3} and no more
    // than are available; otherwise ConfigError.
    PromptTemplate with_shots(int k) const;
};

// Bracketed upper-case tokens such as [CAPTION] or [SOURCE_CAPTION].
std::set<std::string> find_placeholders(std::string_view text);

using Bindings = std::map<std::string, std::string>;

// Few-shot examples first, each as "<prompt>\n<completion>\n\n", then the
// filled template. Substitution is a single left-to-right pass: bound values
// are inserted literally and never re-scanned. Bindings for placeholders the
// template does not use are ignored.
std::string render_prompt(const PromptTemplate& tmpl, const Bindings& bindings);

// Template file format:
//
//   ---
//   name: terse
//   placeholders: TRANSFORMATION, NUMBER
//   output: before_after
//   shots: 3
//   ---
//   @@ template
//   <template text>
//   @@ shot
//   @@ prompt
//   <filled prompt>
//   @@ completion
//   <completion>
//   ...
//
// `shots` is the number of @@ shot sections. Text is trimmed per section.
PromptTemplate parse_template_file(std::string_view text, const std::string& origin);
PromptTemplate load_template_file(const std::filesystem::path& path);

// Loads "<dir>/<name>.tmpl" when dir is non-empty and the file exists,
// otherwise the built-in copy shipped with the library. Unknown names raise
// ConfigError.
PromptTemplate load_template(const std::string& name, const std::filesystem::path& dir = {});
std::vector<std::string> builtin_template_names();

// ---------------------------------------------------------------------------
// Completion parsing
//
// 1. Cut the completion at the first stop token (</s>, <|eot_id|>, ...).
// 2. Split on newlines and trim; drop blank lines and echoed "Instruct:" lines;
//    drop a leading "Output:" label.
// 3. A line that is only a section header ("Before transformation",
//    "After-edit captions:", "**After**") switches the current section. A
//    header followed by a colon and text ("After: a red car") switches and
//    keeps the text as a caption.
// 4. Strip enumeration labels repeatedly from the line start: "Caption 2:",
//    "Caption:", "1.", "2)", "(3)", "-", "*", "•".
// 5. Strip one pair of surrounding quotes ("", '', “”, ‘’) and trim again.
// Lines before any header belong to the "after" list for after_only
// templates and to "before" for before_after templates. For before_after
// completions without any header, the first n lines are taken as before and
// the next n as after (n = expected_per_side, when given).
struct ParseRules {
    std::vector<std::string> stop_tokens;
    std::vector<std::regex> label_patterns;  // applied repeatedly at line start
    std::regex header;  // group 1: before|after, group 3: inline caption text
};

ParseRules default_parse_rules();
// Default rules plus family-specific stop tokens (model id matched like
// apply_chat_template).
ParseRules parse_rules_for(std::string_view model_id);

struct ParsedCaptions {
    std::vector<std::string> before;
    std::vector<std::string> after;
    bool saw_headers = false;
};

ParsedCaptions parse_completion(std::string_view completion, TemplateOutput mode, const ParseRules& rules,
                                int expected_per_side = 0);

// ---------------------------------------------------------------------------

enum class BeforeSource { captioner, llm };
std::string to_string(BeforeSource s);
BeforeSource before_source_from_string(const std::string& s);

struct CaptionConfig {
    std::string template_name = "simplified";
    int shots = 1;
    int n_captions = 1;
    BeforeSource before_source = BeforeSource::captioner;
    std::filesystem::path templates_dir;  // empty: built-in templates

    // ConfigError on values outside n in {1,2,4}, shots in {0,1,3}, or
    // combinations the template's output mode cannot provide.
    void validate(const PromptTemplate& tmpl) const;
};

nlohmann::json to_json(const CaptionConfig& c);
CaptionConfig caption_config_from_json(const nlohmann::json& j);

struct CaptionPair {
    std::vector<std::string> before;
    std::vector<std::string> after;
    BeforeSource before_source = BeforeSource::captioner;
    int n_captions = 1;
    // Caption used for inversion and as the generation base: the captioner
    // output (or its override).
    std::string inversion_caption;
    std::string prompt;          // rendered LLM prompt, empty when no LLM call was made
    std::string raw_completion;  // raw LLM output
};

nlohmann::json to_json(const CaptionPair& p);
CaptionPair caption_pair_from_json(const nlohmann::json& j);

// Captioner output for the image; also the inversion caption.
std::string before_caption(Captioner& captioner, const Image& image, const std::string& image_id);

// Renders the prompt (binding CAPTION, SOURCE_CAPTION, TRANSFORMATION and
// NUMBER), calls the LLM and returns the first n after-edit captions.
// Throws CaptionParseError when fewer than n are recovered.
std::vector<std::string> after_caption(const std::string& before, const std::string& instruction,
                                       const PromptTemplate& tmpl, TextGenerator& llm, const LlmConfig& cfg,
                                       int n_captions = 1);

struct CaptionOverrides {
    std::optional<std::string> before;  // replaces the captioner call
    std::optional<std::string> after;   // replaces the LLM call (single caption)
};

// With an after_only template (n must be 1): before = [captioner], after =
// [LLM]. With a before_after template the LLM returns n of each; under
// before_source=captioner the first before-caption is replaced by the
// captioner output.
CaptionPair make_caption_pair(const Image& image, const std::string& image_id, const std::string& instruction,
                              const CaptionConfig& cfg, const AdapterSet& adapters,
                              const CaptionOverrides& overrides = {});

}  // namespace ddimedit
