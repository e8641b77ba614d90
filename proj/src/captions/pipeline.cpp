#include "ddimedit/captions.hpp"
#include "ddimedit/errors.hpp"
#include "ddimedit/mock_adapters.hpp"

namespace ddimedit {

using nlohmann::json;

std::string to_string(BeforeSource s) { return s == BeforeSource::captioner ? "captioner" : "llm"; }

BeforeSource before_source_from_string(const std::string& s) {
    if (s == "captioner" || s == "blip") return BeforeSource::captioner;
    if (s == "llm") return BeforeSource::llm;
    throw ConfigError("caption.before_source", "expected captioner or llm, got '" + s + "'");
}

void CaptionConfig::validate(const PromptTemplate& tmpl) const {
    if (n_captions != 1 && n_captions != 2 && n_captions != 4)
        throw ConfigError("caption.n_captions", "must be 1, 2 or 4, got " + std::to_string(n_captions));
    if (shots != 0 && shots != 1 && shots != 3)
        throw ConfigError("caption.shots", "must be 0, 1 or 3, got " + std::to_string(shots));
    if (tmpl.output == TemplateOutput::after_only && n_captions > 1)
        throw ConfigError("caption.n_captions", "template '" + tmpl.name +
                                                    "' produces a single after-edit caption; use a "
                                                    "before_after template for multiple captions");
    if (tmpl.output == TemplateOutput::after_only && before_source == BeforeSource::llm)
        throw ConfigError("caption.before_source",
                          "before_source=llm needs a before_after template, '" + tmpl.name + "' is after_only");
}

json to_json(const CaptionConfig& c) {
    return json{{"template", c.template_name},
                {"shots", c.shots},
                {"n_captions", c.n_captions},
                {"before_source", to_string(c.before_source)},
                {"templates_dir", c.templates_dir.string()}};
}

CaptionConfig caption_config_from_json(const json& j) {
    CaptionConfig c;
    try {
        c.template_name = j.value("template", c.template_name);
        c.shots = j.value("shots", c.shots);
        c.n_captions = j.value("n_captions", c.n_captions);
        c.before_source = before_source_from_string(j.value("before_source", to_string(c.before_source)));
        c.templates_dir = j.value("templates_dir", std::string());
    } catch (const json::exception& e) {
        throw ConfigError("caption", std::string("malformed caption config: ") + e.what());
    }
    return c;
}

json to_json(const CaptionPair& p) {
    return json{{"before", p.before},
                {"after", p.after},
                {"before_source", to_string(p.before_source)},
                {"n_captions", p.n_captions},
                {"inversion_caption", p.inversion_caption},
                {"prompt", p.prompt},
                {"raw_completion", p.raw_completion}};
}

CaptionPair caption_pair_from_json(const json& j) {
    CaptionPair p;
    try {
        p.before = j.at("before").get<std::vector<std::string>>();
        p.after = j.at("after").get<std::vector<std::string>>();
        p.before_source = before_source_from_string(j.value("before_source", "captioner"));
        p.n_captions = j.value("n_captions", 1);
        p.inversion_caption = j.at("inversion_caption").get<std::string>();
        p.prompt = j.value("prompt", "");
        p.raw_completion = j.value("raw_completion", "");
    } catch (const json::exception& e) {
        throw InputFormatError("<caption pair>", e.what());
    }
    return p;
}

std::string before_caption(Captioner& captioner, const Image& image, const std::string& image_id) {
    auto text = normalize_whitespace(captioner.caption(image, image_id));
    if (text.empty())
        throw AdapterUnavailableError("captioner", AdapterUnavailableError::Cause::runtime, "empty caption");
    return text;
}

namespace {

struct LlmCaptions {
    std::string prompt;
    std::string raw;
    ParsedCaptions parsed;
};

LlmCaptions query(const std::string& before, const std::string& instruction, const PromptTemplate& tmpl,
                  TextGenerator& llm, const LlmConfig& cfg, int n) {
    if (normalize_whitespace(instruction).empty()) throw ContractError("instruction must be non-empty");
    const Bindings bindings{{"CAPTION", before},
                            {"SOURCE_CAPTION", before},
                            {"TRANSFORMATION", instruction},
                            {"NUMBER", std::to_string(n)}};
    LlmCaptions out;
    out.prompt = render_prompt(tmpl, bindings);
    out.raw = llm.generate(out.prompt, cfg);
    out.parsed = parse_completion(out.raw, tmpl.output, parse_rules_for(cfg.model_id), n);
    const auto need = static_cast<std::size_t>(n);
    if (out.parsed.after.size() < need)
        throw CaptionParseError("expected " + std::to_string(n) + " after-edit caption(s), recovered " +
                                    std::to_string(out.parsed.after.size()),
                                out.raw);
    if (tmpl.output == TemplateOutput::before_after && out.parsed.before.size() < need)
        throw CaptionParseError("expected " + std::to_string(n) + " before-edit caption(s), recovered " +
                                    std::to_string(out.parsed.before.size()),
                                out.raw);
    out.parsed.after.resize(need);
    if (out.parsed.before.size() > need) out.parsed.before.resize(need);
    return out;
}

}  // namespace

std::vector<std::string> after_caption(const std::string& before, const std::string& instruction,
                                       const PromptTemplate& tmpl, TextGenerator& llm, const LlmConfig& cfg,
                                       int n_captions) {
    if (normalize_whitespace(before).empty()) throw ContractError("before caption must be non-empty");
    return query(before, instruction, tmpl, llm, cfg, n_captions).parsed.after;
}

CaptionPair make_caption_pair(const Image& image, const std::string& image_id, const std::string& instruction,
                              const CaptionConfig& cfg, const AdapterSet& adapters,
                              const CaptionOverrides& overrides) {
    CaptionPair pair;
    pair.before_source = cfg.before_source;
    pair.inversion_caption = overrides.before ? normalize_whitespace(*overrides.before)
                                              : before_caption(*adapters.captioner, image, image_id);
    if (pair.inversion_caption.empty()) throw ContractError("before-caption override is empty");

    if (overrides.after) {
        const auto after = normalize_whitespace(*overrides.after);
        if (after.empty()) throw ContractError("after-caption override is empty");
        pair.before = {pair.inversion_caption};
        pair.after = {after};
        pair.before_source = BeforeSource::captioner;
        pair.n_captions = 1;
        return pair;
    }

    const auto tmpl = load_template(cfg.template_name, cfg.templates_dir).with_shots(cfg.shots);
    cfg.validate(tmpl);
    pair.n_captions = cfg.n_captions;
    auto res = query(pair.inversion_caption, instruction, tmpl, *adapters.llm, adapters.llm_config, cfg.n_captions);
    pair.prompt = std::move(res.prompt);
    pair.raw_completion = std::move(res.raw);
    pair.after = std::move(res.parsed.after);
    if (tmpl.output == TemplateOutput::after_only) {
        pair.before = {pair.inversion_caption};
    } else {
        pair.before = std::move(res.parsed.before);
        if (cfg.before_source == BeforeSource::captioner) pair.before.front() = pair.inversion_caption;
    }
    return pair;
}

}  // namespace ddimedit
