#include <algorithm>
#include <cctype>

#include "ddimedit/captions.hpp"

namespace ddimedit {

namespace {

constexpr auto kIcase = std::regex::ECMAScript | std::regex::icase;

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool starts_with_icase(const std::string& s, std::string_view prefix) {
    return s.size() >= prefix.size() && lower(s.substr(0, prefix.size())) == prefix;
}

std::string strip_quotes(std::string s) {
    static const std::pair<std::string_view, std::string_view> kPairs[] = {
        {"\"", "\""}, {"'", "'"}, {"\xE2\x80\x9C", "\xE2\x80\x9D"}, {"\xE2\x80\x98", "\xE2\x80\x99"}, {"`", "'"}};
    for (const auto& [open, close] : kPairs) {
        if (s.size() >= open.size() + close.size() && s.compare(0, open.size(), open) == 0 &&
            s.compare(s.size() - close.size(), close.size(), close) == 0) {
            return trim(s.substr(open.size(), s.size() - open.size() - close.size()));
        }
    }
    return s;
}

}  // namespace

ParseRules default_parse_rules() {
    ParseRules r;
    r.stop_tokens = {"</s>", "<|eot_id|>", "<|end_of_text|>", "<end_of_turn>", "<|endoftext|>", "<|im_end|>"};
    r.label_patterns = {
        std::regex(R"(^caption\s*\d*\s*[:.)\-]\s*)", kIcase),
        std::regex(R"(^\(?\d+\s*[.):]\s*)", kIcase),
        std::regex("^(?:-|\\*|\xE2\x80\xA2)\\s+", kIcase),
    };
    r.header = std::regex(
        R"(^\**\s*(before|after)((?:[\s\-]+(?:the|edit|edited|editing|transformation|image|images|caption|captions))*)\s*\**\s*(?::\s*\**\s*(.*))?$)",
        kIcase);
    return r;
}

ParseRules parse_rules_for(std::string_view model_id) {
    ParseRules r = default_parse_rules();
    const std::string id = lower(model_id);
    // models that keep going emit the next turn marker of their own format
    if (id.find("phi") != std::string::npos) r.stop_tokens.push_back("\nInstruct:");
    if (id.find("mistral") != std::string::npos || (id.find("llama-2") != std::string::npos))
        r.stop_tokens.push_back("[INST]");
    if (id.find("gemma") != std::string::npos) r.stop_tokens.push_back("<start_of_turn>");
    if (id.find("llama-3") != std::string::npos) r.stop_tokens.push_back("<|start_header_id|>");
    return r;
}

ParsedCaptions parse_completion(std::string_view completion, TemplateOutput mode, const ParseRules& rules,
                                int expected_per_side) {
    std::string text(completion);
    for (const auto& stop : rules.stop_tokens) {
        const auto pos = text.find(stop);
        if (pos != std::string::npos) text.resize(pos);
    }

    ParsedCaptions out;
    std::vector<std::string>* current = mode == TemplateOutput::after_only ? &out.after : &out.before;
    bool first_content = true;

    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        std::string line = trim(std::string_view(text).substr(start, end - start));
        start = end + 1;
        if (line.empty()) continue;
        if (starts_with_icase(line, "instruct:")) continue;
        if (first_content && starts_with_icase(line, "output:")) {
            line = trim(line.substr(7));
            if (line.empty()) continue;
        }
        first_content = false;

        std::smatch m;
        if (std::regex_match(line, m, rules.header)) {
            out.saw_headers = true;
            current = lower(m[1].str()) == "before" ? &out.before : &out.after;
            line = m[3].matched ? trim(m[3].str()) : "";
            if (line.empty()) continue;
        }
        for (bool changed = true; changed;) {
            changed = false;
            for (const auto& re : rules.label_patterns) {
                std::smatch lm;
                if (std::regex_search(line, lm, re) && lm.position(0) == 0 && lm.length(0) > 0) {
                    line = trim(line.substr(static_cast<std::size_t>(lm.length(0))));
                    changed = true;
                }
            }
        }
        line = strip_quotes(trim(line));
        if (!line.empty()) current->push_back(std::move(line));
    }

    if (mode == TemplateOutput::before_after && !out.saw_headers && expected_per_side > 0) {
        auto all = std::move(out.before);
        out.before.clear();
        const auto n = static_cast<std::size_t>(expected_per_side);
        for (std::size_t i = 0; i < all.size(); ++i) {
            if (i < n)
                out.before.push_back(std::move(all[i]));
            else if (i < 2 * n)
                out.after.push_back(std::move(all[i]));
        }
    }
    return out;
}

}  // namespace ddimedit
