#include <algorithm>
#include <cctype>

#include "builtin_templates.hpp"
#include "ddimedit/captions.hpp"
#include "ddimedit/errors.hpp"
#include "ddimedit/image.hpp"

namespace ddimedit {

std::string to_string(TemplateOutput m) { return m == TemplateOutput::after_only ? "after_only" : "before_after"; }

TemplateOutput template_output_from_string(const std::string& s) {
    if (s == "after_only") return TemplateOutput::after_only;
    if (s == "before_after") return TemplateOutput::before_after;
    throw ConfigError("output", "expected after_only or before_after, got '" + s + "'");
}

std::set<std::string> find_placeholders(std::string_view text) {
    std::set<std::string> out;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '[') continue;
        std::size_t j = i + 1;
        while (j < text.size() && (std::isupper(static_cast<unsigned char>(text[j])) || text[j] == '_')) ++j;
        if (j > i + 1 && j < text.size() && text[j] == ']') {
            out.emplace(text.substr(i + 1, j - i - 1));
            i = j;
        }
    }
    return out;
}

PromptTemplate PromptTemplate::make(std::string name, std::string text, std::vector<FewShotExample> shots,
                                    TemplateOutput output, const std::optional<std::set<std::string>>& declared) {
    PromptTemplate t;
    t.name = std::move(name);
    t.template_text = std::move(text);
    t.required_placeholders = find_placeholders(t.template_text);
    t.few_shot_examples = std::move(shots);
    t.output = output;
    if (declared && *declared != t.required_placeholders) {
        for (const auto& p : *declared)
            if (!t.required_placeholders.count(p))
                throw TemplateError(p, "template '" + t.name + "' declares a placeholder its text does not contain");
        for (const auto& p : t.required_placeholders)
            if (!declared->count(p))
                throw TemplateError(p, "template '" + t.name + "' uses an undeclared placeholder");
    }
    return t;
}

PromptTemplate PromptTemplate::literal(std::string text) {
    PromptTemplate t;
    t.name = "literal";
    t.template_text = std::move(text);
    return t;
}

PromptTemplate PromptTemplate::with_shots(int k) const {
    if (k != 0 && k != 1 && k != 3) throw ConfigError("shots", "must be 0, 1 or 3, got " + std::to_string(k));
    if (k > shots())
        throw ConfigError("shots", "template '" + name + "' ships " + std::to_string(shots()) +
                                       " few-shot examples, " + std::to_string(k) + " requested");
    PromptTemplate t = *this;
    t.few_shot_examples.resize(static_cast<std::size_t>(k));
    return t;
}

std::string render_prompt(const PromptTemplate& tmpl, const Bindings& bindings) {
    for (const auto& p : tmpl.required_placeholders)
        if (!bindings.count(p)) throw TemplateError("[" + p + "]", "no binding for placeholder in '" + tmpl.name + "'");

    std::string out;
    for (const auto& shot : tmpl.few_shot_examples) {
        out += shot.prompt;
        out += '\n';
        out += shot.completion;
        out += "\n\n";
    }
    const std::string_view text = tmpl.template_text;
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '[') {
            const auto close = text.find(']', i + 1);
            if (close != std::string_view::npos) {
                const std::string name(text.substr(i + 1, close - i - 1));
                if (tmpl.required_placeholders.count(name)) {
                    out += bindings.at(name);
                    i = close + 1;
                    continue;
                }
            }
        }
        out += text[i++];
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_lines(std::string_view s) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto end = s.find('\n', start);
        if (end == std::string_view::npos) end = s.size();
        std::string line(s.substr(start, end - start));
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
        start = end + 1;
    }
    return lines;
}

}  // namespace

PromptTemplate parse_template_file(std::string_view text, const std::string& origin) {
    const auto lines = split_lines(text);
    std::size_t i = 0;
    while (i < lines.size() && trim(lines[i]).empty()) ++i;
    if (i == lines.size() || trim(lines[i]) != "---")
        throw InputFormatError(origin, "template file must start with a '---' front-matter block");
    std::map<std::string, std::string> front;
    for (++i; i < lines.size() && trim(lines[i]) != "---"; ++i) {
        const auto line = trim(lines[i]);
        if (line.empty() || line[0] == '#') continue;
        const auto colon = line.find(':');
        if (colon == std::string::npos) throw InputFormatError(origin, "bad front-matter line: " + line);
        front[trim(line.substr(0, colon))] = trim(line.substr(colon + 1));
    }
    if (i == lines.size()) throw InputFormatError(origin, "unterminated front matter");
    ++i;

    std::string section, body, shot_prompt;
    std::string template_text;
    bool have_template = false;
    std::vector<FewShotExample> shots;
    auto flush = [&] {
        const auto content = trim(body);
        if (section == "template") {
            template_text = content;
            have_template = true;
        } else if (section == "prompt") {
            shot_prompt = content;
        } else if (section == "completion") {
            shots.push_back({shot_prompt, content});
            shot_prompt.clear();
        } else if (!content.empty() && section != "shot") {
            throw InputFormatError(origin, "text outside any @@ section");
        }
        body.clear();
    };
    for (; i < lines.size(); ++i) {
        const auto t = trim(lines[i]);
        if (t.rfind("@@ ", 0) == 0) {
            flush();
            section = trim(t.substr(3));
            if (section != "template" && section != "shot" && section != "prompt" && section != "completion")
                throw InputFormatError(origin, "unknown section '@@ " + section + "'");
            continue;
        }
        body += lines[i];
        body += '\n';
    }
    flush();
    if (!have_template || template_text.empty()) throw InputFormatError(origin, "missing @@ template section");

    const std::string name = front.count("name") ? front["name"] : std::filesystem::path(origin).stem().string();
    std::optional<std::set<std::string>> declared;
    if (front.count("placeholders")) {
        std::set<std::string> names;
        std::string item;
        for (char c : front["placeholders"] + ",") {
            if (c == ',') {
                auto v = trim(item);
                if (!v.empty() && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
                if (!v.empty()) names.insert(v);
                item.clear();
            } else {
                item += c;
            }
        }
        declared = names;
    }
    if (front.count("shots")) {
        int declared_shots = -1;
        try {
            declared_shots = std::stoi(front["shots"]);
        } catch (const std::exception&) {
            throw InputFormatError(origin, "shots must be an integer");
        }
        if (declared_shots != static_cast<int>(shots.size()))
            throw InputFormatError(origin, "front matter declares " + front["shots"] + " shots, file has " +
                                               std::to_string(shots.size()));
    }
    const auto output = template_output_from_string(front.count("output") ? front["output"] : "after_only");
    return PromptTemplate::make(name, template_text, std::move(shots), output, declared);
}

PromptTemplate load_template_file(const std::filesystem::path& path) {
    return parse_template_file(read_text_file(path), path.string());
}

PromptTemplate load_template(const std::string& name, const std::filesystem::path& dir) {
    if (!dir.empty()) {
        const auto path = dir / (name + ".tmpl");
        if (std::filesystem::exists(path)) return load_template_file(path);
    }
    for (const auto& b : detail::builtin_templates())
        if (b.name == name) return parse_template_file(b.text, "<builtin:" + name + ">");
    throw ConfigError("caption.template", "unknown template '" + name + "'");
}

std::vector<std::string> builtin_template_names() {
    std::vector<std::string> out;
    for (const auto& b : detail::builtin_templates()) out.emplace_back(b.name);
    return out;
}

}  // namespace ddimedit
