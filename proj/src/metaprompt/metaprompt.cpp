#include "ddimedit/metaprompt.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "ddimedit/errors.hpp"
#include "ddimedit/hashing.hpp"
#include "ddimedit/image.hpp"

namespace ddimedit {

namespace fs = std::filesystem;
using nlohmann::json;

const char* const kMetaInstruction =
    "I have a list of prompts, each with its corresponding score. The prompts are sorted in ascending order based "
    "on their scores, with higher scores indicating better quality. The task at hand consists in generating an "
    "image caption that represents an image after applying a transformation. In this task the model receives two "
    "inputs: a source caption ([SOURCE_CAPTION]) that represents the image before the transformation; and a "
    "transformation request ([TRANSFORMATION]) detailing the transformation to be performed in the image. The "
    "generated prompt must always contain two placeholder fields [SOURCE_CAPTION] and [TRANSFORMATION], and an "
    "instruction that commands the model to generate the image caption after performing the transformation. Your "
    "task is to generate a new prompt that considers the previous ones and aims to achieve a higher score.";

namespace {

std::string shortest(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string strip_quotes(std::string s) {
    s = trim(s);
    for (const auto& [open, close] : std::vector<std::pair<std::string, std::string>>{
             {"\"", "\""}, {"'", "'"}, {"\xE2\x80\x9C", "\xE2\x80\x9D"}}) {
        if (s.size() >= open.size() + close.size() && s.compare(0, open.size(), open) == 0 &&
            s.compare(s.size() - close.size(), close.size(), close) == 0)
            return trim(s.substr(open.size(), s.size() - open.size() - close.size()));
    }
    return s;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    SplitMix64 r(a ^ (b * kGoldenGamma));
    return r.next();
}

// ascending by score; ties: the older candidate counts as better (sorts later)
bool ascending(const PromptCandidate& a, const PromptCandidate& b) {
    const double sa = a.score.value_or(0.0), sb = b.score.value_or(0.0);
    if (sa != sb) return sa < sb;
    return a.born_step > b.born_step;
}

json examples_to_json(const std::vector<DatasetExample>& exs) {
    json arr = json::array();
    for (const auto& ex : exs) {
        json e{{"example_id", ex.example_id},
               {"source_image", ex.source_image.string()},
               {"target_image", ex.target_image.string()},
               {"instruction", ex.instruction}};
        if (ex.target_caption) e["target_caption"] = *ex.target_caption;
        if (ex.source_caption) e["source_caption"] = *ex.source_caption;
        arr.push_back(std::move(e));
    }
    return arr;
}

std::vector<DatasetExample> examples_from_json(const json& arr) {
    std::vector<DatasetExample> out;
    for (const auto& e : arr) {
        DatasetExample ex;
        ex.example_id = e.at("example_id").get<std::string>();
        ex.source_image = e.at("source_image").get<std::string>();
        ex.target_image = e.at("target_image").get<std::string>();
        ex.instruction = e.at("instruction").get<std::string>();
        if (e.contains("target_caption")) ex.target_caption = e["target_caption"].get<std::string>();
        if (e.contains("source_caption")) ex.source_caption = e["source_caption"].get<std::string>();
        out.push_back(std::move(ex));
    }
    return out;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json to_json(const PromptCandidate& c) {
    return json{{"template_text", c.template_text},
                {"score", opt_json(c.score)},
                {"best_score", opt_json(c.best_score)},
                {"born_step", c.born_step}};
}

PromptCandidate prompt_candidate_from_json(const json& j) {
    PromptCandidate c;
    c.template_text = j.at("template_text").get<std::string>();
    if (j.contains("score") && j["score"].is_number()) c.score = j["score"].get<double>();
    if (j.contains("best_score") && j["best_score"].is_number()) c.best_score = j["best_score"].get<double>();
    c.born_step = j.value("born_step", 0);
    return c;
}

json to_json(const OptimizerState& s) {
    json hist = json::array();
    for (const auto& c : s.history) hist.push_back(to_json(c));
    return json{{"step", s.step}, {"rng_seed", s.rng_seed}, {"history", hist}, {"eval_pool", examples_to_json(s.eval_pool)}};
}

OptimizerState optimizer_state_from_json(const json& j) {
    OptimizerState s;
    try {
        s.step = j.at("step").get<int>();
        s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
        for (const auto& c : j.at("history")) s.history.push_back(prompt_candidate_from_json(c));
        if (j.contains("eval_pool")) s.eval_pool = examples_from_json(j["eval_pool"]);
    } catch (const json::exception& e) {
        throw InputFormatError("<optimizer state>", e.what());
    }
    return s;
}

bool valid_prompt_template(std::string_view text) {
    return text.find("[SOURCE_CAPTION]") != std::string_view::npos &&
           text.find("[TRANSFORMATION]") != std::string_view::npos;
}

std::string build_meta_prompt(const OptimizerState& state) {
    std::string out = kMetaInstruction;
    if (state.history.empty()) return out;
    out += "\n\n";
    for (const auto& c : state.history) {
        out += "prompt: \"" + c.template_text + "\"\n";
        out += "score: " + (c.score ? shortest(*c.score) : std::string("unscored")) + "\n\n";
    }
    return out;
}

std::vector<std::string> parse_prompt_candidates(std::string_view completion) {
    std::vector<std::string> out;
    std::string lower(completion);
    for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    std::size_t pos = 0;
    while ((pos = lower.find("prompt:", pos)) != std::string::npos) {
        std::size_t i = pos + 7;
        while (i < completion.size() && (completion[i] == ' ' || completion[i] == '\t')) ++i;
        std::string close;
        std::size_t body = i;
        if (completion.compare(i, 1, "\"") == 0) {
            close = "\"";
            body = i + 1;
        } else if (completion.compare(i, 3, "\xE2\x80\x9C") == 0) {
            close = "\xE2\x80\x9D";
            body = i + 3;
        }
        if (!close.empty()) {
            const std::size_t end = completion.find(close, body);
            if (end != std::string::npos) {
                out.push_back(trim(completion.substr(body, end - body)));
                pos = end + close.size();
                continue;
            }
        } else {
            // unquoted: rest of the line
            const std::size_t end = completion.find('\n', i);
            const std::string line = trim(completion.substr(i, end == std::string::npos ? std::string::npos : end - i));
            if (!line.empty()) out.push_back(strip_quotes(line));
        }
        pos = pos + 7;
    }
    if (std::any_of(out.begin(), out.end(), [](const std::string& t) { return valid_prompt_template(t); })) return out;

    std::string best;
    std::istringstream in{std::string(completion)};
    for (std::string line; std::getline(in, line);) {
        line = trim(line);
        if (!valid_prompt_template(line)) continue;
        if (line.size() > best.size()) best = line;
    }
    if (!best.empty()) {
        if (best.rfind("prompt:", 0) == 0) best = best.substr(7);
        out.push_back(strip_quotes(best));
    }
    return out;
}

ProposeResult propose(const OptimizerState& state, TextGenerator& llm, const ProposeOptions& opts) {
    if (opts.n < 1) throw ConfigError("propose.n", "must be >= 1");
    if (opts.max_attempts < 1) throw ConfigError("propose.max_attempts", "must be >= 1");
    ProposeResult res;
    const std::string meta = build_meta_prompt(state);
    std::set<std::string> seen;
    for (const auto& c : state.history) seen.insert(c.template_text);
    for (int c = 0; c < opts.n; ++c) {
        bool got = false;
        for (int attempt = 0; attempt < opts.max_attempts && !got; ++attempt) {
            LlmConfig cfg = opts.llm;
            cfg.seed = mix(mix(mix(opts.llm.seed ^ state.rng_seed, static_cast<std::uint64_t>(state.step)), c), attempt);
            ++res.llm_calls;
            std::string reason = "no candidate found";
            try {
                for (const auto& text : parse_prompt_candidates(llm.generate(meta, cfg))) {
                    if (!valid_prompt_template(text)) {
                        reason = "missing placeholder in \"" + text.substr(0, 80) + "\"";
                        continue;
                    }
                    if (seen.count(text)) {
                        reason = "duplicate of an existing prompt";
                        continue;
                    }
                    seen.insert(text);
                    res.candidates.push_back(PromptCandidate{text, std::nullopt, std::nullopt, state.step});
                    got = true;
                    break;
                }
            } catch (const LlmInputError& e) {
                reason = std::string("llm rejected the meta-prompt: ") + e.what();
            } catch (const TransportError& e) {
                reason = std::string("llm transport: ") + e.what();
            }
            if (!got)
                res.warnings.push_back("candidate " + std::to_string(c) + " attempt " + std::to_string(attempt + 1) +
                                       ": " + reason);
        }
        if (!got)
            res.warnings.push_back("candidate " + std::to_string(c) + " dropped after " +
                                   std::to_string(opts.max_attempts) + " attempts");
    }
    if (res.candidates.empty()) res.warnings.push_back("no valid candidates; step proceeds with history only");
    return res;
}

double TextHashScorer::score_example(const std::string& template_text, const DatasetExample&) {
    const std::uint64_t h = mix(fnv1a64(template_text), seed_);
    return 0.75 + 0.15 * static_cast<double>(h % 1000003) / 1000002.0;
}

double ClipIScorer::score_example(const std::string& template_text, const DatasetExample& ex) {
    AdapterSet a = editor_.adapters();
    const Image source = read_png(ex.source_image);
    const Image target = read_png(ex.target_image);
    const std::string before = before_caption(*a.captioner, source, ex.example_id);
    const auto tmpl = PromptTemplate::make("candidate", template_text);
    const auto after = after_caption(before, ex.instruction, tmpl, *a.llm, a.llm_config, 1);
    EditRequest req;
    req.image = source;
    req.image_id = ex.example_id;
    req.instruction = ex.instruction;
    req.config = cfg_;
    req.overrides.before = before;
    req.overrides.after = after.at(0);
    const EditResult res = editor_.edit(req);
    return clip_i(res.output_image, target, a);
}

PromptScore score_prompt(const PromptCandidate& p, const std::vector<DatasetExample>& examples,
                         PromptScorer& scorer) {
    PromptScore s;
    for (const auto& ex : examples) {
        double v = 0.0;
        try {
            v = scorer.score_example(p.template_text, ex);
        } catch (const std::exception& e) {
            s.failures.push_back(ex.example_id + ": " + e.what());
        }
        s.per_example.push_back(v);
        s.sum += v;
    }
    return s;
}

std::vector<DatasetExample> sample_examples(const std::vector<DatasetExample>& pool, int k, std::uint64_t seed,
                                            int step) {
    if (k < 1) throw ConfigError("examples_per_step", "must be >= 1");
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::mt19937_64 rng(mix(seed, 0x5EED0000ull + static_cast<std::uint64_t>(step)));
    // Fisher-Yates with modulo reduction: portable across standard libraries
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(k), pool.size());
    std::vector<DatasetExample> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(pool[idx[i]]);
    return out;
}

std::vector<json> read_trace(const fs::path& jsonl) {
    std::vector<json> out;
    std::ifstream in(jsonl);
    for (std::string line; std::getline(in, line);) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception&) {
            if (in.peek() != EOF) throw InputFormatError(jsonl.string(), "bad trace record");
        }
    }
    return out;
}

OptimizeResult optimize(const std::vector<DatasetExample>& pool, TextGenerator& llm, PromptScorer& scorer,
                        const OptimizerConfig& cfg) {
    if (cfg.steps < 0) throw ConfigError("steps", "must be >= 0");
    if (cfg.top_k < 1) throw ConfigError("top_k", "must be >= 1");
    if (pool.empty()) throw ConfigError("dataset", "optimizer needs a non-empty example pool");
    for (const auto& p : cfg.initial_prompts)
        if (!valid_prompt_template(p))
            throw ConfigError("initial_prompts", "\"" + p + "\" lacks [SOURCE_CAPTION] or [TRANSFORMATION]");

    OptimizeResult r;
    const bool persist = !cfg.out_dir.empty();
    const fs::path state_path = cfg.out_dir / "state.json";
    const fs::path trace_path = cfg.out_dir / "trace.jsonl";
    if (persist) fs::create_directories(cfg.out_dir);

    if (persist && cfg.resume && fs::exists(state_path)) {
        r.state = optimizer_state_from_json(json::parse(read_text_file(state_path)));
        if (r.state.rng_seed != cfg.seed)
            throw ConfigError("seed", "state.json was written with seed " + std::to_string(r.state.rng_seed) +
                                          "; pass the same seed or start a fresh --out");
        for (auto& rec : read_trace(trace_path))
            if (rec.at("step").get<int>() < r.state.step) r.trace.push_back(std::move(rec));
    } else {
        r.state.rng_seed = cfg.seed;
        r.state.eval_pool = pool;
        for (const auto& p : cfg.initial_prompts) r.state.history.push_back(PromptCandidate{p, {}, {}, -1});
        if (persist) fs::remove(trace_path);
    }
    auto& st = r.state;

    while (st.step < cfg.steps) {
        json rec{{"step", st.step}};
        const auto proposal = propose(st, llm, cfg.propose);

        std::vector<PromptCandidate> all = proposal.candidates;
        for (const auto& h : st.history) all.push_back(h);

        const auto sample = sample_examples(st.eval_pool, cfg.examples_per_step, st.rng_seed, st.step);
        json ids = json::array();
        for (const auto& ex : sample) ids.push_back(ex.example_id);

        json warnings = proposal.warnings;
        json scored = json::array();
        for (auto& p : all) {
            const auto s = score_prompt(p, sample, scorer);
            p.score = s.sum;
            p.best_score = std::max(p.best_score.value_or(s.sum), s.sum);
            for (const auto& f : s.failures) warnings.push_back("scoring: " + f);
            json e = to_json(p);
            e["per_example"] = s.per_example;
            scored.push_back(std::move(e));
        }

        // best first, then keep top_k and store ascending
        std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return ascending(b, a); });
        if (static_cast<int>(all.size()) > cfg.top_k) all.resize(static_cast<std::size_t>(cfg.top_k));
        std::reverse(all.begin(), all.end());
        st.history = std::move(all);

        json proposals = json::array();
        for (const auto& c : proposal.candidates) proposals.push_back(c.template_text);
        json hist = json::array();
        for (const auto& c : st.history) hist.push_back(to_json(c));
        rec["examples"] = ids;
        rec["proposals"] = proposals;
        rec["llm_calls"] = proposal.llm_calls;
        rec["scored"] = scored;
        rec["history"] = hist;
        rec["best_score"] = st.history.empty() ? json(nullptr) : json(*st.history.back().score);
        rec["warnings"] = warnings;
        ++st.step;

        if (persist) {
            std::ofstream(trace_path, std::ios::app) << rec.dump() << "\n";
            const fs::path tmp = state_path.string() + ".tmp";
            write_text_file(tmp, to_json(st).dump(2) + "\n");
            fs::rename(tmp, state_path);
        }
        r.trace.push_back(rec);
        if (cfg.on_step) cfg.on_step(rec);
    }
    return r;
}

std::string render_trace_svg(const std::vector<json>& trace) {
    const double W = 640, H = 360, L = 60, R = 20, T = 30, B = 45;
    std::vector<double> best, mean;
    for (const auto& rec : trace) {
        best.push_back(rec.value("best_score", json(nullptr)).is_number() ? rec["best_score"].get<double>() : 0.0);
        double sum = 0;
        int n = 0;
        for (const auto& s : rec.value("scored", json::array()))
            if (s.contains("score") && s["score"].is_number()) {
                sum += s["score"].get<double>();
                ++n;
            }
        mean.push_back(n ? sum / n : 0.0);
    }
    double lo = 0, hi = 1;
    if (!best.empty()) {
        lo = std::min(*std::min_element(best.begin(), best.end()), *std::min_element(mean.begin(), mean.end()));
        hi = std::max(*std::max_element(best.begin(), best.end()), *std::max_element(mean.begin(), mean.end()));
        if (hi - lo < 1e-9) {
            lo -= 0.5;
            hi += 0.5;
        }
        const double pad = 0.05 * (hi - lo);
        lo -= pad;
        hi += pad;
    }
    const std::size_t n = std::max<std::size_t>(best.size(), 1);
    auto x = [&](std::size_t i) { return L + (n == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(n - 1)) * (W - L - R); };
    auto y = [&](double v) { return T + (1.0 - (v - lo) / (hi - lo)) * (H - T - B); };
    auto num = [](double v, int prec) {
        std::ostringstream os;
        os.setf(std::ios::fixed);
        os.precision(prec);
        os << v;
        return os.str();
    };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
        << W << " " << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">Prompt score per step</text>\n";
    svg << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double v = lo + (hi - lo) * k / 4.0;
        svg << "<text x=\"" << L - 6 << "\" y=\"" << num(y(v) + 4, 1) << "\" text-anchor=\"end\">" << num(v, 3)
            << "</text>\n";
    }
    for (std::size_t i = 0; i < best.size(); ++i)
        if (best.size() <= 25 || i % 5 == 0)
            svg << "<text x=\"" << num(x(i), 1) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << i
                << "</text>\n";
    svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\">step</text>\n";
    auto polyline = [&](const std::vector<double>& v, const char* color, const char* dash) {
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"" << dash << " points=\"";
        for (std::size_t i = 0; i < v.size(); ++i) svg << (i ? " " : "") << num(x(i), 1) << "," << num(y(v[i]), 1);
        svg << "\"/>\n";
    };
    polyline(best, "#1f77b4", "");
    polyline(mean, "#ff7f0e", " stroke-dasharray=\"5,3\"");
    svg << "<text x=\"" << W - R - 150 << "\" y=\"" << T + 12 << "\" fill=\"#1f77b4\">best retained</text>\n";
    svg << "<text x=\"" << W - R - 150 << "\" y=\"" << T + 26 << "\" fill=\"#ff7f0e\">mean of scored</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace ddimedit
