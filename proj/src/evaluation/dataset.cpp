#include <algorithm>
#include <fstream>
#include <set>

#include "ddimedit/errors.hpp"
#include "ddimedit/evaluation.hpp"
#include "ddimedit/image.hpp"

namespace ddimedit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json parse_json_file(const fs::path& path) {
    try {
        return json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw InputFormatError(path.string(), std::string("invalid JSON: ") + e.what());
    }
}

DatasetExample example_from_json(const json& j, const fs::path& root, const std::string& where) {
    DatasetExample ex;
    try {
        ex.example_id = j.at("example_id").get<std::string>();
        ex.source_image = root / j.at("source_image").get<std::string>();
        ex.target_image = root / j.at("target_image").get<std::string>();
        ex.instruction = j.at("instruction").get<std::string>();
        if (j.contains("target_caption") && j["target_caption"].is_string())
            ex.target_caption = j["target_caption"].get<std::string>();
        if (j.contains("source_caption") && j["source_caption"].is_string())
            ex.source_caption = j["source_caption"].get<std::string>();
    } catch (const json::exception& e) {
        throw InputFormatError(where, std::string("bad example record: ") + e.what());
    }
    if (ex.example_id.empty()) throw InputFormatError(where, "empty example_id");
    if (normalize_whitespace(ex.instruction).empty())
        throw InputFormatError(where, "example '" + ex.example_id + "' has an empty instruction");
    return ex;
}

std::string relative_to(const fs::path& p, const fs::path& root) { return fs::relative(p, root).generic_string(); }

}  // namespace

const std::vector<DatasetExample>& Dataset::split(const std::string& split_name) const {
    auto it = splits.find(split_name);
    if (it == splits.end()) {
        std::string have;
        for (const auto& [k, v] : splits) have += (have.empty() ? "" : ", ") + k;
        throw NotFoundError("dataset '" + name + "' has no split '" + split_name + "' (have: " + have + ")");
    }
    return it->second;
}

Dataset load_dataset(const fs::path& dir) {
    const fs::path manifest = dir / "manifest.json";
    if (!fs::exists(manifest)) throw InputFormatError(manifest.string(), "dataset manifest not found");
    const json j = parse_json_file(manifest);
    Dataset ds;
    ds.root = dir;
    ds.name = j.value("name", dir.filename().string());
    if (!j.contains("splits") || !j["splits"].is_object())
        throw InputFormatError(manifest.string(), "missing object 'splits'");
    for (const auto& [split, arr] : j["splits"].items()) {
        if (!arr.is_array()) throw InputFormatError(manifest.string(), "split '" + split + "' is not an array");
        auto& out = ds.splits[split];
        std::set<std::string> seen;
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string where = manifest.string() + ": splits." + split + "[" + std::to_string(i) + "]";
            auto ex = example_from_json(arr[i], dir, where);
            if (!seen.insert(ex.example_id).second)
                throw InputFormatError(where, "duplicate example_id '" + ex.example_id + "'");
            for (const auto* p : {&ex.source_image, &ex.target_image})
                if (!fs::exists(*p)) throw InputFormatError(where, "missing image " + p->string());
            out.push_back(std::move(ex));
        }
    }
    return ds;
}

void save_dataset(const Dataset& ds) {
    json splits = json::object();
    for (const auto& [name, exs] : ds.splits) {
        json arr = json::array();
        for (const auto& ex : exs) {
            json e{{"example_id", ex.example_id},
                   {"source_image", relative_to(ex.source_image, ds.root)},
                   {"target_image", relative_to(ex.target_image, ds.root)},
                   {"instruction", ex.instruction}};
            if (ex.target_caption) e["target_caption"] = *ex.target_caption;
            if (ex.source_caption) e["source_caption"] = *ex.source_caption;
            arr.push_back(std::move(e));
        }
        splits[name] = std::move(arr);
    }
    fs::create_directories(ds.root);
    write_text_file(ds.root / "manifest.json", json{{"name", ds.name}, {"splits", splits}}.dump(2) + "\n");
}

std::map<std::string, std::size_t> import_magicbrush(const fs::path& src, const fs::path& dst) {
    if (!fs::is_directory(src)) throw InputFormatError(src.string(), "not a directory");
    Dataset ds;
    ds.root = dst;
    ds.name = "magicbrush";
    std::map<std::string, std::size_t> counts;
    std::vector<fs::path> split_dirs;
    for (const auto& entry : fs::directory_iterator(src))
        if (entry.is_directory() && fs::exists(entry.path() / "edit_sessions.json")) split_dirs.push_back(entry.path());
    std::sort(split_dirs.begin(), split_dirs.end());
    if (split_dirs.empty())
        throw InputFormatError(src.string(), "no <split>/edit_sessions.json found (expected e.g. test/, dev/)");

    for (const auto& sdir : split_dirs) {
        const std::string split = sdir.filename().string();
        const json sessions = parse_json_file(sdir / "edit_sessions.json");
        json descriptions = json::object();
        if (fs::exists(sdir / "global_descriptions.json")) descriptions = parse_json_file(sdir / "global_descriptions.json");
        auto caption_of = [&](const std::string& img_id, const std::string& file) -> std::optional<std::string> {
            if (!descriptions.contains(img_id)) return std::nullopt;
            const auto& d = descriptions[img_id];
            if (d.contains(file) && d[file].is_string()) return d[file].get<std::string>();
            return std::nullopt;
        };
        auto& out = ds.splits[split];
        std::vector<std::string> ids;
        for (auto it = sessions.begin(); it != sessions.end(); ++it) ids.push_back(it.key());
        std::sort(ids.begin(), ids.end());
        for (const auto& img_id : ids) {
            const auto& turns = sessions[img_id];
            if (!turns.is_array()) throw InputFormatError((sdir / "edit_sessions.json").string(), img_id + ": not a list");
            for (std::size_t k = 0; k < turns.size(); ++k) {
                const auto& t = turns[k];
                const std::string in_file = t.at("input").get<std::string>();
                const std::string out_file = t.at("output").get<std::string>();
                DatasetExample ex;
                ex.example_id = img_id + "-" + std::to_string(k + 1);
                ex.instruction = t.at("instruction").get<std::string>();
                const fs::path img_dst = dst / "images" / split / img_id;
                fs::create_directories(img_dst);
                for (const auto& f : {in_file, out_file}) {
                    const fs::path from = sdir / "images" / img_id / f;
                    if (!fs::exists(from)) throw InputFormatError(from.string(), "image referenced by session missing");
                    fs::copy_file(from, img_dst / f, fs::copy_options::overwrite_existing);
                }
                ex.source_image = img_dst / in_file;
                ex.target_image = img_dst / out_file;
                ex.source_caption = caption_of(img_id, in_file);
                ex.target_caption = caption_of(img_id, out_file);
                out.push_back(std::move(ex));
            }
        }
        counts[split] = out.size();
    }
    save_dataset(ds);
    return counts;
}

}  // namespace ddimedit
