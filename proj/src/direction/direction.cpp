#include "ddimedit/direction.hpp"

#include <cmath>
#include <sstream>

#include "ddimedit/errors.hpp"
#include "ddimedit/kernels.hpp"
#include "ddimedit/serialization.hpp"

namespace ddimedit {

TextConditioning mean_conditioning(const std::vector<TextConditioning>& items) {
    if (items.empty()) throw ContractError("mean_conditioning: empty caption list");
    const auto& first = items.front();
    if (items.size() == 1) return first;
    std::vector<double> tok(first.tokens_embedded.size(), 0.0);
    std::vector<double> pool(first.pooled.size(), 0.0);
    TextConditioning out;
    for (const auto& it : items) {
        require_same_shape(it.tokens_embedded, first.tokens_embedded, "mean_conditioning");
        if (it.pooled.size() != first.pooled.size()) throw ContractError("mean_conditioning: pooled size mismatch");
        for (std::size_t i = 0; i < tok.size(); ++i) tok[i] += it.tokens_embedded[i];
        for (std::size_t i = 0; i < pool.size(); ++i) pool[i] += it.pooled[i];
        if (!out.source_text.empty()) out.source_text += " | ";
        out.source_text += it.source_text;
        out.warnings.insert(out.warnings.end(), it.warnings.begin(), it.warnings.end());
    }
    const double n = static_cast<double>(items.size());
    out.tokens_embedded = Tensor(first.tokens_embedded.shape());
    for (std::size_t i = 0; i < tok.size(); ++i) out.tokens_embedded[i] = static_cast<float>(tok[i] / n);
    out.pooled.resize(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) out.pooled[i] = static_cast<float>(pool[i] / n);
    return out;
}

TextConditioning mean_conditioning(TextEmbedder& embedder, const std::vector<std::string>& captions) {
    if (captions.empty()) throw ContractError("mean_conditioning: empty caption list");
    std::vector<TextConditioning> items;
    items.reserve(captions.size());
    for (const auto& c : captions) items.push_back(embedder.embed(c));
    return mean_conditioning(items);
}

EditDirection direction(const TextConditioning& before, const TextConditioning& after) {
    require_same_shape(after.tokens_embedded, before.tokens_embedded, "direction");
    if (after.pooled.size() != before.pooled.size()) throw ContractError("direction: pooled size mismatch");
    EditDirection d;
    d.delta_tokens = Tensor(before.tokens_embedded.shape());
    kernels::sub(after.tokens_embedded.values(), before.tokens_embedded.values(), d.delta_tokens.values());
    d.delta_pooled.resize(before.pooled.size());
    kernels::sub(after.pooled, before.pooled, d.delta_pooled);
    if (!d.delta_tokens.all_finite()) throw ContractError("direction: non-finite embedding difference");
    d.before_text = before.source_text;
    d.after_text = after.source_text;
    return d;
}

TextConditioning apply(const EditDirection& d, const TextConditioning& base, double w, bool allow_zero_weight) {
    if (!(w > 0.0 || (allow_zero_weight && w == 0.0)))
        throw ContractError("apply: weight must be > 0, got " + std::to_string(w));
    require_same_shape(base.tokens_embedded, d.delta_tokens, "apply");
    if (base.pooled.size() != d.delta_pooled.size()) throw ContractError("apply: pooled size mismatch");
    TextConditioning out = base;
    kernels::axpby(1.0, base.tokens_embedded.values(), w, d.delta_tokens.values(), out.tokens_embedded.values());
    kernels::axpby(1.0, base.pooled, w, d.delta_pooled, out.pooled);
    std::ostringstream note;
    note << base.source_text << " {edit w=" << w << "}";
    out.source_text = note.str();
    return out;
}

double shift_norm(const EditDirection& d, double w) { return std::abs(w) * kernels::norm(d.delta_tokens.values()); }

namespace {

constexpr const char* kDirMagic = "DDIMDIR1";
constexpr const char* kCondMagic = "DDIMCND1";

Tensor pooled_tensor(const std::vector<float>& v) {
    return Tensor({static_cast<std::int64_t>(v.size())}, v);
}

}  // namespace

void save_direction(const std::filesystem::path& path, const EditDirection& d) {
    BinaryRecord rec;
    rec.meta = {{"weight", d.weight}, {"before_text", d.before_text}, {"after_text", d.after_text}};
    rec.tensors = {d.delta_tokens, pooled_tensor(d.delta_pooled)};
    write_binary_record(path, kDirMagic, rec);
}

EditDirection load_direction(const std::filesystem::path& path) {
    auto rec = read_binary_record(path, kDirMagic);
    if (rec.tensors.size() != 2) throw InputFormatError(path.string(), "expected token and pooled tensors");
    EditDirection d;
    try {
        d.weight = rec.meta.at("weight").get<double>();
        d.before_text = rec.meta.at("before_text").get<std::string>();
        d.after_text = rec.meta.at("after_text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw InputFormatError(path.string(), e.what());
    }
    d.delta_tokens = std::move(rec.tensors[0]);
    const auto v = rec.tensors[1].values();
    d.delta_pooled.assign(v.begin(), v.end());
    return d;
}

void save_conditioning(const std::filesystem::path& path, const TextConditioning& c) {
    BinaryRecord rec;
    rec.meta = {{"source_text", c.source_text}, {"warnings", c.warnings}};
    rec.tensors = {c.tokens_embedded, pooled_tensor(c.pooled)};
    write_binary_record(path, kCondMagic, rec);
}

TextConditioning load_conditioning(const std::filesystem::path& path) {
    auto rec = read_binary_record(path, kCondMagic);
    if (rec.tensors.size() != 2) throw InputFormatError(path.string(), "expected token and pooled tensors");
    TextConditioning c;
    try {
        c.source_text = rec.meta.at("source_text").get<std::string>();
        c.warnings = rec.meta.value("warnings", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
        throw InputFormatError(path.string(), e.what());
    }
    c.tokens_embedded = std::move(rec.tensors[0]);
    const auto v = rec.tensors[1].values();
    c.pooled.assign(v.begin(), v.end());
    return c;
}

}  // namespace ddimedit
