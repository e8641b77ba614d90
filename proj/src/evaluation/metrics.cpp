#include <cmath>
#include <map>

#include "ddimedit/errors.hpp"
#include "ddimedit/evaluation.hpp"
#include "ddimedit/kernels.hpp"

namespace ddimedit {
namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, int> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
    std::map<Ngram, int> out;
    if (toks.size() < n) return out;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[Ngram(toks.begin() + i, toks.begin() + i + n)];
    return out;
}

struct BleuStats {
    long long matches[4] = {0, 0, 0, 0};
    long long totals[4] = {0, 0, 0, 0};
    long long hyp_len = 0;
    long long ref_len = 0;
};

void accumulate(BleuStats& st, const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
    for (std::size_t n = 1; n <= 4; ++n) {
        const auto h = ngram_counts(hyp, n);
        const auto r = ngram_counts(ref, n);
        long long total = 0, clipped = 0;
        for (const auto& [g, c] : h) {
            total += c;
            auto it = r.find(g);
            if (it != r.end()) clipped += std::min(c, it->second);
        }
        st.matches[n - 1] += clipped;
        st.totals[n - 1] += std::max<long long>(1, total);
    }
    st.hyp_len += static_cast<long long>(hyp.size());
    st.ref_len += static_cast<long long>(ref.size());
}

double score(const BleuStats& st) {
    for (long long m : st.matches)
        if (m == 0) return 0.0;
    double log_sum = 0.0;
    for (int n = 0; n < 4; ++n)
        log_sum += 0.25 * std::log(static_cast<double>(st.matches[n]) / static_cast<double>(st.totals[n]));
    double bp = 1.0;
    if (st.hyp_len == 0) bp = 0.0;
    else if (st.hyp_len <= st.ref_len)
        bp = std::exp(1.0 - static_cast<double>(st.ref_len) / static_cast<double>(st.hyp_len));
    return 100.0 * bp * std::exp(log_sum);
}

double checked_cosine(const std::vector<float>& a, const std::vector<float>& b, const char* what) {
    if (a.size() != b.size())
        throw ContractError(std::string(what) + ": embedding sizes differ (" + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()) + ")");
    if (a.empty()) throw ContractError(std::string(what) + ": empty embedding");
    return kernels::cosine(a, b);
}

}  // namespace

double bleu4(std::string_view candidate, std::string_view reference) {
    BleuStats st;
    accumulate(st, moses_tokenize(candidate), moses_tokenize(reference));
    return score(st);
}

double corpus_bleu4(const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
    if (candidates.size() != references.size())
        throw ContractError("corpus_bleu4: " + std::to_string(candidates.size()) + " candidates vs " +
                            std::to_string(references.size()) + " references");
    BleuStats st;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        accumulate(st, moses_tokenize(candidates[i]), moses_tokenize(references[i]));
    return score(st);
}

double clip_t(const Image& output, const std::string& caption, AdapterSet& adapters, const std::string& image_id) {
    const auto img = adapters.image->embed(output, image_id);
    const auto txt = adapters.text->embed(caption);
    return checked_cosine(img.vector, txt.pooled, "clip_t");
}

double clip_i(const Image& output, const Image& reference, AdapterSet& adapters) {
    const auto a = adapters.image->embed(output, "");
    const auto b = adapters.image->embed(reference, "");
    return checked_cosine(a.vector, b.vector, "clip_i");
}

double caption_cosine(const std::string& candidate, const std::string& reference, AdapterSet& adapters) {
    const auto a = adapters.text->embed(candidate);
    const auto b = adapters.text->embed(reference);
    return checked_cosine(a.pooled, b.pooled, "caption_cosine");
}

}  // namespace ddimedit
