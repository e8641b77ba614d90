#pragma once

// Edit direction: mean(after) - mean(before) at token level, applied to a
// base conditioning with weight w.

#include <filesystem>
#include <string>
#include <vector>

#include "ddimedit/adapters.hpp"

namespace ddimedit {

struct EditDirection {
    Tensor delta_tokens;              // [context_length x embed_dim]
    std::vector<float> delta_pooled;  // [embed_dim]
    double weight = 1.0;
    std::string before_text;
    std::string after_text;
};

// Elementwise mean of the token and pooled embeddings, accumulated in double.
// A single caption returns the embedding unchanged.
TextConditioning mean_conditioning(const std::vector<TextConditioning>& items);
TextConditioning mean_conditioning(TextEmbedder& embedder, const std::vector<std::string>& captions);

// after - before. ContractError on shape mismatch.
EditDirection direction(const TextConditioning& before, const TextConditioning& after);

// base + w * delta on tokens and pooled. w must be > 0, or >= 0 with
// allow_zero_weight (reconstruction checks).
TextConditioning apply(const EditDirection& d, const TextConditioning& base, double w,
                       bool allow_zero_weight = false);

// Frobenius norm of w * delta_tokens.
double shift_norm(const EditDirection& d, double w);

void save_direction(const std::filesystem::path& path, const EditDirection& d);
EditDirection load_direction(const std::filesystem::path& path);

void save_conditioning(const std::filesystem::path& path, const TextConditioning& c);
TextConditioning load_conditioning(const std::filesystem::path& path);

}  // namespace ddimedit
