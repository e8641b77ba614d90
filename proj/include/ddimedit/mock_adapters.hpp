#pragma once

// Deterministic, model-free adapters. Every value they produce is a pure
// function of the inputs and a seed, so the whole editor runs offline and
// repeated runs are bitwise identical.
//
// Mock text embedding (re-derivable by any implementation):
//   unit(s, seed)  = hash_unit_vector(s, seed, embed_dim)   (see hashing.hpp)
//   pooled(text)   = unit(normalize(text), seed)
//   words          = lowercase runs of [a-z0-9'] in the text
//   sequence       = "<bos>", words..., "<eos>", padded with "<eos>" to
//                    context_length; words beyond context_length-2 dropped
//   token row i    = unit-normalized prefix sum of unit("tok:" + w_j, seed)
//                    for j <= i
// where normalize() trims and collapses inner whitespace.

#include <map>
#include <string>

#include "ddimedit/adapters.hpp"

namespace ddimedit {

struct MockOptions {
    std::uint64_t seed = 0;
    std::int64_t embed_dim = 64;
    std::int64_t context_length = 16;
    int codec_factor = 8;
    std::string predictor = "conditioned";  // zero | linear | frozen_random | conditioned
    double predictor_gain = 0.05;           // linear / conditioned: eps += gain * z
    double predictor_coupling = 0.5;        // conditioned: eps += coupling * field(conditioning)
    std::map<std::string, std::string> captions;     // image id -> caption
    std::map<std::string, std::string> llm_script;   // exact prompt -> completion
    bool llm_synthesize_unscripted = true;
};

std::string normalize_whitespace(std::string_view text);
std::vector<std::string> mock_words(std::string_view text);

class MockTextEmbedder final : public TextEmbedder {
public:
    explicit MockTextEmbedder(const MockOptions& opts);
    TextConditioning embed(std::string_view text) override;
    TextConditioning embed_unconditional() override;
    std::int64_t context_length() const override { return context_length_; }
    std::int64_t embed_dim() const override { return embed_dim_; }
    std::string model_id() const override {
        return "mock-text-embedder/s" + std::to_string(seed_) + "/d" + std::to_string(embed_dim_) + "/l" +
               std::to_string(context_length_);
    }

private:
    TextConditioning encode(std::string_view text, bool allow_empty);
    std::uint64_t seed_;
    std::int64_t embed_dim_;
    std::int64_t context_length_;
};

// Projects a 4x4 grid of block-mean colors (plus a bias feature) through a
// seeded random matrix with SplitMix64 entries, then unit-normalizes.
class MockImageEmbedder final : public ImageEmbedder {
public:
    explicit MockImageEmbedder(const MockOptions& opts);
    ImageEmbedding embed(const Image& image, const std::string& image_id) override;
    std::int64_t embed_dim() const override { return embed_dim_; }
    std::string model_id() const override { return "mock-image-embedder"; }

private:
    std::int64_t embed_dim_;
    std::vector<float> projection_;  // embed_dim x kFeatures
};

// Fixture lookup by image id; unregistered images get a caption naming
// their dominant color.
class MockCaptioner final : public Captioner {
public:
    explicit MockCaptioner(std::map<std::string, std::string> table) : table_(std::move(table)) {}
    std::string caption(const Image& image, const std::string& image_id) override;
    std::string model_id() const override { return "mock-captioner"; }

private:
    std::map<std::string, std::string> table_;
};

class ZeroNoisePredictor final : public NoisePredictor {
public:
    Tensor predict(const Tensor& latent, int timestep, const TextConditioning& conditioning) override;
    std::string model_id() const override { return "mock-zero"; }
};

// eps = gain * z
class LinearNoisePredictor final : public NoisePredictor {
public:
    explicit LinearNoisePredictor(double gain) : gain_(static_cast<float>(gain)) {}
    Tensor predict(const Tensor& latent, int timestep, const TextConditioning& conditioning) override;
    std::string model_id() const override { return "mock-linear/g" + std::to_string(gain_); }

private:
    float gain_;
};

// eps depends only on (seed, timestep): a fixed random tensor per timestep.
class FrozenRandomNoisePredictor final : public NoisePredictor {
public:
    explicit FrozenRandomNoisePredictor(std::uint64_t seed) : seed_(seed) {}
    Tensor predict(const Tensor& latent, int timestep, const TextConditioning& conditioning) override;
    std::string model_id() const override { return "mock-frozen-random/s" + std::to_string(seed_); }

private:
    std::uint64_t seed_;
};

// eps = gain * z + coupling * F(c), where F is linear in the mean token
// embedding of c: channel k gets dot(mean_token, r_k) times a fixed spatial
// pattern p_k(y, x), with r_k and p_k seeded. Conditioning therefore steers
// generation, and classifier-free guidance has a visible effect.
class ConditionedNoisePredictor final : public NoisePredictor {
public:
    ConditionedNoisePredictor(const MockOptions& opts, int channels);
    Tensor predict(const Tensor& latent, int timestep, const TextConditioning& conditioning) override;
    std::string model_id() const override {
        return "mock-conditioned/s" + std::to_string(seed_) + "/g" + std::to_string(gain_) + "/c" +
               std::to_string(coupling_);
    }

private:
    std::uint64_t seed_;
    float gain_;
    float coupling_;
    int channels_;
};

// Channels 0..2 hold block-mean RGB mapped to [-1, 1]; channel 3 holds
// luminance. Decoding upsamples RGB by pixel replication. With factor 1 the
// round trip is the identity.
class MockLatentCodec final : public LatentCodec {
public:
    explicit MockLatentCodec(int factor) : factor_(factor) {}
    LatentImage encode(const Image& image) override;
    Image decode(const LatentImage& latent) override;
    int factor() const override { return factor_; }
    int channels() const override { return 4; }
    std::string model_id() const override { return "mock-codec-f" + std::to_string(factor_); }

private:
    int factor_;
};

// Scripted prompt -> completion table (exact match). Unscripted prompts get
// a synthesized completion when enabled, otherwise AdapterUnavailableError.
// Synthesis recognizes meta-prompts (emits `prompt: "..."` candidates that
// vary with the seed) and caption prompts (derives captions from the last
// two single-quoted spans of the final paragraph).
class ScriptedTextGenerator final : public TextGenerator {
public:
    ScriptedTextGenerator(std::map<std::string, std::string> script, bool synthesize)
        : script_(std::move(script)), synthesize_(synthesize) {}
    std::string generate(std::string_view prompt, const LlmConfig& config) override;
    std::string model_id() const override { return "mock-llm"; }

    void set(std::string prompt, std::string completion) { script_[std::move(prompt)] = std::move(completion); }

private:
    std::map<std::string, std::string> script_;
    bool synthesize_;
};

std::shared_ptr<NoisePredictor> make_mock_predictor(const MockOptions& opts, int channels);
AdapterSet make_mock_adapters(const MockOptions& opts);

}  // namespace ddimedit
