#pragma once

// Interfaces over the four pre-trained capabilities the editor consumes:
// text embedding, image embedding/captioning, noise prediction with a latent
// codec, and text generation. Implementations are single-threaded per
// instance; give each concurrent job its own AdapterSet.

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "ddimedit/image.hpp"
#include "ddimedit/tensor.hpp"

namespace ddimedit {

struct TextConditioning {
    Tensor tokens_embedded;     // [context_length x embed_dim], cross-attention input
    std::vector<float> pooled;  // [embed_dim], metric embedding
    std::string source_text;
    std::vector<std::string> warnings;

    std::int64_t context_length() const { return tokens_embedded.rank() == 2 ? tokens_embedded.dim(0) : 0; }
    std::int64_t embed_dim() const { return tokens_embedded.rank() == 2 ? tokens_embedded.dim(1) : 0; }
};

struct ImageEmbedding {
    std::vector<float> vector;
    std::string source_image_id;
};

// Latent of a (cropped) image. `width`/`height` are the encoded pixel
// dimensions; `original_width`/`original_height` the pre-crop size that
// decode restores.
struct LatentImage {
    Tensor data;  // [channels x height/factor x width/factor]
    int width = 0;
    int height = 0;
    int original_width = 0;
    int original_height = 0;
    double scaling_factor = 1.0;
};

struct LlmConfig {
    std::string model_id = "mock-llm";
    bool uses_chat_template = false;
    int max_new_tokens = 128;
    double temperature = 0.0;
    std::uint64_t seed = 0;
};

class TextEmbedder {
public:
    virtual ~TextEmbedder() = default;
    // Throws ContractError on blank text. Over-long text is truncated and
    // the truncation is recorded in `warnings`.
    virtual TextConditioning embed(std::string_view text) = 0;
    // Conditioning for the empty prompt (classifier-free guidance branch).
    virtual TextConditioning embed_unconditional() = 0;
    virtual std::int64_t context_length() const = 0;
    virtual std::int64_t embed_dim() const = 0;
    virtual std::string model_id() const = 0;
};

class ImageEmbedder {
public:
    virtual ~ImageEmbedder() = default;
    virtual ImageEmbedding embed(const Image& image, const std::string& image_id) = 0;
    virtual std::int64_t embed_dim() const = 0;
    virtual std::string model_id() const = 0;
};

class Captioner {
public:
    virtual ~Captioner() = default;
    virtual std::string caption(const Image& image, const std::string& image_id) = 0;
    virtual std::string model_id() const = 0;
};

class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    // Output has the latent's shape. Throws ContractError on a shape the
    // model cannot consume.
    virtual Tensor predict(const Tensor& latent, int timestep, const TextConditioning& conditioning) = 0;
    virtual std::string model_id() const = 0;
};

class LatentCodec {
public:
    virtual ~LatentCodec() = default;
    // Inputs whose sides are not multiples of factor() are center-cropped
    // to the nearest multiple first.
    virtual LatentImage encode(const Image& image) = 0;
    virtual Image decode(const LatentImage& latent) = 0;
    virtual int factor() const = 0;
    virtual int channels() const = 0;
    virtual std::string model_id() const = 0;
};

class TextGenerator {
public:
    virtual ~TextGenerator() = default;
    // Raw completion. Chat-template wrapping happens inside the adapter
    // when config.uses_chat_template is set.
    virtual std::string generate(std::string_view prompt, const LlmConfig& config) = 0;
    virtual std::string model_id() const = 0;
};

struct CallCounters {
    std::atomic<std::uint64_t> embed_text{0};
    std::atomic<std::uint64_t> embed_image{0};
    std::atomic<std::uint64_t> caption{0};
    std::atomic<std::uint64_t> predict_noise{0};
    std::atomic<std::uint64_t> encode{0};
    std::atomic<std::uint64_t> decode{0};
    std::atomic<std::uint64_t> generate_text{0};
};

// One complete set of adapters. Every adapter is wrapped in a counting
// decorator, so `counters` reflects all calls issued through this set.
struct AdapterSet {
    std::shared_ptr<TextEmbedder> text;
    std::shared_ptr<ImageEmbedder> image;
    std::shared_ptr<Captioner> captioner;
    std::shared_ptr<NoisePredictor> denoiser;
    std::shared_ptr<LatentCodec> codec;
    std::shared_ptr<TextGenerator> llm;
    LlmConfig llm_config;
    std::string profile;
    std::shared_ptr<CallCounters> counters = std::make_shared<CallCounters>();
};

// Wraps each adapter so calls are tallied in the set's counters.
AdapterSet instrument(AdapterSet raw);

// Chat template for a model family, applied when uses_chat_template is set.
// Model ids are matched case-insensitively by family substring (mistral,
// gemma, llama-3, llama-2-*-chat, phi); unknown families pass through.
std::string apply_chat_template(std::string_view model_id, std::string_view prompt);

}  // namespace ddimedit
