#pragma once

// HTTP-backed adapters for the real profile.
//
// Model server protocol (JSON over POST, one route per capability):
//   /embed_text    {model, text, unconditional}   -> {tokens: T, pooled: [f], warnings: [s]}
//   /embed_image   {model, image_png_b64}          -> {vector: [f]}
//   /caption       {model, image_png_b64}          -> {caption: s}
//   /predict_noise {model, timestep, latent: T, conditioning: T} -> {eps: T}
//   /encode        {model, image_png_b64}          -> {latent: T, scaling_factor: f}
//   /decode        {model, latent: T, scaling_factor: f} -> {image_png_b64}
// where T = {shape: [i], dtype: "float32", data_b64: little-endian bytes}.
//
// Text generation uses an OpenAI-compatible /v1/completions endpoint with an
// optional bearer token.

#include <memory>
#include <string>

#include <json.hpp>

#include "ddimedit/adapter_config.hpp"

namespace ddimedit {

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

// Minimal JSON-over-HTTP client. Connection failures, 429 and 5xx raise
// retryable TransportError; other non-2xx raise non-retryable ones.
class JsonHttpClient {
public:
    JsonHttpClient(std::string endpoint, int timeout_s, std::string bearer_token = {});
    ~JsonHttpClient();
    JsonHttpClient(const JsonHttpClient&) = delete;
    JsonHttpClient& operator=(const JsonHttpClient&) = delete;

    nlohmann::json post(const std::string& route, const nlohmann::json& body);
    const std::string& endpoint() const noexcept { return endpoint_; }

private:
    struct Impl;
    std::string endpoint_;
    std::unique_ptr<Impl> impl_;
};

class RemoteTextEmbedder final : public TextEmbedder {
public:
    RemoteTextEmbedder(RoleConfig role, std::int64_t context_length, std::int64_t embed_dim, int timeout_s);
    TextConditioning embed(std::string_view text) override;
    TextConditioning embed_unconditional() override;
    std::int64_t context_length() const override { return context_length_; }
    std::int64_t embed_dim() const override { return embed_dim_; }
    std::string model_id() const override { return role_.model_id; }

private:
    TextConditioning request(std::string_view text, bool unconditional);
    RoleConfig role_;
    std::int64_t context_length_;
    std::int64_t embed_dim_;
    JsonHttpClient http_;
};

class RemoteImageEmbedder final : public ImageEmbedder {
public:
    RemoteImageEmbedder(RoleConfig role, std::int64_t embed_dim, int timeout_s);
    ImageEmbedding embed(const Image& image, const std::string& image_id) override;
    std::int64_t embed_dim() const override { return embed_dim_; }
    std::string model_id() const override { return role_.model_id; }

private:
    RoleConfig role_;
    std::int64_t embed_dim_;
    JsonHttpClient http_;
};

class RemoteCaptioner final : public Captioner {
public:
    RemoteCaptioner(RoleConfig role, int timeout_s);
    std::string caption(const Image& image, const std::string& image_id) override;
    std::string model_id() const override { return role_.model_id; }

private:
    RoleConfig role_;
    JsonHttpClient http_;
};

class RemoteNoisePredictor final : public NoisePredictor {
public:
    RemoteNoisePredictor(RoleConfig role, int channels, int timeout_s);
    Tensor predict(const Tensor& latent, int timestep, const TextConditioning& conditioning) override;
    std::string model_id() const override { return role_.model_id; }

private:
    RoleConfig role_;
    int channels_;
    JsonHttpClient http_;
};

class RemoteLatentCodec final : public LatentCodec {
public:
    RemoteLatentCodec(RoleConfig role, int factor, int channels, int timeout_s);
    LatentImage encode(const Image& image) override;
    Image decode(const LatentImage& latent) override;
    int factor() const override { return factor_; }
    int channels() const override { return channels_; }
    std::string model_id() const override { return role_.model_id; }

private:
    RoleConfig role_;
    int factor_;
    int channels_;
    JsonHttpClient http_;
};

class RemoteTextGenerator final : public TextGenerator {
public:
    RemoteTextGenerator(RoleConfig role, std::string api_key, int timeout_s, int retries);
    std::string generate(std::string_view prompt, const LlmConfig& config) override;
    std::string model_id() const override { return role_.model_id; }

private:
    RoleConfig role_;
    int retries_;
    JsonHttpClient http_;
};

}  // namespace ddimedit
