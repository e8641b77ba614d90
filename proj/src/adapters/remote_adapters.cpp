#include "ddimedit/remote_adapters.hpp"

#include <httplib.h>

#include <chrono>
#include <cstring>
#include <thread>

#include "ddimedit/errors.hpp"
#include "ddimedit/hashing.hpp"
#include "ddimedit/mock_adapters.hpp"

namespace ddimedit {

using nlohmann::json;

json tensor_to_json(const Tensor& t) {
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(t.data());
    return json{{"shape", t.shape()},
                {"dtype", "float32"},
                {"data_b64", base64_encode({bytes, t.size() * sizeof(float)})}};
}

Tensor tensor_from_json(const json& j) {
    if (!j.is_object() || !j.contains("shape") || !j.contains("data_b64"))
        throw InputFormatError("<tensor>", "tensor record needs shape and data_b64");
    if (j.value("dtype", "float32") != "float32") throw InputFormatError("<tensor>", "only float32 tensors supported");
    auto shape = j.at("shape").get<std::vector<std::int64_t>>();
    const auto bytes = base64_decode(j.at("data_b64").get<std::string>());
    if (bytes.size() != element_count(shape) * sizeof(float))
        throw InputFormatError("<tensor>", "payload size does not match shape " + shape_string(shape));
    std::vector<float> data(element_count(shape));
    std::memcpy(data.data(), bytes.data(), bytes.size());
    return Tensor(std::move(shape), std::move(data));
}

// ---------------------------------------------------------------------------

struct JsonHttpClient::Impl {
    std::unique_ptr<httplib::Client> client;
    std::string prefix;
};

JsonHttpClient::JsonHttpClient(std::string endpoint, int timeout_s, std::string bearer_token)
    : endpoint_(std::move(endpoint)), impl_(std::make_unique<Impl>()) {
    const auto scheme = endpoint_.find("://");
    if (scheme == std::string::npos) throw ConfigError("endpoint", "'" + endpoint_ + "' lacks an http(s):// scheme");
    const auto slash = endpoint_.find('/', scheme + 3);
    std::string base = slash == std::string::npos ? endpoint_ : endpoint_.substr(0, slash);
    impl_->prefix = slash == std::string::npos ? "" : endpoint_.substr(slash);
    while (!impl_->prefix.empty() && impl_->prefix.back() == '/') impl_->prefix.pop_back();
    impl_->client = std::make_unique<httplib::Client>(base);
    impl_->client->set_connection_timeout(std::chrono::seconds(10));
    impl_->client->set_read_timeout(std::chrono::seconds(timeout_s));
    impl_->client->set_write_timeout(std::chrono::seconds(timeout_s));
    if (!bearer_token.empty()) impl_->client->set_bearer_token_auth(bearer_token);
}

JsonHttpClient::~JsonHttpClient() = default;

json JsonHttpClient::post(const std::string& route, const json& body) {
    const std::string path = impl_->prefix + route;
    auto res = impl_->client->Post(path, body.dump(), "application/json");
    if (!res)
        throw TransportError(endpoint_ + path + ": " + httplib::to_string(res.error()), /*retryable=*/true);
    if (res->status == 429 || res->status >= 500)
        throw TransportError(endpoint_ + path + ": HTTP " + std::to_string(res->status), true);
    if (res->status < 200 || res->status >= 300) {
        const std::string detail = res->body.substr(0, 300);
        if (res->status == 400 || res->status == 413 || res->status == 422) {
            // servers report context overflow as a 400-class error mentioning the limit
            if (detail.find("context") != std::string::npos || detail.find("too long") != std::string::npos ||
                detail.find("maximum") != std::string::npos)
                throw LlmInputError(endpoint_ + path + ": " + detail);
        }
        throw TransportError(endpoint_ + path + ": HTTP " + std::to_string(res->status) + " " + detail, false);
    }
    try {
        return json::parse(res->body);
    } catch (const json::exception& e) {
        throw TransportError(endpoint_ + path + ": malformed JSON response: " + e.what(), false);
    }
}

namespace {

std::string png_b64(const Image& image) { return base64_encode(encode_png(image)); }

void require_endpoint(const RoleConfig& role, const char* name) {
    if (role.endpoint.empty())
        throw ConfigError(std::string("roles.") + name + ".endpoint", "required for the real profile");
    if (role.model_id.empty())
        throw ConfigError(std::string("roles.") + name + ".model_id", "required for the real profile");
}

}  // namespace

RemoteTextEmbedder::RemoteTextEmbedder(RoleConfig role, std::int64_t context_length, std::int64_t embed_dim,
                                       int timeout_s)
    : role_((require_endpoint(role, "text_embedder"), std::move(role))),
      context_length_(context_length),
      embed_dim_(embed_dim),
      http_(role_.endpoint, timeout_s) {}

TextConditioning RemoteTextEmbedder::request(std::string_view text, bool unconditional) {
    const json res = http_.post("/embed_text", {{"model", role_.model_id},
                                                 {"text", std::string(text)},
                                                 {"unconditional", unconditional}});
    TextConditioning out;
    out.source_text = std::string(text);
    out.tokens_embedded = tensor_from_json(res.at("tokens"));
    out.pooled = res.at("pooled").get<std::vector<float>>();
    if (res.contains("warnings")) out.warnings = res.at("warnings").get<std::vector<std::string>>();
    if (out.context_length() != context_length_ || out.embed_dim() != embed_dim_)
        throw ContractError("embed_text: server returned tokens " + shape_string(out.tokens_embedded.shape()) +
                            ", configured [" + std::to_string(context_length_) + " x " +
                            std::to_string(embed_dim_) + "]");
    return out;
}

TextConditioning RemoteTextEmbedder::embed(std::string_view text) {
    const std::string norm = normalize_whitespace(text);
    if (norm.empty()) throw ContractError("embed_text: text is empty after trimming");
    return request(norm, false);
}

TextConditioning RemoteTextEmbedder::embed_unconditional() { return request("", true); }

RemoteImageEmbedder::RemoteImageEmbedder(RoleConfig role, std::int64_t embed_dim, int timeout_s)
    : role_((require_endpoint(role, "image_embedder"), std::move(role))),
      embed_dim_(embed_dim),
      http_(role_.endpoint, timeout_s) {}

ImageEmbedding RemoteImageEmbedder::embed(const Image& image, const std::string& image_id) {
    const json res = http_.post("/embed_image", {{"model", role_.model_id}, {"image_png_b64", png_b64(image)}});
    ImageEmbedding out;
    out.source_image_id = image_id;
    out.vector = res.at("vector").get<std::vector<float>>();
    return out;
}

RemoteCaptioner::RemoteCaptioner(RoleConfig role, int timeout_s)
    : role_((require_endpoint(role, "captioner"), std::move(role))), http_(role_.endpoint, timeout_s) {}

std::string RemoteCaptioner::caption(const Image& image, const std::string&) {
    const json res = http_.post("/caption", {{"model", role_.model_id}, {"image_png_b64", png_b64(image)}});
    auto text = normalize_whitespace(res.at("caption").get<std::string>());
    if (text.empty())
        throw AdapterUnavailableError("captioner", AdapterUnavailableError::Cause::runtime, "empty caption returned");
    return text;
}

RemoteNoisePredictor::RemoteNoisePredictor(RoleConfig role, int channels, int timeout_s)
    : role_((require_endpoint(role, "denoiser"), std::move(role))), channels_(channels), http_(role_.endpoint, timeout_s) {}

Tensor RemoteNoisePredictor::predict(const Tensor& latent, int timestep, const TextConditioning& conditioning) {
    if (latent.rank() != 3 || latent.dim(0) != channels_)
        throw ContractError("predict_noise: latent shape " + shape_string(latent.shape()) + " vs model [" +
                            std::to_string(channels_) + " x H x W]");
    const json res = http_.post("/predict_noise", {{"model", role_.model_id},
                                                    {"timestep", timestep},
                                                    {"latent", tensor_to_json(latent)},
                                                    {"conditioning", tensor_to_json(conditioning.tokens_embedded)}});
    Tensor eps = tensor_from_json(res.at("eps"));
    require_same_shape(eps, latent, "predict_noise");
    return eps;
}

RemoteLatentCodec::RemoteLatentCodec(RoleConfig role, int factor, int channels, int timeout_s)
    : role_((require_endpoint(role, "codec"), std::move(role))),
      factor_(factor),
      channels_(channels),
      http_(role_.endpoint, timeout_s) {}

LatentImage RemoteLatentCodec::encode(const Image& image) {
    const CropBox box = center_crop_box(image.width, image.height, factor_);
    const Image src = (box.width == image.width && box.height == image.height) ? image : crop(image, box);
    const json res = http_.post("/encode", {{"model", role_.model_id}, {"image_png_b64", png_b64(src)}});
    LatentImage out;
    out.data = tensor_from_json(res.at("latent"));
    out.scaling_factor = res.value("scaling_factor", 0.18215);
    out.width = box.width;
    out.height = box.height;
    out.original_width = image.width;
    out.original_height = image.height;
    const std::vector<std::int64_t> want{channels_, box.height / factor_, box.width / factor_};
    if (out.data.shape() != want)
        throw ContractError("encode_image: server latent " + shape_string(out.data.shape()) + " vs expected " +
                            shape_string(want));
    return out;
}

Image RemoteLatentCodec::decode(const LatentImage& latent) {
    const json res = http_.post("/decode", {{"model", role_.model_id},
                                             {"latent", tensor_to_json(latent.data)},
                                             {"scaling_factor", latent.scaling_factor}});
    Image core = decode_png(base64_decode(res.at("image_png_b64").get<std::string>()), "<decode response>");
    const int ow = latent.original_width > 0 ? latent.original_width : core.width;
    const int oh = latent.original_height > 0 ? latent.original_height : core.height;
    if (ow == core.width && oh == core.height) return core;
    const CropBox box = center_crop_box(ow, oh, factor_);
    Image out(ow, oh);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const int cx = std::clamp(x - box.x, 0, core.width - 1);
            const int cy = std::clamp(y - box.y, 0, core.height - 1);
            std::copy_n(core.at(cx, cy), 3, out.at(x, y));
        }
    return out;
}

RemoteTextGenerator::RemoteTextGenerator(RoleConfig role, std::string api_key, int timeout_s, int retries)
    : role_((require_endpoint(role, "llm"), std::move(role))),
      retries_(retries),
      http_(role_.endpoint, timeout_s, std::move(api_key)) {}

std::string RemoteTextGenerator::generate(std::string_view prompt, const LlmConfig& config) {
    if (prompt.empty()) throw ContractError("generate_text: empty prompt");
    const std::string text =
        config.uses_chat_template ? apply_chat_template(role_.model_id, prompt) : std::string(prompt);
    const json body{{"model", role_.model_id},
                    {"prompt", text},
                    {"max_tokens", config.max_new_tokens},
                    {"temperature", config.temperature},
                    {"seed", config.seed}};
    for (int attempt = 0;; ++attempt) {
        try {
            const json res = http_.post("/v1/completions", body);
            return res.at("choices").at(0).at("text").get<std::string>();
        } catch (const TransportError& e) {
            if (!e.retryable() || attempt >= retries_) throw;
            std::this_thread::sleep_for(std::chrono::milliseconds(250 << attempt));
        }
    }
}

}  // namespace ddimedit
