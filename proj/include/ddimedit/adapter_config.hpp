#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "ddimedit/adapters.hpp"
#include "ddimedit/mock_adapters.hpp"

namespace ddimedit {

// One adapter role (text_embedder, image_embedder, captioner, denoiser,
// codec, llm) under the real profile.
struct RoleConfig {
    std::string model_id;
    std::string endpoint;  // http(s)://host[:port][/prefix]
    std::string device = "cuda:0";
    std::string precision = "fp16";
};

// Adapter selection record. Profile "mock" builds the deterministic mocks;
// profile "real" talks to a model server and an OpenAI-compatible
// completion endpoint named per role.
struct AdapterConfig {
    std::string profile = "mock";
    std::map<std::string, RoleConfig> roles;
    LlmConfig llm;
    std::string llm_api_key;
    int request_timeout_s = 300;
    int llm_retries = 2;
    // Shapes advertised by the real model stack (defaults: SD 1.x + CLIP).
    int codec_factor = 8;
    int codec_channels = 4;
    std::int64_t context_length = 77;
    std::int64_t embed_dim = 768;
    MockOptions mock;
};

inline constexpr const char* kAdapterRoles[] = {"text_embedder", "image_embedder", "captioner",
                                                "denoiser",      "codec",          "llm"};

AdapterConfig adapter_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AdapterConfig& cfg);
AdapterConfig load_adapter_config(const std::filesystem::path& path);

// DDIMEDIT_PROFILE, DDIMEDIT_LLM_URL, DDIMEDIT_LLM_API_KEY and
// DDIMEDIT_MODEL_SERVER_URL (endpoint for every non-LLM role).
void apply_env_overrides(AdapterConfig& cfg);

// Throws ConfigError naming the missing key when the profile cannot be built.
AdapterSet make_adapters(const AdapterConfig& cfg);

// Model ids used in cache keys and manifests.
std::string model_fingerprint(const AdapterSet& set);

}  // namespace ddimedit
