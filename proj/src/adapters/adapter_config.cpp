#include "ddimedit/adapter_config.hpp"

#include <cstdlib>

#include "ddimedit/errors.hpp"
#include "ddimedit/image.hpp"
#include "ddimedit/remote_adapters.hpp"

namespace ddimedit {

using nlohmann::json;

AdapterConfig adapter_config_from_json(const json& j) {
    AdapterConfig cfg;
    try {
        cfg.profile = j.value("profile", cfg.profile);
        cfg.request_timeout_s = j.value("request_timeout_s", cfg.request_timeout_s);
        cfg.llm_retries = j.value("llm_retries", cfg.llm_retries);
        cfg.codec_factor = j.value("codec_factor", cfg.codec_factor);
        cfg.codec_channels = j.value("codec_channels", cfg.codec_channels);
        cfg.context_length = j.value("context_length", cfg.context_length);
        cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
        if (j.contains("roles")) {
            for (const auto& [name, r] : j.at("roles").items()) {
                RoleConfig role;
                role.model_id = r.value("model_id", "");
                role.endpoint = r.value("endpoint", "");
                role.device = r.value("device", role.device);
                role.precision = r.value("precision", role.precision);
                cfg.roles[name] = role;
                if (name == "llm") {
                    cfg.llm.model_id = role.model_id;
                    cfg.llm.uses_chat_template = r.value("uses_chat_template", false);
                    cfg.llm.max_new_tokens = r.value("max_new_tokens", cfg.llm.max_new_tokens);
                    cfg.llm.temperature = r.value("temperature", cfg.llm.temperature);
                    cfg.llm_api_key = r.value("api_key", "");
                }
            }
        }
        if (j.contains("mock")) {
            const auto& m = j.at("mock");
            auto& mo = cfg.mock;
            mo.seed = m.value("seed", mo.seed);
            mo.embed_dim = m.value("embed_dim", mo.embed_dim);
            mo.context_length = m.value("context_length", mo.context_length);
            mo.codec_factor = m.value("codec_factor", mo.codec_factor);
            mo.predictor = m.value("predictor", mo.predictor);
            mo.predictor_gain = m.value("predictor_gain", mo.predictor_gain);
            mo.predictor_coupling = m.value("predictor_coupling", mo.predictor_coupling);
            mo.llm_synthesize_unscripted = m.value("llm_synthesize_unscripted", mo.llm_synthesize_unscripted);
            if (m.contains("captions")) mo.captions = m.at("captions").get<std::map<std::string, std::string>>();
            if (m.contains("llm_script")) mo.llm_script = m.at("llm_script").get<std::map<std::string, std::string>>();
        }
    } catch (const json::exception& e) {
        throw ConfigError("<root>", std::string("malformed adapter config: ") + e.what());
    }
    if (cfg.profile != "mock" && cfg.profile != "real")
        throw ConfigError("profile", "must be 'mock' or 'real', got '" + cfg.profile + "'");
    return cfg;
}

json to_json(const AdapterConfig& cfg) {
    json roles = json::object();
    for (const auto& [name, r] : cfg.roles)
        roles[name] = {{"model_id", r.model_id}, {"endpoint", r.endpoint}, {"device", r.device}, {"precision", r.precision}};
    // api keys are never written out
    return json{{"profile", cfg.profile},
                {"roles", roles},
                {"llm", {{"model_id", cfg.llm.model_id},
                         {"uses_chat_template", cfg.llm.uses_chat_template},
                         {"max_new_tokens", cfg.llm.max_new_tokens},
                         {"temperature", cfg.llm.temperature}}},
                {"codec_factor", cfg.codec_factor},
                {"context_length", cfg.context_length},
                {"embed_dim", cfg.embed_dim},
                {"mock", {{"seed", cfg.mock.seed},
                          {"embed_dim", cfg.mock.embed_dim},
                          {"context_length", cfg.mock.context_length},
                          {"codec_factor", cfg.mock.codec_factor},
                          {"predictor", cfg.mock.predictor},
                          {"predictor_gain", cfg.mock.predictor_gain},
                          {"predictor_coupling", cfg.mock.predictor_coupling}}}};
}

AdapterConfig load_adapter_config(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InputFormatError(path.string(), std::string("invalid JSON: ") + e.what());
    }
    return adapter_config_from_json(j);
}

void apply_env_overrides(AdapterConfig& cfg) {
    if (const char* p = std::getenv("DDIMEDIT_PROFILE"); p && *p) cfg.profile = p;
    if (const char* url = std::getenv("DDIMEDIT_LLM_URL"); url && *url) cfg.roles["llm"].endpoint = url;
    if (const char* key = std::getenv("DDIMEDIT_LLM_API_KEY"); key && *key) cfg.llm_api_key = key;
    if (const char* url = std::getenv("DDIMEDIT_MODEL_SERVER_URL"); url && *url)
        for (const char* role : kAdapterRoles)
            if (std::string(role) != "llm") cfg.roles[role].endpoint = url;
}

AdapterSet make_adapters(const AdapterConfig& cfg) {
    if (cfg.profile == "mock") {
        AdapterSet set = make_mock_adapters(cfg.mock);
        return set;
    }
    auto role = [&](const char* name) -> RoleConfig {
        auto it = cfg.roles.find(name);
        if (it == cfg.roles.end()) throw ConfigError(std::string("roles.") + name, "missing for the real profile");
        return it->second;
    };
    AdapterSet set;
    set.profile = "real";
    const int t = cfg.request_timeout_s;
    set.text = std::make_shared<RemoteTextEmbedder>(role("text_embedder"), cfg.context_length, cfg.embed_dim, t);
    set.image = std::make_shared<RemoteImageEmbedder>(role("image_embedder"), cfg.embed_dim, t);
    set.captioner = std::make_shared<RemoteCaptioner>(role("captioner"), t);
    set.denoiser = std::make_shared<RemoteNoisePredictor>(role("denoiser"), cfg.codec_channels, t);
    set.codec = std::make_shared<RemoteLatentCodec>(role("codec"), cfg.codec_factor, cfg.codec_channels, t);
    set.llm = std::make_shared<RemoteTextGenerator>(role("llm"), cfg.llm_api_key, t, cfg.llm_retries);
    set.llm_config = cfg.llm;
    return instrument(std::move(set));
}

std::string model_fingerprint(const AdapterSet& set) {
    std::string s;
    auto add = [&](const std::string& v) {
        if (!s.empty()) s += "|";
        s += v;
    };
    add(set.text ? set.text->model_id() : "-");
    add(set.denoiser ? set.denoiser->model_id() : "-");
    add(set.codec ? set.codec->model_id() : "-");
    return s;
}

}  // namespace ddimedit
