#include <doctest.h>

#include <cstdlib>
#include <cstring>

#include "ddimedit/adapter_config.hpp"
#include "ddimedit/editor.hpp"
#include "ddimedit/errors.hpp"
#include "ddimedit/remote_adapters.hpp"
#include "fake_model_server.hpp"
#include "test_paths.hpp"

using namespace ddimedit;
using nlohmann::json;
using test_server::FakeModelServer;

namespace {

AdapterConfig real_config(const std::string& url) {
    AdapterConfig cfg;
    cfg.profile = "real";
    for (const char* role : kAdapterRoles) cfg.roles[role] = RoleConfig{std::string("test/") + role, url};
    cfg.context_length = 16;
    cfg.embed_dim = 64;
    cfg.codec_factor = 8;
    cfg.codec_channels = 4;
    cfg.request_timeout_s = 10;
    cfg.llm_retries = 2;
    return cfg;
}

Image gradient(int w, int h) {
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto* p = img.at(x, y);
            p[0] = static_cast<std::uint8_t>(x * 7);
            p[1] = static_cast<std::uint8_t>(y * 9);
            p[2] = static_cast<std::uint8_t>(200 - x - y);
        }
    return img;
}

std::vector<float> vec(std::span<const float> s) { return {s.begin(), s.end()}; }

template <class E, class F>
E capture(F&& f) {
    try {
        f();
    } catch (const E& e) {
        return e;
    }
    FAIL("expected exception");
    throw;
}

}  // namespace

TEST_CASE("tensor records round-trip exactly") {
    Tensor t({2, 3}, {0.1f, -2.5f, 3e-8f, 1e30f, -0.0f, 7.0f});
    const Tensor back = tensor_from_json(tensor_to_json(t));
    CHECK(back.shape() == t.shape());
    CHECK(std::memcmp(back.data(), t.data(), t.size() * sizeof(float)) == 0);
    json bad = tensor_to_json(t);
    bad["shape"] = {2, 2};
    CHECK_THROWS_AS(tensor_from_json(bad), InputFormatError);
    bad = tensor_to_json(t);
    bad["dtype"] = "float16";
    CHECK_THROWS_AS(tensor_from_json(bad), InputFormatError);
}

TEST_CASE("remote adapters match the adapters behind the server") {
    FakeModelServer server;
    AdapterSet mock = make_mock_adapters(MockOptions{});
    AdapterSet remote = make_adapters(real_config(server.url()));
    CHECK(remote.profile == "real");

    const auto a = remote.text->embed("a  red   apple ");
    const auto b = mock.text->embed("a red apple");
    CHECK(vec(a.tokens_embedded.values()) == vec(b.tokens_embedded.values()));
    CHECK(a.pooled == b.pooled);
    CHECK(server.last_body("/embed_text").at("text") == "a red apple");
    CHECK(server.last_body("/embed_text").at("model") == "test/text_embedder");
    CHECK(vec(remote.text->embed_unconditional().tokens_embedded.values()) ==
          vec(mock.text->embed_unconditional().tokens_embedded.values()));
    CHECK_THROWS_AS(remote.text->embed("   "), ContractError);

    const Image img = gradient(40, 24);
    CHECK(remote.image->embed(img, "x").vector == mock.image->embed(img, "x").vector);
    CHECK(remote.captioner->caption(img, "x") == mock.captioner->caption(img, "x"));

    const auto la = remote.codec->encode(img);
    const auto lb = mock.codec->encode(img);
    CHECK(vec(la.data.values()) == vec(lb.data.values()));
    CHECK(la.width == lb.width);
    CHECK(la.original_width == 40);

    const Tensor eps_a = remote.denoiser->predict(la.data, 981, a);
    const Tensor eps_b = mock.denoiser->predict(lb.data, 981, b);
    CHECK(vec(eps_a.values()) == vec(eps_b.values()));
    CHECK_THROWS_AS(remote.denoiser->predict(Tensor({3, 2, 2}), 1, a), ContractError);

    LatentImage l = la;
    l.original_width = l.width;
    l.original_height = l.height;
    CHECK(remote.codec->decode(l) == mock.codec->decode(l));

    LlmConfig lc;
    lc.seed = 9;
    const std::string prompt = "Caption: \"a red apple\"\nInstruction: \"make it green\"\nAfter:";
    CHECK(remote.llm->generate(prompt, lc) == mock.llm->generate(prompt, lc));
    CHECK(server.last_body("/v1/completions").at("seed") == 9);
}

TEST_CASE("transport failures are classified") {
    FakeModelServer server;
    auto cfg = real_config(server.url());
    cfg.llm_api_key = "sk-test";
    AdapterSet remote = make_adapters(cfg);

    server.fail_next("/caption", 503);
    const auto e503 = capture<TransportError>([&] { remote.captioner->caption(gradient(8, 8), ""); });
    CHECK(e503.retryable());
    CHECK(e503.kind() == "transport_retryable");

    server.fail_next("/caption", 404);
    CHECK_FALSE(capture<TransportError>([&] { remote.captioner->caption(gradient(8, 8), ""); }).retryable());

    // the LLM retries retryable failures up to llm_retries times
    server.fail_next("/v1/completions", 503, 2);
    const int before = server.hits("/v1/completions");
    CHECK_FALSE(remote.llm->generate("hello there", LlmConfig{}).empty());
    CHECK(server.hits("/v1/completions") - before == 3);
    CHECK(server.last_authorization() == "Bearer sk-test");

    server.fail_next("/v1/completions", 429, 3);
    CHECK(capture<TransportError>([&] { remote.llm->generate("hello there", LlmConfig{}); }).retryable());

    server.max_prompt_chars = 8;
    CHECK_THROWS_AS(remote.llm->generate("a prompt that is too long", LlmConfig{}), LlmInputError);

    AdapterSet dead = make_adapters(real_config("http://127.0.0.1:1"));
    CHECK(capture<TransportError>([&] { dead.text->embed("x"); }).retryable());
}

TEST_CASE("real profile configuration errors name the key") {
    auto cfg = real_config("http://127.0.0.1:1");
    cfg.roles["captioner"].endpoint.clear();
    CHECK(capture<ConfigError>([&] { make_adapters(cfg); }).key() == "roles.captioner.endpoint");
    cfg = real_config("http://127.0.0.1:1");
    cfg.roles.erase("denoiser");
    CHECK(capture<ConfigError>([&] { make_adapters(cfg); }).key() == "roles.denoiser");
    cfg = real_config("127.0.0.1:1");
    CHECK(capture<ConfigError>([&] { make_adapters(cfg); }).key() == "endpoint");
}

TEST_CASE("environment overrides point the real profile at a server") {
    FakeModelServer server;
    AdapterConfig cfg = real_config("");
    for (auto& [name, role] : cfg.roles) role.endpoint.clear();
    cfg.profile = "mock";
    setenv("DDIMEDIT_PROFILE", "real", 1);
    setenv("DDIMEDIT_MODEL_SERVER_URL", server.url().c_str(), 1);
    setenv("DDIMEDIT_LLM_URL", server.url().c_str(), 1);
    setenv("DDIMEDIT_LLM_API_KEY", "k2", 1);
    apply_env_overrides(cfg);
    unsetenv("DDIMEDIT_PROFILE");
    unsetenv("DDIMEDIT_MODEL_SERVER_URL");
    unsetenv("DDIMEDIT_LLM_URL");
    unsetenv("DDIMEDIT_LLM_API_KEY");
    CHECK(cfg.profile == "real");
    CHECK(cfg.llm_api_key == "k2");
    for (const char* role : kAdapterRoles) CHECK(cfg.roles.at(role).endpoint == server.url());
    AdapterSet remote = make_adapters(cfg);
    remote.llm->generate("hi", LlmConfig{});
    CHECK(server.last_authorization() == "Bearer k2");
}

TEST_CASE("a full edit over HTTP reproduces the mock edit") {
    FakeModelServer server;
    const auto dir = test_paths::scratch("remote_edit");
    EditRequest req;
    req.image = gradient(40, 24);
    req.instruction = "make it green";
    req.config.steps_invert = 4;
    req.config.steps_generate = 4;

    Editor local(make_mock_adapters(MockOptions{}), dir / "mock");
    Editor remote(make_adapters(real_config(server.url())), dir / "real");
    const auto a = local.edit(req);
    const auto b = remote.edit(req);
    CHECK(a.output_image == b.output_image);
    CHECK(a.caption_pair.after == b.caption_pair.after);
    CHECK(a.direction_norm == b.direction_norm);
    CHECK(a.manifest_id != b.manifest_id);  // model ids differ
    CHECK(b.manifest.at("models").at("profile") == "real");
    CHECK(server.hits("/predict_noise") == 4 + 2 * 4);  // inversion, then guided generation
}
