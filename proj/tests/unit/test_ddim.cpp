#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "ddimedit/ddim.hpp"
#include "ddimedit/errors.hpp"
#include "ddimedit/mock_adapters.hpp"
#include "test_paths.hpp"

using namespace ddimedit;

namespace {

nlohmann::json reference() {
    std::ifstream in(test_paths::fixtures() / "ddim_reference.json");
    return nlohmann::json::parse(in);
}

Tensor scalar_tensor(float v) { return Tensor({1}, std::vector<float>{v}); }

Tensor random_latent(std::uint64_t seed, std::vector<std::int64_t> shape = {4, 8, 8}) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> d(0.0f, 1.0f);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = d(rng);
    return t;
}

LatentImage wrap(Tensor t) {
    LatentImage li;
    li.width = static_cast<int>(t.dim(2)) * 8;
    li.height = static_cast<int>(t.dim(1)) * 8;
    li.original_width = li.width;
    li.original_height = li.height;
    li.data = std::move(t);
    return li;
}

double round_trip_error(NoisePredictor& pred, int steps, int fixed_point_iterations) {
    MockTextEmbedder emb(MockOptions{});
    DdimEngine engine(pred, emb);
    const auto sched = NoiseSchedule::scaled_linear(steps);
    const auto z0 = wrap(random_latent(11));
    const auto cond = emb.embed("a photo of a cat");
    const auto inv = engine.invert(z0, cond, sched, {fixed_point_iterations});
    const auto back = engine.generate(inv, cond, 1.0, sched);
    return relative_error(back.data, z0.data);
}

}  // namespace

TEST_CASE("scaled_linear alpha_bar matches the float64 reference") {
    const auto ref = reference();
    const auto sched = NoiseSchedule::scaled_linear(50);
    for (const auto& [t, v] : ref.at("alpha_bar").items())
        CHECK(sched.alpha_bar(std::stoi(t)) == doctest::Approx(v.get<double>()).epsilon(1e-12));
}

TEST_CASE("trailing timestep selection") {
    const auto ref = reference();
    for (const auto& [s, v] : ref.at("trailing").items()) {
        const auto sched = NoiseSchedule::scaled_linear(std::stoi(s));
        CHECK(sched.selected_timesteps() == v.get<std::vector<int>>());
        CHECK(sched.top_timestep() == 999);
    }
    const auto sched = NoiseSchedule::scaled_linear(4);
    CHECK(sched.trajectory() == std::vector<int>{0, 249, 499, 749, 999});
}

TEST_CASE("single steps match the float64 reference") {
    const auto ref = reference();
    const auto sched = NoiseSchedule::scaled_linear(50);
    for (const auto& c : ref.at("steps")) {
        const int t = c.at("t"), tp = c.at("t_prev");
        const auto z = scalar_tensor(c.at("z").get<float>());
        const auto eps = scalar_tensor(c.at("eps").get<float>());
        CAPTURE(t);
        CAPTURE(tp);
        CHECK(ddim_step(z, eps, t, tp, sched)[0] == doctest::Approx(c.at("step").get<double>()).epsilon(1e-5));
        CHECK(ddim_invert_step(z, eps, t, tp, sched)[0] ==
              doctest::Approx(c.at("invert").get<double>()).epsilon(1e-5));
    }
}

TEST_CASE("hand-computed step on a two-point schedule") {
    // alpha_bar 1 at t=0 and 0.25 at t=1: with eps = 0 the latent scales by 2
    const auto sched = NoiseSchedule::from_alphas({1.0, 0.25}, {1});
    CHECK(ddim_step(scalar_tensor(1.0f), scalar_tensor(0.0f), 1, 0, sched)[0] == 2.0f);
    CHECK(ddim_invert_step(scalar_tensor(2.0f), scalar_tensor(0.0f), 1, 0, sched)[0] == 1.0f);
    // with z = 0, eps = 1: z_prev = 0 - sqrt(0.75)/0.5 * 1 + 0 = -sqrt(3)
    CHECK(ddim_step(scalar_tensor(0.0f), scalar_tensor(1.0f), 1, 0, sched)[0] ==
          doctest::Approx(-std::sqrt(3.0)).epsilon(1e-6));
}

TEST_CASE("invert then step is the identity for a fixed eps") {
    const auto sched = NoiseSchedule::scaled_linear(50);
    std::mt19937 rng(3);
    std::uniform_int_distribution<int> tdist(0, 999);
    for (int i = 0; i < 200; ++i) {
        int a = tdist(rng), b = tdist(rng);
        if (a == b) continue;
        const int t = std::max(a, b), tp = std::min(a, b);
        const auto z = random_latent(100 + i, {64});
        const auto eps = random_latent(900 + i, {64});
        const auto back = ddim_step(ddim_invert_step(z, eps, t, tp, sched), eps, t, tp, sched);
        CHECK(relative_error(back, z) < 1e-6);
    }
}

TEST_CASE("step contract violations") {
    const auto sched = NoiseSchedule::scaled_linear(10);
    const auto z = scalar_tensor(1.0f);
    CHECK_THROWS_AS(ddim_step(z, z, 5, 5, sched), ContractError);
    CHECK_THROWS_AS(ddim_step(z, z, 4, 5, sched), ContractError);
    CHECK_THROWS_AS(ddim_step(z, z, 1000, 5, sched), ScheduleDomainError);
    CHECK_THROWS_AS(ddim_step(z, Tensor({2}), 9, 5, sched), ContractError);
}

TEST_CASE("schedule validation") {
    CHECK_THROWS_AS(NoiseSchedule::from_alphas({1.0, 0.0}, {1}), ScheduleDomainError);
    CHECK_THROWS_AS(NoiseSchedule::from_alphas({1.0, 0.5, 0.6}, {1, 2}), ScheduleDomainError);
    CHECK_THROWS_AS(NoiseSchedule::from_alphas({1.0, 0.5, 0.4}, {2, 1}), ScheduleDomainError);
    CHECK_THROWS_AS(NoiseSchedule::from_alphas({1.0, 0.5}, {0, 1}), ScheduleDomainError);
    CHECK_THROWS_AS(NoiseSchedule::from_alphas({1.0, 0.5, 0.5}, {1, 2}), ScheduleDomainError);
    CHECK_THROWS_AS(NoiseSchedule::scaled_linear(0), ContractError);
    CHECK_NOTHROW(NoiseSchedule::from_alphas({1.0, 0.5, 0.5, 0.2}, {1, 3}));
}

TEST_CASE("50-step round trips with conditioning-independent predictors") {
    ZeroNoisePredictor zero;
    FrozenRandomNoisePredictor frozen(5);
    LinearNoisePredictor linear(0.1);
    CHECK(round_trip_error(zero, 50, 0) < 1e-6);
    CHECK(round_trip_error(frozen, 50, 0) < 1e-4);
    CHECK(round_trip_error(linear, 50, 10) < 1e-4);
    // the plain lagged estimate drifts for a latent-dependent predictor
    CHECK(round_trip_error(linear, 50, 0) > 1e-3);
}

TEST_CASE("linear predictor matches a scalar recursion") {
    // eps = g*z reduces each step to multiplication by a scalar factor
    const double g = 0.1;
    LinearNoisePredictor linear(g);
    MockTextEmbedder emb(MockOptions{});
    DdimEngine engine(linear, emb);
    const auto sched = NoiseSchedule::scaled_linear(10);
    const auto traj = sched.trajectory();
    double factor = 1.0;
    for (std::size_t i = 0; i + 1 < traj.size(); ++i) {
        const double at = sched.alpha_bar(traj[i + 1]), ap = sched.alpha_bar(traj[i]);
        const double r = std::sqrt(at / ap);
        factor *= r + g * (std::sqrt(1 - at) - r * std::sqrt(1 - ap));
    }
    const auto z0 = wrap(random_latent(1));
    const auto inv = engine.invert(z0, "a dog", sched);
    for (std::size_t i = 0; i < z0.data.size(); ++i)
        CHECK(inv.latent.data[i] == doctest::Approx(z0.data[i] * factor).epsilon(1e-5));
}

TEST_CASE("zero predictor terminal latent is sqrt(alpha_T / alpha_0) * z") {
    ZeroNoisePredictor zero;
    MockTextEmbedder emb(MockOptions{});
    DdimEngine engine(zero, emb);
    const auto sched = NoiseSchedule::scaled_linear(50);
    const auto z0 = wrap(random_latent(2));
    const auto inv = engine.invert(z0, "a red barn", sched);
    const double s = std::sqrt(sched.alpha_bar(999) / sched.alpha_bar(0));
    for (std::size_t i = 0; i < z0.data.size(); ++i)
        CHECK(inv.latent.data[i] == doctest::Approx(z0.data[i] * s).epsilon(1e-5));
    CHECK(inv.steps == 50);
    CHECK(inv.top_timestep == 999);
    CHECK(inv.conditioning_text == "a red barn");
}

TEST_CASE("guidance 1 skips the unconditional branch; other scales use it") {
    MockOptions opts;
    ConditionedNoisePredictor pred(opts, 4);
    MockTextEmbedder emb(opts);
    DdimEngine engine(pred, emb);
    const auto sched = NoiseSchedule::scaled_linear(5);
    const auto z0 = wrap(random_latent(4));
    const auto cond = emb.embed("a cat on a sofa");
    const auto inv = engine.invert(z0, cond, sched);
    const auto a = engine.generate(inv, cond, 1.0, sched);
    const auto b = engine.generate(inv, cond, 7.5, sched);
    const auto c = engine.generate(inv, cond, 7.5, sched);
    CHECK(relative_error(a.data, b.data) > 1e-3);
    CHECK(b.data == c.data);
}

TEST_CASE("classifier-free guidance formula") {
    const Tensor u({2}, std::vector<float>{1.0f, 2.0f});
    const Tensor c({2}, std::vector<float>{3.0f, 0.0f});
    const auto g = classifier_free_guidance(u, c, 2.0);
    CHECK(g[0] == 5.0f);
    CHECK(g[1] == -2.0f);
    CHECK(classifier_free_guidance(u, c, 1.0) == c);
}

TEST_CASE("progress callback and step-count mismatch") {
    ZeroNoisePredictor zero;
    MockTextEmbedder emb(MockOptions{});
    DdimEngine engine(zero, emb);
    const auto sched = NoiseSchedule::scaled_linear(7);
    int calls = 0, last = 0;
    const auto inv = engine.invert(wrap(random_latent(5)), "x y", sched, {}, [&](int s, int total) {
        ++calls;
        last = s;
        CHECK(total == 7);
    });
    CHECK(calls == 7);
    CHECK(last == 7);
    // trailing spacing means different step counts share the top timestep
    CHECK_NOTHROW(engine.generate(inv, emb.embed("x y"), 1.0, NoiseSchedule::scaled_linear(3)));
    auto shifted = inv;
    shifted.top_timestep = 500;
    CHECK_THROWS_AS(engine.generate(shifted, emb.embed("x y"), 1.0, sched), ContractError);
}

TEST_CASE("divergence is reported with the step index") {
    LinearNoisePredictor blowup(1e30);
    MockTextEmbedder emb(MockOptions{});
    DdimEngine engine(blowup, emb);
    try {
        engine.invert(wrap(random_latent(6)), "cat", NoiseSchedule::scaled_linear(10));
        FAIL("expected divergence");
    } catch (const NumericalDivergenceError& e) {
        CHECK(e.stage() == "invert");
        CHECK(e.step() >= 0);
    }
}

TEST_CASE("inverted latent save/load round trip") {
    ZeroNoisePredictor zero;
    MockTextEmbedder emb(MockOptions{});
    DdimEngine engine(zero, emb);
    const auto inv = engine.invert(wrap(random_latent(8)), "a boat", NoiseSchedule::scaled_linear(4), {2});
    const auto dir = test_paths::scratch("ddim_io");
    save_inverted_latent(dir / "inv.bin", inv);
    CHECK(std::filesystem::exists(dir / "inv.bin.json"));
    const auto back = load_inverted_latent(dir / "inv.bin");
    CHECK(back.latent.data == inv.latent.data);
    CHECK(back.conditioning_text == "a boat");
    CHECK(back.fixed_point_iterations == 2);
    CHECK(back.trajectory_checksum == inv.trajectory_checksum);
    std::ofstream(dir / "bad.bin") << "not a record";
    CHECK_THROWS_AS(load_inverted_latent(dir / "bad.bin"), InputFormatError);
}
