#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "ddimedit/errors.hpp"
#include "ddimedit/kernels.hpp"

using namespace ddimedit;
namespace k = ddimedit::kernels;

namespace {

std::vector<const k::KernelTable*> simd_tables() {
    std::vector<const k::KernelTable*> out;
    if (auto* t = k::avx2_table()) out.push_back(t);
    if (auto* t = k::neon_table()) out.push_back(t);
    return out;
}

std::vector<float> random_vec(std::size_t n, std::mt19937& rng) {
    std::normal_distribution<float> d(0.0f, 1.0f);
    std::vector<float> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

}  // namespace

TEST_CASE("scalar kernels on hand-checked values") {
    const auto& s = k::scalar_table();
    const float x[3] = {1.0f, -2.0f, 0.5f};
    const float y[3] = {4.0f, 1.0f, -1.0f};
    float out[3];
    s.axpby(2.0f, x, -1.0f, y, out, 3);
    CHECK(out[0] == -2.0f);
    CHECK(out[1] == -5.0f);
    CHECK(out[2] == 2.0f);
    s.sub(x, y, out, 3);
    CHECK(out[0] == -3.0f);
    CHECK(s.dot(x, y, 3) == doctest::Approx(1.5));
    float acc[3] = {1.0f, 1.0f, 1.0f};
    s.accumulate(0.5f, x, acc, 3);
    CHECK(acc[1] == 0.0f);
    CHECK(s.all_finite(x, 3));
}

TEST_CASE("SIMD kernels match the scalar reference") {
    const auto tables = simd_tables();
    if (tables.empty()) {
        MESSAGE("no SIMD variant on this CPU; only scalar tested");
        return;
    }
    std::mt19937 rng(7);
    const auto& ref = k::scalar_table();
    for (const auto* simd : tables) {
        CAPTURE(k::isa_name(simd->isa));
        // lengths around the vector width exercise the tails
        for (std::size_t n : {0u, 1u, 3u, 7u, 8u, 9u, 15u, 16u, 17u, 31u, 64u, 100u, 1027u}) {
            CAPTURE(n);
            const auto x = random_vec(n, rng);
            const auto y = random_vec(n, rng);
            std::vector<float> a(n), b(n);

            // same double-precision operation sequence on both paths
            ref.axpby(0.75, x.data(), -1.5, y.data(), a.data(), n);
            simd->axpby(0.75, x.data(), -1.5, y.data(), b.data(), n);
            CHECK(a == b);

            ref.sub(x.data(), y.data(), a.data(), n);
            simd->sub(x.data(), y.data(), b.data(), n);
            CHECK(a == b);

            ref.scale(3.0f, x.data(), a.data(), n);
            simd->scale(3.0f, x.data(), b.data(), n);
            CHECK(a == b);

            a = y;
            b = y;
            ref.accumulate(-0.25f, x.data(), a.data(), n);
            simd->accumulate(-0.25f, x.data(), b.data(), n);
            for (std::size_t i = 0; i < n; ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-6));

            const double dr = ref.dot(x.data(), y.data(), n);
            const double ds = simd->dot(x.data(), y.data(), n);
            CHECK(ds == doctest::Approx(dr).epsilon(1e-9).scale(std::sqrt(static_cast<double>(n) + 1.0)));

            CHECK(simd->all_finite(x.data(), n));
        }
    }
}

TEST_CASE("all_finite catches NaN and Inf in every lane position") {
    std::vector<const k::KernelTable*> tables = simd_tables();
    tables.push_back(&k::scalar_table());
    for (const auto* t : tables) {
        for (std::size_t pos = 0; pos < 19; ++pos) {
            std::vector<float> v(19, 1.0f);
            v[pos] = std::numeric_limits<float>::quiet_NaN();
            CHECK_FALSE(t->all_finite(v.data(), v.size()));
            v[pos] = -std::numeric_limits<float>::infinity();
            CHECK_FALSE(t->all_finite(v.data(), v.size()));
            v[pos] = std::numeric_limits<float>::max();
            CHECK(t->all_finite(v.data(), v.size()));
        }
    }
}

TEST_CASE("kernels allow out to alias an input") {
    std::vector<float> x{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const std::vector<float> y(10, 1.0f);
    k::axpby(2.0f, x, 1.0f, y, x);
    CHECK(x[0] == 3.0f);
    CHECK(x[9] == 21.0f);
}

TEST_CASE("span wrappers check lengths and clamp cosine") {
    std::vector<float> a(4, 1.0f), b(5, 1.0f);
    CHECK_THROWS_AS(k::sub(a, b, a), ContractError);
    CHECK_THROWS_AS(k::dot(a, b), ContractError);
    CHECK(k::cosine(a, a) == 1.0);
    std::vector<float> neg(4, -2.0f);
    CHECK(k::cosine(a, neg) == -1.0);
    CHECK(k::norm(a) == doctest::Approx(2.0));
}
