#include "kernels_impl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

#include "ddimedit/errors.hpp"

namespace ddimedit::kernels {

std::string_view isa_name(Isa isa) noexcept {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::neon: return "neon";
    }
    return "unknown";
}

const KernelTable& scalar_table() noexcept { return detail::kScalarTable; }

const KernelTable* avx2_table() noexcept {
#if defined(DDIMEDIT_HAVE_AVX2)
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return supported ? &detail::kAvx2Table : nullptr;
#else
    return nullptr;
#endif
}

const KernelTable* neon_table() noexcept {
#if defined(DDIMEDIT_HAVE_NEON)
    return &detail::kNeonTable;
#else
    return nullptr;
#endif
}

Isa best_available() noexcept {
    if (avx2_table()) return Isa::avx2;
    if (neon_table()) return Isa::neon;
    return Isa::scalar;
}

namespace {

const KernelTable& select() noexcept {
    const KernelTable* best = avx2_table() ? avx2_table() : neon_table();
    if (const char* env = std::getenv("DDIMEDIT_ISA")) {
        const std::string want(env);
        if (want == "scalar") return scalar_table();
        if (want == "avx2" && avx2_table()) return *avx2_table();
        if (want == "neon" && neon_table()) return *neon_table();
    }
    return best ? *best : scalar_table();
}

void check(std::size_t a, std::size_t b, const char* op) {
    if (a != b)
        throw ContractError(std::string(op) + ": length mismatch " + std::to_string(a) + " vs " +
                            std::to_string(b));
}

}  // namespace

const KernelTable& active() noexcept {
    static const KernelTable& table = select();
    return table;
}

void axpby(double a, std::span<const float> x, double b, std::span<const float> y, std::span<float> out) {
    check(x.size(), y.size(), "axpby");
    check(x.size(), out.size(), "axpby");
    active().axpby(a, x.data(), b, y.data(), out.data(), x.size());
}

void sub(std::span<const float> x, std::span<const float> y, std::span<float> out) {
    check(x.size(), y.size(), "sub");
    check(x.size(), out.size(), "sub");
    active().sub(x.data(), y.data(), out.data(), x.size());
}

void accumulate(float s, std::span<const float> x, std::span<float> acc) {
    check(x.size(), acc.size(), "accumulate");
    active().accumulate(s, x.data(), acc.data(), x.size());
}

void scale(float s, std::span<const float> x, std::span<float> out) {
    check(x.size(), out.size(), "scale");
    active().scale(s, x.data(), out.data(), x.size());
}

double dot(std::span<const float> x, std::span<const float> y) {
    check(x.size(), y.size(), "dot");
    return active().dot(x.data(), y.data(), x.size());
}

double norm(std::span<const float> x) { return std::sqrt(dot(x, x)); }

double cosine(std::span<const float> x, std::span<const float> y) {
    const double nx = norm(x);
    const double ny = norm(y);
    if (nx == 0.0 || ny == 0.0) return 0.0;
    return std::clamp(dot(x, y) / (nx * ny), -1.0, 1.0);
}

bool all_finite(std::span<const float> x) { return active().all_finite(x.data(), x.size()); }

}  // namespace ddimedit::kernels
