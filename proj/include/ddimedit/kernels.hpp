#pragma once

// Elementwise float32 kernels behind the DDIM updates, the edit-direction
// arithmetic and the similarity metrics. Each kernel has a scalar reference
// implementation plus SIMD variants; the active table is chosen once at
// startup from CPU features (override with DDIMEDIT_ISA=scalar|avx2|neon).
//
// All kernels accept `out` aliasing any input. Reductions accumulate in
// double precision on every path.

#include <cstddef>
#include <span>
#include <string_view>

namespace ddimedit::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa) noexcept;

struct KernelTable {
    Isa isa;
    // out = a*x + b*y, evaluated in double and rounded once
    void (*axpby)(double a, const float* x, double b, const float* y, float* out, std::size_t n);
    // out = x - y
    void (*sub)(const float* x, const float* y, float* out, std::size_t n);
    // acc += s*x
    void (*accumulate)(float s, const float* x, float* acc, std::size_t n);
    // out = s*x
    void (*scale)(float s, const float* x, float* out, std::size_t n);
    double (*dot)(const float* x, const float* y, std::size_t n);
    // true when every element is finite
    bool (*all_finite)(const float* x, std::size_t n);
};

const KernelTable& scalar_table() noexcept;
// nullptr when the variant was not compiled in or the CPU lacks the feature.
const KernelTable* avx2_table() noexcept;
const KernelTable* neon_table() noexcept;

// Table selected at first use. Stable for the process lifetime.
const KernelTable& active() noexcept;
Isa best_available() noexcept;

// Span conveniences over the active table. Sizes must match; checked.
void axpby(double a, std::span<const float> x, double b, std::span<const float> y, std::span<float> out);
void sub(std::span<const float> x, std::span<const float> y, std::span<float> out);
void accumulate(float s, std::span<const float> x, std::span<float> acc);
void scale(float s, std::span<const float> x, std::span<float> out);
double dot(std::span<const float> x, std::span<const float> y);
double norm(std::span<const float> x);
// Clamped to [-1, 1]; 0 when either vector is all zeros.
double cosine(std::span<const float> x, std::span<const float> y);
bool all_finite(std::span<const float> x);

}  // namespace ddimedit::kernels
