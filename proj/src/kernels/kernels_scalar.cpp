#include "kernels_impl.hpp"

#include <cmath>

namespace ddimedit::kernels::detail {

namespace {

void axpby_scalar(double a, const float* x, double b, const float* y, float* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = static_cast<float>(std::fma(a, static_cast<double>(x[i]), b * static_cast<double>(y[i])));
}

void sub_scalar(const float* x, const float* y, float* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
}

void accumulate_scalar(float s, const float* x, float* acc, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) acc[i] += s * x[i];
}

void scale_scalar(float s, const float* x, float* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = s * x[i];
}

double dot_scalar(const float* x, const float* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(x[i]) * static_cast<double>(y[i]);
    return acc;
}

bool all_finite_scalar(const float* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

}  // namespace

const KernelTable kScalarTable{Isa::scalar,      axpby_scalar, sub_scalar,       accumulate_scalar,
                               scale_scalar,     dot_scalar,   all_finite_scalar};

}  // namespace ddimedit::kernels::detail
