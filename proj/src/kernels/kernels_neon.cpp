#include "kernels_impl.hpp"

#include <arm_neon.h>

#include <cmath>

namespace ddimedit::kernels::detail {

namespace {

void axpby_neon(double a, const float* x, double b, const float* y, float* out, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(a);
    const float64x2_t vb = vdupq_n_f64(b);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const float32x4_t vx = vld1q_f32(x + i);
        const float32x4_t vy = vld1q_f32(y + i);
        const float64x2_t lo = vfmaq_f64(vmulq_f64(vb, vcvt_f64_f32(vget_low_f32(vy))), va, vcvt_f64_f32(vget_low_f32(vx)));
        const float64x2_t hi = vfmaq_f64(vmulq_f64(vb, vcvt_high_f64_f32(vy)), va, vcvt_high_f64_f32(vx));
        vst1q_f32(out + i, vcvt_high_f32_f64(vcvt_f32_f64(lo), hi));
    }
    for (; i < n; ++i)
        out[i] = static_cast<float>(std::fma(a, static_cast<double>(x[i]), b * static_cast<double>(y[i])));
}

void sub_neon(const float* x, const float* y, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vsubq_f32(vld1q_f32(x + i), vld1q_f32(y + i)));
    for (; i < n; ++i) out[i] = x[i] - y[i];
}

void accumulate_neon(float s, const float* x, float* acc, std::size_t n) {
    const float32x4_t vs = vdupq_n_f32(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(acc + i, vfmaq_f32(vld1q_f32(acc + i), vs, vld1q_f32(x + i)));
    for (; i < n; ++i) acc[i] = std::fma(s, x[i], acc[i]);
}

void scale_neon(float s, const float* x, float* out, std::size_t n) {
    const float32x4_t vs = vdupq_n_f32(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vmulq_f32(vs, vld1q_f32(x + i)));
    for (; i < n; ++i) out[i] = s * x[i];
}

double dot_neon(const float* x, const float* y, std::size_t n) {
    float64x2_t lo = vdupq_n_f64(0.0);
    float64x2_t hi = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const float32x4_t vx = vld1q_f32(x + i);
        const float32x4_t vy = vld1q_f32(y + i);
        lo = vfmaq_f64(lo, vcvt_f64_f32(vget_low_f32(vx)), vcvt_f64_f32(vget_low_f32(vy)));
        hi = vfmaq_f64(hi, vcvt_high_f64_f32(vx), vcvt_high_f64_f32(vy));
    }
    double acc = vaddvq_f64(vaddq_f64(lo, hi));
    for (; i < n; ++i) acc += static_cast<double>(x[i]) * static_cast<double>(y[i]);
    return acc;
}

bool all_finite_neon(const float* x, std::size_t n) {
    const uint32x4_t exp_mask = vdupq_n_u32(0x7f800000u);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const uint32x4_t bits = vreinterpretq_u32_f32(vld1q_f32(x + i));
        if (vmaxvq_u32(vceqq_u32(vandq_u32(bits, exp_mask), exp_mask)) != 0) return false;
    }
    for (; i < n; ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

}  // namespace

const KernelTable kNeonTable{Isa::neon,  axpby_neon, sub_neon,       accumulate_neon,
                             scale_neon, dot_neon,   all_finite_neon};

}  // namespace ddimedit::kernels::detail
