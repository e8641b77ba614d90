// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include "kernels_impl.hpp"

#include <immintrin.h>

#include <cmath>

namespace ddimedit::kernels::detail {

namespace {

void axpby_avx2(double a, const float* x, double b, const float* y, float* out, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    const __m256d vb = _mm256_set1_pd(b);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vx = _mm256_cvtps_pd(_mm_loadu_ps(x + i));
        const __m256d vy = _mm256_cvtps_pd(_mm_loadu_ps(y + i));
        _mm_storeu_ps(out + i, _mm256_cvtpd_ps(_mm256_fmadd_pd(va, vx, _mm256_mul_pd(vb, vy))));
    }
    for (; i < n; ++i)
        out[i] = static_cast<float>(std::fma(a, static_cast<double>(x[i]), b * static_cast<double>(y[i])));
}

void sub_avx2(const float* x, const float* y, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) out[i] = x[i] - y[i];
}

void accumulate_avx2(float s, const float* x, float* acc, std::size_t n) {
    const __m256 vs = _mm256_set1_ps(s);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(acc + i, _mm256_fmadd_ps(vs, _mm256_loadu_ps(x + i), _mm256_loadu_ps(acc + i)));
    for (; i < n; ++i) acc[i] = std::fma(s, x[i], acc[i]);
}

void scale_avx2(float s, const float* x, float* out, std::size_t n) {
    const __m256 vs = _mm256_set1_ps(s);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(vs, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) out[i] = s * x[i];
}

double dot_avx2(const float* x, const float* y, std::size_t n) {
    __m256d lo = _mm256_setzero_pd();
    __m256d hi = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 vx = _mm256_loadu_ps(x + i);
        const __m256 vy = _mm256_loadu_ps(y + i);
        lo = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm256_castps256_ps128(vx)),
                             _mm256_cvtps_pd(_mm256_castps256_ps128(vy)), lo);
        hi = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm256_extractf128_ps(vx, 1)),
                             _mm256_cvtps_pd(_mm256_extractf128_ps(vy, 1)), hi);
    }
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, _mm256_add_pd(lo, hi));
    double acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (; i < n; ++i) acc += static_cast<double>(x[i]) * static_cast<double>(y[i]);
    return acc;
}

bool all_finite_avx2(const float* x, std::size_t n) {
    const __m256i exp_mask = _mm256_set1_epi32(0x7f800000);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256i bits = _mm256_castps_si256(_mm256_loadu_ps(x + i));
        const __m256i hit = _mm256_cmpeq_epi32(_mm256_and_si256(bits, exp_mask), exp_mask);
        if (!_mm256_testz_si256(hit, hit)) return false;
    }
    for (; i < n; ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

}  // namespace

const KernelTable kAvx2Table{Isa::avx2,  axpby_avx2, sub_avx2,       accumulate_avx2,
                             scale_avx2, dot_avx2,   all_finite_avx2};

}  // namespace ddimedit::kernels::detail
