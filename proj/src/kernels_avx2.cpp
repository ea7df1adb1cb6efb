#include "nplab/kernels.hpp"

// AVX2 kernels (4 f64 lanes).  Elementwise ops replicate the scalar results
// bit-for-bit on finite inputs: no FMA (mul then add, matching the scalar
// code built with -ffp-contract=off) and mask/blend logic that mirrors the
// scalar branch conditions.  Reductions use one vector accumulator and a
// final horizontal fold, so their rounding differs from the scalar order.

#if defined(__x86_64__) && defined(__AVX2__)

#include <immintrin.h>

namespace nplab::kernels {
namespace {

void k_add(const double* a, const double* b, double* out, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void k_sub(const double* a, const double* b, double* out, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void k_mul(const double* a, const double* b, double* out, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void k_scale(const double* x, double c, double* out, int64_t n) {
  const __m256d vc = _mm256_set1_pd(c);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(vc, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = c * x[i];
}

void k_axpy(double a, const double* x, double* y, int64_t n) {
  const __m256d va = _mm256_set1_pd(a);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));  // no FMA on purpose
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

void k_relu(const double* x, double* out, int64_t n) {
  const __m256d zero = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x + i);
    // x > 0 ? x : 0, same branch as scalar (also maps -0.0 to +0.0).
    __m256d mask = _mm256_cmp_pd(v, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(mask, v));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void k_relu_grad(const double* x, const double* g, double* out, int64_t n) {
  const __m256d zero = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(mask, _mm256_loadu_pd(g + i)));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : 0.0;
}

void k_leaky_relu(const double* x, double slope, double* out, int64_t n) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d vs = _mm256_set1_pd(slope);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x + i);
    __m256d mask = _mm256_cmp_pd(v, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_blendv_pd(_mm256_mul_pd(vs, v), v, mask));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void k_leaky_relu_grad(const double* x, const double* g, double slope, double* out, int64_t n) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d vs = _mm256_set1_pd(slope);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vg = _mm256_loadu_pd(g + i);
    __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_blendv_pd(_mm256_mul_pd(vs, vg), vg, mask));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : slope * g[i];
}

void k_clamp(const double* x, double lo, double hi, double* out, int64_t n) {
  const __m256d vlo = _mm256_set1_pd(lo);
  const __m256d vhi = _mm256_set1_pd(hi);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x + i);
    // Blend on explicit compares so the result matches the scalar branches.
    v = _mm256_blendv_pd(v, vlo, _mm256_cmp_pd(v, vlo, _CMP_LT_OQ));
    v = _mm256_blendv_pd(v, vhi, _mm256_cmp_pd(v, vhi, _CMP_GT_OQ));
    _mm256_storeu_pd(out + i, v);
  }
  for (; i < n; ++i) {
    double v = x[i];
    out[i] = v < lo ? lo : (v > hi ? hi : v);
  }
}

void k_sign(const double* x, double* out, int64_t n) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d neg_one = _mm256_set1_pd(-1.0);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x + i);
    __m256d pos = _mm256_and_pd(_mm256_cmp_pd(v, zero, _CMP_GT_OQ), one);
    __m256d neg = _mm256_and_pd(_mm256_cmp_pd(v, zero, _CMP_LT_OQ), neg_one);
    _mm256_storeu_pd(out + i, _mm256_or_pd(pos, neg));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
}

double horizontal_sum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double k_sum(const double* x, int64_t n) {
  __m256d acc = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = horizontal_sum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

double k_dot(const double* a, const double* b, int64_t n) {
  __m256d acc = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  double s = horizontal_sum(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable t = {k_add,        k_sub,
                                k_mul,        k_scale,
                                k_axpy,       k_relu,
                                k_relu_grad,  k_leaky_relu,
                                k_leaky_relu_grad, k_clamp,
                                k_sign,       k_sum,
                                k_dot};
  return &t;
}

}  // namespace nplab::kernels

#else

namespace nplab::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace nplab::kernels

#endif
