#include "nplab/kernels.hpp"

// NEON kernels (2 f64 lanes), mirroring the AVX2 file.  Same contract:
// elementwise ops are bit-identical to scalar on finite inputs, reductions
// fold a vector accumulator and carry their own rounding order.

#if defined(__aarch64__)

#include <arm_neon.h>

namespace nplab::kernels {
namespace {

void k_add(const double* a, const double* b, double* out, int64_t n) {
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void k_sub(const double* a, const double* b, double* out, int64_t n) {
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void k_mul(const double* a, const double* b, double* out, int64_t n) {
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void k_scale(const double* x, double c, double* out, int64_t n) {
  const float64x2_t vc = vdupq_n_f64(c);
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vc, vld1q_f64(x + i)));
  for (; i < n; ++i) out[i] = c * x[i];
}

void k_axpy(double a, const double* x, double* y, int64_t n) {
  const float64x2_t va = vdupq_n_f64(a);
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t prod = vmulq_f64(va, vld1q_f64(x + i));  // no FMA on purpose
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), prod));
  }
  for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

void k_relu(const double* x, double* out, int64_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t v = vld1q_f64(x + i);
    uint64x2_t mask = vcgtq_f64(v, zero);
    vst1q_f64(out + i, vreinterpretq_f64_u64(vandq_u64(mask, vreinterpretq_u64_f64(v))));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void k_relu_grad(const double* x, const double* g, double* out, int64_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) {
    uint64x2_t mask = vcgtq_f64(vld1q_f64(x + i), zero);
    vst1q_f64(out + i, vreinterpretq_f64_u64(vandq_u64(mask, vreinterpretq_u64_f64(vld1q_f64(g + i)))));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : 0.0;
}

void k_leaky_relu(const double* x, double slope, double* out, int64_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  const float64x2_t vs = vdupq_n_f64(slope);
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t v = vld1q_f64(x + i);
    uint64x2_t mask = vcgtq_f64(v, zero);
    vst1q_f64(out + i, vbslq_f64(mask, v, vmulq_f64(vs, v)));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void k_leaky_relu_grad(const double* x, const double* g, double slope, double* out, int64_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  const float64x2_t vs = vdupq_n_f64(slope);
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t vg = vld1q_f64(g + i);
    uint64x2_t mask = vcgtq_f64(vld1q_f64(x + i), zero);
    vst1q_f64(out + i, vbslq_f64(mask, vg, vmulq_f64(vs, vg)));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : slope * g[i];
}

void k_clamp(const double* x, double lo, double hi, double* out, int64_t n) {
  const float64x2_t vlo = vdupq_n_f64(lo);
  const float64x2_t vhi = vdupq_n_f64(hi);
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t v = vld1q_f64(x + i);
    v = vbslq_f64(vcltq_f64(v, vlo), vlo, v);
    v = vbslq_f64(vcgtq_f64(v, vhi), vhi, v);
    vst1q_f64(out + i, v);
  }
  for (; i < n; ++i) {
    double v = x[i];
    out[i] = v < lo ? lo : (v > hi ? hi : v);
  }
}

void k_sign(const double* x, double* out, int64_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  const float64x2_t one = vdupq_n_f64(1.0);
  const float64x2_t neg_one = vdupq_n_f64(-1.0);
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t v = vld1q_f64(x + i);
    uint64x2_t pos = vandq_u64(vcgtq_f64(v, zero), vreinterpretq_u64_f64(one));
    uint64x2_t neg = vandq_u64(vcltq_f64(v, zero), vreinterpretq_u64_f64(neg_one));
    vst1q_f64(out + i, vreinterpretq_f64_u64(vorrq_u64(pos, neg)));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
}

double k_sum(const double* x, int64_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(x + i));
  double s = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
  for (; i < n; ++i) s += x[i];
  return s;
}

double k_dot(const double* a, const double* b, int64_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  int64_t i = 0;
  for (; i + 2 <= n; i += 2)
    acc = vaddq_f64(acc, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  double s = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

const KernelTable* neon_table() {
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
const KernelTable* neon_table() { return nullptr; }
}  // namespace nplab::kernels

#endif
