#include "nplab/kernels.hpp"

// Reference kernels.  Every other backend is tested against these, so keep
// the bodies free of anything the optimizer could re-associate (plain loops,
// one accumulator for reductions).

namespace nplab::kernels {
namespace {

void k_add(const double* a, const double* b, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void k_sub(const double* a, const double* b, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void k_mul(const double* a, const double* b, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void k_scale(const double* x, double c, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = c * x[i];
}

void k_axpy(double a, const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = y[i] + a * x[i];
}

void k_relu(const double* x, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void k_relu_grad(const double* x, const double* g, double* out, int64_t n) {
  // Subgradient convention: relu'(0) = 0.
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : 0.0;
}

void k_leaky_relu(const double* x, double slope, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void k_leaky_relu_grad(const double* x, const double* g, double slope, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : slope * g[i];
}

void k_clamp(const double* x, double lo, double hi, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    double v = x[i];
    out[i] = v < lo ? lo : (v > hi ? hi : v);
  }
}

void k_sign(const double* x, double* out, int64_t n) {
  // sign(0) = 0 by convention.
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
}

double k_sum(const double* x, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += x[i];
  return s;
}

double k_dot(const double* a, const double* b, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t = {k_add,        k_sub,
                                k_mul,        k_scale,
                                k_axpy,       k_relu,
                                k_relu_grad,  k_leaky_relu,
                                k_leaky_relu_grad, k_clamp,
                                k_sign,       k_sum,
                                k_dot};
  return t;
}

}  // namespace nplab::kernels
