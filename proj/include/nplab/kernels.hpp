#pragma once

#include <cstdint>

namespace nplab::kernels {

// Dense inner loops come in one reference flavor (scalar) plus optional SIMD
// flavors picked at runtime.  All kernels operate on contiguous f64 buffers.
//
// Contract: for finite inputs, elementwise kernels (everything returning void)
// are bit-identical across backends; reductions (sum, dot) may differ in
// summation order and are only guaranteed equal up to rounding.
enum class Backend { scalar, avx2, neon };

struct KernelTable {
  void (*add)(const double* a, const double* b, double* out, int64_t n);
  void (*sub)(const double* a, const double* b, double* out, int64_t n);
  void (*mul)(const double* a, const double* b, double* out, int64_t n);
  void (*scale)(const double* x, double c, double* out, int64_t n);
  void (*axpy)(double a, const double* x, double* y, int64_t n);  // y += a*x
  void (*relu)(const double* x, double* out, int64_t n);
  void (*relu_grad)(const double* x, const double* g, double* out, int64_t n);
  void (*leaky_relu)(const double* x, double slope, double* out, int64_t n);
  void (*leaky_relu_grad)(const double* x, const double* g, double slope, double* out, int64_t n);
  void (*clamp)(const double* x, double lo, double hi, double* out, int64_t n);
  void (*sign)(const double* x, double* out, int64_t n);
  double (*sum)(const double* x, int64_t n);
  double (*dot)(const double* a, const double* b, int64_t n);
};

const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in
const KernelTable* neon_table();  // nullptr when not compiled in

bool backend_available(Backend b);
Backend active_backend();
// Overrides the dispatch decision (tests use this to compare backends).
// Throws nplab::ConfigError if the backend is unavailable on this machine.
void force_backend(Backend b);
const char* backend_name(Backend b);

// Table of the active backend.
const KernelTable& table();

}  // namespace nplab::kernels
