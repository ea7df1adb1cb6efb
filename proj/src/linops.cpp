#include "nplab/linops.hpp"

#include <cstring>

#include "nplab/common.hpp"
#include "nplab/kernels.hpp"

namespace nplab::linops {

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  const auto& t = kernels::table();
  std::memset(c, 0, static_cast<size_t>(m * n) * sizeof(double));
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (int64_t l = 0; l < k; ++l) t.axpy(ai[l], b + l * n, ci, n);
  }
}

void matmul_transb(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  const auto& t = kernels::table();
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) ci[j] = t.dot(ai, b + j * k, k);
  }
}

void matmul_transa(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  const auto& t = kernels::table();
  std::memset(c, 0, static_cast<size_t>(m * n) * sizeof(double));
  for (int64_t l = 0; l < k; ++l) {
    const double* al = a + l * m;
    const double* bl = b + l * n;
    for (int64_t i = 0; i < m; ++i) t.axpy(al[i], bl, c + i * n, n);
  }
}

int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  int64_t span = in + 2 * pad - k;
  check(span >= 0, "convolution kernel ", k, " larger than padded input ", in + 2 * pad);
  return span / stride + 1;
}

void im2col(const double* img, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t ho, int64_t wo, double* cols) {
  int64_t l = ho * wo;
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* plane = img + ch * h * w;
    for (int64_t ky = 0; ky < kh; ++ky) {
      for (int64_t kx = 0; kx < kw; ++kx) {
        double* row = cols + ((ch * kh + ky) * kw + kx) * l;
        for (int64_t oy = 0; oy < ho; ++oy) {
          int64_t iy = oy * stride - pad + ky;
          double* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::memset(dst, 0, static_cast<size_t>(wo) * sizeof(double));
            continue;
          }
          const double* src = plane + iy * w;
          for (int64_t ox = 0; ox < wo; ++ox) {
            int64_t ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t ho, int64_t wo, double* img) {
  int64_t l = ho * wo;
  for (int64_t ch = 0; ch < c; ++ch) {
    double* plane = img + ch * h * w;
    for (int64_t ky = 0; ky < kh; ++ky) {
      for (int64_t kx = 0; kx < kw; ++kx) {
        const double* row = cols + ((ch * kh + ky) * kw + kx) * l;
        for (int64_t oy = 0; oy < ho; ++oy) {
          int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const double* src = row + oy * wo;
          double* dst = plane + iy * w;
          for (int64_t ox = 0; ox < wo; ++ox) {
            int64_t ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace nplab::linops
