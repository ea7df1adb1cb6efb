#pragma once

#include <cstdint>

namespace nplab::linops {

// Dense matrix products over contiguous row-major buffers, built on the
// kernel table's axpy/dot so SIMD dispatch applies.  The accumulation order
// over k is fixed (outer loop), so results are bit-stable across backends.

// C(m,n) = A(m,k) * B(k,n)
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);

// C(m,n) = A(m,k) * B(n,k)^T
void matmul_transb(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);

// C(m,n) = A(k,m)^T * B(k,n)
void matmul_transa(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);

// Convolution lowering for one image.  Columns live in a (C*KH*KW, HO*WO)
// matrix; row (c*KH+kh)*KW+kw holds image plane c shifted by (kh, kw).
// Output spatial position (ho, wo) reads input (ho*stride - pad + kh, ...).
void im2col(const double* img, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t ho, int64_t wo, double* cols);

// Adjoint of im2col: scatter-add columns back into an image (zeroed first by
// the caller).  Used for conv backward-input and transposed-conv forward.
void col2im(const double* cols, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t ho, int64_t wo, double* img);

// Output spatial size of a strided convolution along one axis.
int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad);

}  // namespace nplab::linops
