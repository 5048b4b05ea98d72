// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

// Backend slice entry points. Row slicing for nn/nt passes advanced a/c
// pointers; tn is sliced over output rows (= columns of a), so it takes the
// original column stride lda and a column-offset pointer.

namespace pmix::kernels::scalar {
void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
             std::size_t k, bool accumulate);
void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
             std::size_t k, bool accumulate);
void gemm_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
             std::size_t k, std::size_t lda, bool accumulate);
}  // namespace pmix::kernels::scalar

#if defined(__x86_64__) || defined(_M_X64)
#define PMIX_HAVE_AVX2_BACKEND 1
namespace pmix::kernels::avx2 {
void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
             std::size_t k, bool accumulate);
void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
             std::size_t k, bool accumulate);
void gemm_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
             std::size_t k, std::size_t lda, bool accumulate);
void gelu_forward(const float* x, float* y, std::size_t n);
void gelu_backward(const float* x, const float* dy, float* dx, std::size_t n);
void softmax_row(float* row, std::size_t n);
float lse_row(const float* row, std::size_t n);
void softmax_backward_row(const float* p, const float* dp, float* ds, std::size_t n);
void adamw_update(float* p, const float* g, float* m, float* v, std::size_t n, float lr,
                  float beta1, float beta2, float eps, float wd, float inv_bc1,
                  float inv_bc2, float gscale);
double sumsq_f64(const float* x, std::size_t n);
}  // namespace pmix::kernels::avx2
#else
#define PMIX_HAVE_AVX2_BACKEND 0
#endif
