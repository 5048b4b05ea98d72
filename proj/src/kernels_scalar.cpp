// SPDX-License-Identifier: Apache-2.0
#include "kernels_internal.hpp"

#include "pmix/kernels.hpp"

namespace pmix::kernels::scalar {

void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
             std::size_t k, bool accumulate) {
    gemm_nn_generic(a, b, c, m, n, k, accumulate);
}

void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
             std::size_t k, bool accumulate) {
    gemm_nt_generic(a, b, c, m, n, k, accumulate);
}

void gemm_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
             std::size_t k, std::size_t lda, bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0f;
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
        const float* arow = a + kk * lda;
        const float* brow = b + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
            float av = arow[i];
            float* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace pmix::kernels::scalar
