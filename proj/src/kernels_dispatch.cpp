// SPDX-License-Identifier: Apache-2.0
#include "pmix/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <string>

#include "kernels_internal.hpp"
#include "pmix/parallel.hpp"

namespace pmix::kernels {
namespace {

Backend detect_backend() {
    const char* env = std::getenv("PMIX_KERNELS");
    if (env != nullptr) {
        if (std::strcmp(env, "scalar") == 0) return Backend::kScalar;
        if (std::strcmp(env, "avx2") == 0 && avx2_supported()) return Backend::kAvx2;
    }
    return avx2_supported() ? Backend::kAvx2 : Backend::kScalar;
}

Backend& backend_state() {
    static Backend b = detect_backend();
    return b;
}

// Below this many multiply-adds a gemm runs on the calling thread; above,
// it splits into parts of at least kPartFlops.
constexpr std::size_t kSerialFlops = std::size_t(1) << 21;
constexpr std::size_t kPartFlops = std::size_t(1) << 20;

std::size_t row_grain(std::size_t m, std::size_t n, std::size_t k) {
    std::size_t total = m * n * k;
    if (total < kSerialFlops) return m;  // single part
    std::size_t grain = kPartFlops / (n * k + 1);
    if (grain < 4) grain = 4;
    if (grain > m) grain = m;
    return grain;
}

}  // namespace

bool avx2_supported() {
#if PMIX_HAVE_AVX2_BACKEND
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend active_backend() { return backend_state(); }

void set_backend(Backend b) {
    if (b == Backend::kAvx2 && !avx2_supported()) b = Backend::kScalar;
    backend_state() = b;
}

const char* backend_name() {
    return backend_state() == Backend::kAvx2 ? "avx2" : "scalar";
}

void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
             std::size_t k, bool accumulate) {
    Backend be = backend_state();
    auto slice = [&](std::size_t i0, std::size_t i1) {
#if PMIX_HAVE_AVX2_BACKEND
        if (be == Backend::kAvx2) {
            avx2::gemm_nn(a + i0 * k, b, c + i0 * n, i1 - i0, n, k, accumulate);
            return;
        }
#endif
        scalar::gemm_nn(a + i0 * k, b, c + i0 * n, i1 - i0, n, k, accumulate);
    };
    parallel_for(m, row_grain(m, n, k), slice);
}

void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
             std::size_t k, bool accumulate) {
    Backend be = backend_state();
    auto slice = [&](std::size_t i0, std::size_t i1) {
#if PMIX_HAVE_AVX2_BACKEND
        if (be == Backend::kAvx2) {
            avx2::gemm_nt(a + i0 * k, b, c + i0 * n, i1 - i0, n, k, accumulate);
            return;
        }
#endif
        scalar::gemm_nt(a + i0 * k, b, c + i0 * n, i1 - i0, n, k, accumulate);
    };
    parallel_for(m, row_grain(m, n, k), slice);
}

void gemm_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
             std::size_t k, bool accumulate) {
    Backend be = backend_state();
    auto slice = [&](std::size_t i0, std::size_t i1) {
#if PMIX_HAVE_AVX2_BACKEND
        if (be == Backend::kAvx2) {
            avx2::gemm_tn(a + i0, b, c + i0 * n, i1 - i0, n, k, m, accumulate);
            return;
        }
#endif
        scalar::gemm_tn(a + i0, b, c + i0 * n, i1 - i0, n, k, m, accumulate);
    };
    parallel_for(m, row_grain(m, n, k), slice);
}

void gelu_forward(const float* x, float* y, std::size_t n) {
#if PMIX_HAVE_AVX2_BACKEND
    if (backend_state() == Backend::kAvx2) {
        avx2::gelu_forward(x, y, n);
        return;
    }
#endif
    gelu_forward_generic(x, y, n);
}

void gelu_backward(const float* x, const float* dy, float* dx, std::size_t n) {
#if PMIX_HAVE_AVX2_BACKEND
    if (backend_state() == Backend::kAvx2) {
        avx2::gelu_backward(x, dy, dx, n);
        return;
    }
#endif
    gelu_backward_generic(x, dy, dx, n);
}

void softmax_row(float* row, std::size_t n) {
#if PMIX_HAVE_AVX2_BACKEND
    if (backend_state() == Backend::kAvx2) {
        avx2::softmax_row(row, n);
        return;
    }
#endif
    softmax_row_generic(row, n);
}

float lse_row(const float* row, std::size_t n) {
#if PMIX_HAVE_AVX2_BACKEND
    if (backend_state() == Backend::kAvx2) return avx2::lse_row(row, n);
#endif
    return lse_row_generic(row, n);
}

void softmax_backward_row(const float* p, const float* dp, float* ds, std::size_t n) {
#if PMIX_HAVE_AVX2_BACKEND
    if (backend_state() == Backend::kAvx2) {
        avx2::softmax_backward_row(p, dp, ds, n);
        return;
    }
#endif
    softmax_backward_row_generic(p, dp, ds, n);
}

void adamw_update(float* p, const float* g, float* m, float* v, std::size_t n, float lr,
                  float beta1, float beta2, float eps, float wd, float inv_bc1,
                  float inv_bc2, float gscale) {
#if PMIX_HAVE_AVX2_BACKEND
    if (backend_state() == Backend::kAvx2) {
        avx2::adamw_update(p, g, m, v, n, lr, beta1, beta2, eps, wd, inv_bc1, inv_bc2, gscale);
        return;
    }
#endif
    adamw_update_generic(p, g, m, v, n, lr, beta1, beta2, eps, wd, inv_bc1, inv_bc2, gscale);
}

double sumsq_f64(const float* x, std::size_t n) {
#if PMIX_HAVE_AVX2_BACKEND
    if (backend_state() == Backend::kAvx2) return avx2::sumsq_f64(x, n);
#endif
    return sumsq_f64_generic(x, n);
}

}  // namespace pmix::kernels
