// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>

// Arithmetic inner loops for the LM core. Float entry points dispatch at
// runtime between the scalar reference implementation and the AVX2/FMA
// variant (PMIX_KERNELS=scalar|avx2 overrides autodetection). The generic
// templates below are the scalar reference; they also serve the float64
// instantiation used by tests and finite-difference oracles.
//
// GEMM layout conventions (all matrices row-major, c is m x n):
//   gemm_nn: c (+)= a[m x k] * b[k x n]
//   gemm_nt: c (+)= a[m x k] * b[n x k]^T
//   gemm_tn: c (+)= a[k x m]^T * b[k x n]
//
// Reductions never split their accumulation across threads, so results are
// bit-identical for any worker count on a fixed backend.

namespace pmix::kernels {

enum class Backend { kScalar, kAvx2 };

Backend active_backend();
void set_backend(Backend b);
const char* backend_name();
bool avx2_supported();

// ---- float fast path (dispatched) ----
void gemm_nn(const float* a, const float* b, float* c,
             std::size_t m, std::size_t n, std::size_t k, bool accumulate);
void gemm_nt(const float* a, const float* b, float* c,
             std::size_t m, std::size_t n, std::size_t k, bool accumulate);
void gemm_tn(const float* a, const float* b, float* c,
             std::size_t m, std::size_t n, std::size_t k, bool accumulate);

void gelu_forward(const float* x, float* y, std::size_t n);
// dx = dy * gelu'(x)
void gelu_backward(const float* x, const float* dy, float* dx, std::size_t n);

// In-place softmax over one row (max-subtracted).
void softmax_row(float* row, std::size_t n);
// log-sum-exp of one row.
float lse_row(const float* row, std::size_t n);

// ds = p * (dp - dot(p, dp)); rows of attention softmax backward.
void softmax_backward_row(const float* p, const float* dp, float* ds, std::size_t n);

// AdamW with decoupled weight decay; g is pre-scaled by gscale (clip factor
// folded in). inv_bc1/inv_bc2 are the 1/(1-beta^t) bias corrections.
void adamw_update(float* p, const float* g, float* m, float* v, std::size_t n,
                  float lr, float beta1, float beta2, float eps, float wd,
                  float inv_bc1, float inv_bc2, float gscale);

double sumsq_f64(const float* x, std::size_t n);

// ---- generic scalar reference (double path + scalar float backend) ----

template <class T>
void gemm_nn_generic(const T* a, const T* b, T* c,
                     std::size_t m, std::size_t n, std::size_t k, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        if (!accumulate) {
            for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
        }
        const T* arow = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            T av = arow[kk];
            const T* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
void gemm_nt_generic(const T* a, const T* b, T* c,
                     std::size_t m, std::size_t n, std::size_t k, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

template <class T>
void gemm_tn_generic(const T* a, const T* b, T* c,
                     std::size_t m, std::size_t n, std::size_t k, bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < m * n; ++i) c[i] = T(0);
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
        const T* arow = a + kk * m;
        const T* brow = b + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
            T av = arow[i];
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// tanh-form GELU, the one function differentiated everywhere
template <class T>
inline T gelu_scalar(T x) {
    const T c0 = T(0.7978845608028653558798921198687637);  // sqrt(2/pi)
    const T c1 = T(0.044715);
    T u = c0 * (x + c1 * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <class T>
inline T gelu_grad_scalar(T x) {
    const T c0 = T(0.7978845608028653558798921198687637);
    const T c1 = T(0.044715);
    T u = c0 * (x + c1 * x * x * x);
    T t = std::tanh(u);
    T du = c0 * (T(1) + T(3) * c1 * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <class T>
void gelu_forward_generic(const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
}

template <class T>
void gelu_backward_generic(const T* x, const T* dy, T* dx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dx[i] = dy[i] * gelu_grad_scalar(x[i]);
}

template <class T>
void softmax_row_generic(T* row, std::size_t n) {
    T mx = row[0];
    for (std::size_t i = 1; i < n; ++i) mx = row[i] > mx ? row[i] : mx;
    T sum = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        row[i] = std::exp(row[i] - mx);
        sum += row[i];
    }
    T inv = T(1) / sum;
    for (std::size_t i = 0; i < n; ++i) row[i] *= inv;
}

template <class T>
T lse_row_generic(const T* row, std::size_t n) {
    T mx = row[0];
    for (std::size_t i = 1; i < n; ++i) mx = row[i] > mx ? row[i] : mx;
    T sum = T(0);
    for (std::size_t i = 0; i < n; ++i) sum += std::exp(row[i] - mx);
    return mx + std::log(sum);
}

template <class T>
void softmax_backward_row_generic(const T* p, const T* dp, T* ds, std::size_t n) {
    T dot = T(0);
    for (std::size_t i = 0; i < n; ++i) dot += p[i] * dp[i];
    for (std::size_t i = 0; i < n; ++i) ds[i] = p[i] * (dp[i] - dot);
}

template <class T>
void adamw_update_generic(T* p, const T* g, T* m, T* v, std::size_t n,
                          T lr, T beta1, T beta2, T eps, T wd,
                          T inv_bc1, T inv_bc2, T gscale) {
    for (std::size_t i = 0; i < n; ++i) {
        T gi = g[i] * gscale;
        m[i] = beta1 * m[i] + (T(1) - beta1) * gi;
        v[i] = beta2 * v[i] + (T(1) - beta2) * gi * gi;
        T mhat = m[i] * inv_bc1;
        T vhat = v[i] * inv_bc2;
        p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
    }
}

template <class T>
double sumsq_f64_generic(const T* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double xi = static_cast<double>(x[i]);
        acc += xi * xi;
    }
    return acc;
}

// generic entry points used by code templated on the scalar type
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k,
             bool accumulate) {
    gemm_nn_generic(a, b, c, m, n, k, accumulate);
}
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k,
             bool accumulate) {
    gemm_nt_generic(a, b, c, m, n, k, accumulate);
}
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k,
             bool accumulate) {
    gemm_tn_generic(a, b, c, m, n, k, accumulate);
}
template <class T>
void gelu_forward(const T* x, T* y, std::size_t n) {
    gelu_forward_generic(x, y, n);
}
template <class T>
void gelu_backward(const T* x, const T* dy, T* dx, std::size_t n) {
    gelu_backward_generic(x, dy, dx, n);
}
template <class T>
void softmax_row(T* row, std::size_t n) {
    softmax_row_generic(row, n);
}
template <class T>
T lse_row(const T* row, std::size_t n) {
    return lse_row_generic(row, n);
}
template <class T>
void softmax_backward_row(const T* p, const T* dp, T* ds, std::size_t n) {
    softmax_backward_row_generic(p, dp, ds, n);
}
template <class T>
void adamw_update(T* p, const T* g, T* m, T* v, std::size_t n, T lr, T beta1, T beta2,
                  T eps, T wd, T inv_bc1, T inv_bc2, T gscale) {
    adamw_update_generic(p, g, m, v, n, lr, beta1, beta2, eps, wd, inv_bc1, inv_bc2, gscale);
}
template <class T>
double sumsq_f64(const T* x, std::size_t n) {
    return sumsq_f64_generic(x, n);
}

}  // namespace pmix::kernels
