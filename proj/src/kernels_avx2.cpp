// SPDX-License-Identifier: Apache-2.0
#include "kernels_internal.hpp"

#if PMIX_HAVE_AVX2_BACKEND

#include <immintrin.h>

#include "pmix/kernels.hpp"

#include <cmath>
#include <cstdint>

// AVX2/FMA variants. Compiled with -mavx2 -mfma in its own TU; only reached
// through the dispatch table after a cpuid check.

namespace pmix::kernels::avx2 {
namespace {

inline float hsum256(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
}

inline float hmax256(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_max_ps(lo, hi);
    lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_max_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
}

// cephes-style expf, |rel err| < 2 ulp on the clamped range
inline __m256 exp256(__m256 x) {
    const __m256 max_x = _mm256_set1_ps(88.3762626647949f);
    const __m256 min_x = _mm256_set1_ps(-87.3365478515625f);
    const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
    const __m256 c1 = _mm256_set1_ps(0.693359375f);
    const __m256 c2 = _mm256_set1_ps(-2.12194440e-4f);
    x = _mm256_min_ps(_mm256_max_ps(x, min_x), max_x);

    __m256 fx = _mm256_fmadd_ps(x, log2e, _mm256_set1_ps(0.5f));
    fx = _mm256_floor_ps(fx);
    x = _mm256_fnmadd_ps(fx, c1, x);
    x = _mm256_fnmadd_ps(fx, c2, x);

    __m256 z = _mm256_mul_ps(x, x);
    __m256 y = _mm256_set1_ps(1.9875691500e-4f);
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
    y = _mm256_fmadd_ps(y, z, x);
    y = _mm256_add_ps(y, _mm256_set1_ps(1.0f));

    __m256i pow2 = _mm256_slli_epi32(
        _mm256_add_epi32(_mm256_cvttps_epi32(fx), _mm256_set1_epi32(127)), 23);
    return _mm256_mul_ps(y, _mm256_castsi256_ps(pow2));
}

// tanh(u) = sign(u) * (1 - 2 / (exp(2|u|) + 1))
inline __m256 tanh256(__m256 u) {
    const __m256 sign_mask = _mm256_set1_ps(-0.0f);
    __m256 sign = _mm256_and_ps(u, sign_mask);
    __m256 au = _mm256_andnot_ps(sign_mask, u);
    __m256 e = exp256(_mm256_add_ps(au, au));
    __m256 t = _mm256_sub_ps(
        _mm256_set1_ps(1.0f),
        _mm256_div_ps(_mm256_set1_ps(2.0f), _mm256_add_ps(e, _mm256_set1_ps(1.0f))));
    return _mm256_or_ps(t, sign);
}

constexpr std::size_t kMr = 6;

// C[mr x 16] tile, B rows streamed, A broadcast. k is never split.
template <std::size_t MR>
inline void tile_nn_16(const float* a, const float* b, float* c, std::size_t n,
                       std::size_t k, bool accumulate) {
    __m256 acc[MR][2];
    for (std::size_t r = 0; r < MR; ++r) {
        if (accumulate) {
            acc[r][0] = _mm256_loadu_ps(c + r * n);
            acc[r][1] = _mm256_loadu_ps(c + r * n + 8);
        } else {
            acc[r][0] = _mm256_setzero_ps();
            acc[r][1] = _mm256_setzero_ps();
        }
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
        const float* brow = b + kk * n;
        __m256 b0 = _mm256_loadu_ps(brow);
        __m256 b1 = _mm256_loadu_ps(brow + 8);
        for (std::size_t r = 0; r < MR; ++r) {
            __m256 av = _mm256_broadcast_ss(a + r * k + kk);
            acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
            acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
        }
    }
    for (std::size_t r = 0; r < MR; ++r) {
        _mm256_storeu_ps(c + r * n, acc[r][0]);
        _mm256_storeu_ps(c + r * n + 8, acc[r][1]);
    }
}

template <std::size_t MR>
inline void tile_nn_8(const float* a, const float* b, float* c, std::size_t n,
                      std::size_t k, bool accumulate) {
    __m256 acc[MR];
    for (std::size_t r = 0; r < MR; ++r) {
        acc[r] = accumulate ? _mm256_loadu_ps(c + r * n) : _mm256_setzero_ps();
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
        __m256 b0 = _mm256_loadu_ps(b + kk * n);
        for (std::size_t r = 0; r < MR; ++r) {
            __m256 av = _mm256_broadcast_ss(a + r * k + kk);
            acc[r] = _mm256_fmadd_ps(av, b0, acc[r]);
        }
    }
    for (std::size_t r = 0; r < MR; ++r) _mm256_storeu_ps(c + r * n, acc[r]);
}

template <std::size_t MR>
inline void rows_nn(const float* a, const float* b, float* c, std::size_t n, std::size_t k,
                    bool accumulate) {
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) tile_nn_16<MR>(a, b + j, c + j, n, k, accumulate);
    for (; j + 8 <= n; j += 8) tile_nn_8<MR>(a, b + j, c + j, n, k, accumulate);
    for (; j < n; ++j) {
        for (std::size_t r = 0; r < MR; ++r) {
            float s = accumulate ? c[r * n + j] : 0.0f;
            const float* arow = a + r * k;
            for (std::size_t kk = 0; kk < k; ++kk) s += arow[kk] * b[kk * n + j];
            c[r * n + j] = s;
        }
    }
}

// MR x NC tile of row-dot-products for C = A * B^T
template <std::size_t MR, std::size_t NC>
inline void tile_nt(const float* a, const float* b, float* c, std::size_t n, std::size_t k,
                    bool accumulate) {
    __m256 acc[MR][NC];
    for (std::size_t r = 0; r < MR; ++r)
        for (std::size_t q = 0; q < NC; ++q) acc[r][q] = _mm256_setzero_ps();
    std::size_t kk = 0;
    for (; kk + 8 <= k; kk += 8) {
        __m256 bv[NC];
        for (std::size_t q = 0; q < NC; ++q) bv[q] = _mm256_loadu_ps(b + q * k + kk);
        for (std::size_t r = 0; r < MR; ++r) {
            __m256 av = _mm256_loadu_ps(a + r * k + kk);
            for (std::size_t q = 0; q < NC; ++q)
                acc[r][q] = _mm256_fmadd_ps(av, bv[q], acc[r][q]);
        }
    }
    for (std::size_t r = 0; r < MR; ++r) {
        for (std::size_t q = 0; q < NC; ++q) {
            float s = hsum256(acc[r][q]);
            for (std::size_t kt = kk; kt < k; ++kt) s += a[r * k + kt] * b[q * k + kt];
            c[r * n + q] = accumulate ? c[r * n + q] + s : s;
        }
    }
}

template <std::size_t MR>
inline void rows_nt(const float* a, const float* b, float* c, std::size_t n, std::size_t k,
                    bool accumulate) {
    std::size_t j = 0;
    for (; j + 2 <= n; j += 2) tile_nt<MR, 2>(a, b + j * k, c + j, n, k, accumulate);
    if (j < n) tile_nt<MR, 1>(a, b + j * k, c + j, n, k, accumulate);
}

}  // namespace

void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
             std::size_t k, bool accumulate) {
    std::size_t i = 0;
    for (; i + kMr <= m; i += kMr) rows_nn<kMr>(a + i * k, b, c + i * n, n, k, accumulate);
    switch (m - i) {
        case 5: rows_nn<5>(a + i * k, b, c + i * n, n, k, accumulate); break;
        case 4: rows_nn<4>(a + i * k, b, c + i * n, n, k, accumulate); break;
        case 3: rows_nn<3>(a + i * k, b, c + i * n, n, k, accumulate); break;
        case 2: rows_nn<2>(a + i * k, b, c + i * n, n, k, accumulate); break;
        case 1: rows_nn<1>(a + i * k, b, c + i * n, n, k, accumulate); break;
        default: break;
    }
}

void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
             std::size_t k, bool accumulate) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) rows_nt<4>(a + i * k, b, c + i * n, n, k, accumulate);
    switch (m - i) {
        case 3: rows_nt<3>(a + i * k, b, c + i * n, n, k, accumulate); break;
        case 2: rows_nt<2>(a + i * k, b, c + i * n, n, k, accumulate); break;
        case 1: rows_nt<1>(a + i * k, b, c + i * n, n, k, accumulate); break;
        default: break;
    }
}

namespace {

// C tile rows i..i+MR map to A columns; A rows streamed over k.
template <std::size_t MR>
inline void cols_tn(const float* a, const float* b, float* c, std::size_t n, std::size_t k,
                    std::size_t lda, bool accumulate) {
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) {
        __m256 acc[MR][2];
        for (std::size_t r = 0; r < MR; ++r) {
            if (accumulate) {
                acc[r][0] = _mm256_loadu_ps(c + r * n + j);
                acc[r][1] = _mm256_loadu_ps(c + r * n + j + 8);
            } else {
                acc[r][0] = _mm256_setzero_ps();
                acc[r][1] = _mm256_setzero_ps();
            }
        }
        for (std::size_t kk = 0; kk < k; ++kk) {
            const float* brow = b + kk * n + j;
            __m256 b0 = _mm256_loadu_ps(brow);
            __m256 b1 = _mm256_loadu_ps(brow + 8);
            const float* acol = a + kk * lda;
            for (std::size_t r = 0; r < MR; ++r) {
                __m256 av = _mm256_broadcast_ss(acol + r);
                acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
                acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
            }
        }
        for (std::size_t r = 0; r < MR; ++r) {
            _mm256_storeu_ps(c + r * n + j, acc[r][0]);
            _mm256_storeu_ps(c + r * n + j + 8, acc[r][1]);
        }
    }
    for (; j < n; ++j) {
        for (std::size_t r = 0; r < MR; ++r) {
            float s = accumulate ? c[r * n + j] : 0.0f;
            for (std::size_t kk = 0; kk < k; ++kk) s += a[kk * lda + r] * b[kk * n + j];
            c[r * n + j] = s;
        }
    }
}

}  // namespace

void gemm_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
             std::size_t k, std::size_t lda, bool accumulate) {
    // block over k so the C panel and the A/B slices stay cache resident;
    // k order inside a row block is still strictly sequential
    constexpr std::size_t kKc = 256;
    for (std::size_t k0 = 0; k0 < k; k0 += kKc) {
        std::size_t kc = k - k0 < kKc ? k - k0 : kKc;
        const float* ab = a + k0 * lda;
        const float* bb = b + k0 * n;
        bool acc = accumulate || k0 > 0;
        std::size_t i = 0;
        for (; i + 4 <= m; i += 4) cols_tn<4>(ab + i, bb, c + i * n, n, kc, lda, acc);
        switch (m - i) {
            case 3: cols_tn<3>(ab + i, bb, c + i * n, n, kc, lda, acc); break;
            case 2: cols_tn<2>(ab + i, bb, c + i * n, n, kc, lda, acc); break;
            case 1: cols_tn<1>(ab + i, bb, c + i * n, n, kc, lda, acc); break;
            default: break;
        }
    }
}

void gelu_forward(const float* x, float* y, std::size_t n) {
    const __m256 c0 = _mm256_set1_ps(0.79788456080286535588f);
    const __m256 c1 = _mm256_set1_ps(0.044715f);
    const __m256 half = _mm256_set1_ps(0.5f);
    const __m256 one = _mm256_set1_ps(1.0f);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 xv = _mm256_loadu_ps(x + i);
        __m256 x3 = _mm256_mul_ps(_mm256_mul_ps(xv, xv), xv);
        __m256 u = _mm256_mul_ps(c0, _mm256_fmadd_ps(c1, x3, xv));
        __m256 t = tanh256(u);
        _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_mul_ps(half, xv), _mm256_add_ps(one, t)));
    }
    for (; i < n; ++i) y[i] = gelu_scalar(x[i]);
}

void gelu_backward(const float* x, const float* dy, float* dx, std::size_t n) {
    const __m256 c0 = _mm256_set1_ps(0.79788456080286535588f);
    const __m256 c1 = _mm256_set1_ps(0.044715f);
    const __m256 c13 = _mm256_set1_ps(3.0f * 0.044715f);
    const __m256 half = _mm256_set1_ps(0.5f);
    const __m256 one = _mm256_set1_ps(1.0f);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 xv = _mm256_loadu_ps(x + i);
        __m256 x2 = _mm256_mul_ps(xv, xv);
        __m256 u = _mm256_mul_ps(c0, _mm256_fmadd_ps(c1, _mm256_mul_ps(x2, xv), xv));
        __m256 t = tanh256(u);
        __m256 du = _mm256_mul_ps(c0, _mm256_fmadd_ps(c13, x2, one));
        __m256 sech2 = _mm256_fnmadd_ps(t, t, one);
        __m256 g = _mm256_fmadd_ps(_mm256_mul_ps(_mm256_mul_ps(half, xv), sech2), du,
                                   _mm256_mul_ps(half, _mm256_add_ps(one, t)));
        _mm256_storeu_ps(dx + i, _mm256_mul_ps(_mm256_loadu_ps(dy + i), g));
    }
    for (; i < n; ++i) dx[i] = dy[i] * gelu_grad_scalar(x[i]);
}

void softmax_row(float* row, std::size_t n) {
    __m256 vmax = _mm256_set1_ps(-3.4e38f);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) vmax = _mm256_max_ps(vmax, _mm256_loadu_ps(row + i));
    float mx = hmax256(vmax);
    for (; i < n; ++i) mx = row[i] > mx ? row[i] : mx;

    __m256 vmx = _mm256_set1_ps(mx);
    __m256 vsum = _mm256_setzero_ps();
    i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 e = exp256(_mm256_sub_ps(_mm256_loadu_ps(row + i), vmx));
        _mm256_storeu_ps(row + i, e);
        vsum = _mm256_add_ps(vsum, e);
    }
    float sum = hsum256(vsum);
    for (; i < n; ++i) {
        float e = std::exp(row[i] - mx);
        row[i] = e;
        sum += e;
    }
    float inv = 1.0f / sum;
    __m256 vinv = _mm256_set1_ps(inv);
    i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(row + i, _mm256_mul_ps(_mm256_loadu_ps(row + i), vinv));
    for (; i < n; ++i) row[i] *= inv;
}

float lse_row(const float* row, std::size_t n) {
    __m256 vmax = _mm256_set1_ps(-3.4e38f);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) vmax = _mm256_max_ps(vmax, _mm256_loadu_ps(row + i));
    float mx = hmax256(vmax);
    for (; i < n; ++i) mx = row[i] > mx ? row[i] : mx;

    __m256 vmx = _mm256_set1_ps(mx);
    __m256 vsum = _mm256_setzero_ps();
    i = 0;
    for (; i + 8 <= n; i += 8)
        vsum = _mm256_add_ps(vsum, exp256(_mm256_sub_ps(_mm256_loadu_ps(row + i), vmx)));
    float sum = hsum256(vsum);
    for (; i < n; ++i) sum += std::exp(row[i] - mx);
    return mx + std::log(sum);
}

void softmax_backward_row(const float* p, const float* dp, float* ds, std::size_t n) {
    __m256 vdot = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        vdot = _mm256_fmadd_ps(_mm256_loadu_ps(p + i), _mm256_loadu_ps(dp + i), vdot);
    float dot = hsum256(vdot);
    for (; i < n; ++i) dot += p[i] * dp[i];

    __m256 vd = _mm256_set1_ps(dot);
    i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 pv = _mm256_loadu_ps(p + i);
        __m256 dpv = _mm256_loadu_ps(dp + i);
        _mm256_storeu_ps(ds + i, _mm256_mul_ps(pv, _mm256_sub_ps(dpv, vd)));
    }
    for (; i < n; ++i) ds[i] = p[i] * (dp[i] - dot);
}

void adamw_update(float* p, const float* g, float* m, float* v, std::size_t n, float lr,
                  float beta1, float beta2, float eps, float wd, float inv_bc1,
                  float inv_bc2, float gscale) {
    const __m256 vb1 = _mm256_set1_ps(beta1);
    const __m256 vb2 = _mm256_set1_ps(beta2);
    const __m256 vo1 = _mm256_set1_ps(1.0f - beta1);
    const __m256 vo2 = _mm256_set1_ps(1.0f - beta2);
    const __m256 vbc1 = _mm256_set1_ps(inv_bc1);
    const __m256 vbc2 = _mm256_set1_ps(inv_bc2);
    const __m256 veps = _mm256_set1_ps(eps);
    const __m256 vlr = _mm256_set1_ps(lr);
    const __m256 vwd = _mm256_set1_ps(wd);
    const __m256 vgs = _mm256_set1_ps(gscale);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 gi = _mm256_mul_ps(_mm256_loadu_ps(g + i), vgs);
        __m256 mi = _mm256_fmadd_ps(vo1, gi, _mm256_mul_ps(vb1, _mm256_loadu_ps(m + i)));
        __m256 vi = _mm256_fmadd_ps(vo2, _mm256_mul_ps(gi, gi),
                                    _mm256_mul_ps(vb2, _mm256_loadu_ps(v + i)));
        _mm256_storeu_ps(m + i, mi);
        _mm256_storeu_ps(v + i, vi);
        __m256 mhat = _mm256_mul_ps(mi, vbc1);
        __m256 vhat = _mm256_mul_ps(vi, vbc2);
        __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), veps);
        __m256 pv = _mm256_loadu_ps(p + i);
        __m256 upd = _mm256_fmadd_ps(vwd, pv, _mm256_div_ps(mhat, denom));
        _mm256_storeu_ps(p + i, _mm256_fnmadd_ps(vlr, upd, pv));
    }
    for (; i < n; ++i) {
        float gi = g[i] * gscale;
        m[i] = beta1 * m[i] + (1.0f - beta1) * gi;
        v[i] = beta2 * v[i] + (1.0f - beta2) * gi * gi;
        float mhat = m[i] * inv_bc1;
        float vhat = v[i] * inv_bc2;
        p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
    }
}

double sumsq_f64(const float* x, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 v = _mm256_loadu_ps(x + i);
        __m256d lo = _mm256_cvtps_pd(_mm256_castps256_ps128(v));
        __m256d hi = _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1));
        acc0 = _mm256_fmadd_pd(lo, lo, acc0);
        acc1 = _mm256_fmadd_pd(hi, hi, acc1);
    }
    __m256d acc = _mm256_add_pd(acc0, acc1);
    alignas(32) double tmp[4];
    _mm256_store_pd(tmp, acc);
    double s = tmp[0] + tmp[1] + tmp[2] + tmp[3];
    for (; i < n; ++i) s += static_cast<double>(x[i]) * static_cast<double>(x[i]);
    return s;
}

}  // namespace pmix::kernels::avx2

#endif  // PMIX_HAVE_AVX2_BACKEND
