// SPDX-License-Identifier: Apache-2.0
// Scalar/AVX2 equivalence for every dispatched kernel, plus reference checks
// of the GEMM variants against naive double loops.

#include <cmath>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "pmix/kernels.hpp"
#include "pmix/rng.hpp"

using namespace pmix;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>((rng.next_double() * 2.0 - 1.0) * scale);
    return v;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

bool close_rel(const std::vector<float>& a, const std::vector<float>& b, double tol) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = std::abs(static_cast<double>(a[i]) - b[i]);
        double ref = std::max({std::abs(static_cast<double>(a[i])),
                               std::abs(static_cast<double>(b[i])), 1.0});
        if (d > tol * ref) return false;
    }
    return true;
}

struct BackendGuard {
    kernels::Backend saved;
    BackendGuard() : saved(kernels::active_backend()) {}
    ~BackendGuard() { kernels::set_backend(saved); }
};

}  // namespace

TEST_CASE("gemm variants match double reference") {
    const std::size_t m = 13, n = 17, k = 9;
    auto a = random_vec(m * k, 1);
    auto b = random_vec(k * n, 2);
    auto bt = random_vec(n * k, 3);
    auto at = random_vec(k * m, 4);

    // double reference
    std::vector<double> ad(a.begin(), a.end()), bd(b.begin(), b.end());
    std::vector<double> btd(bt.begin(), bt.end()), atd(at.begin(), at.end());
    std::vector<double> rd(m * n, 0.0);

    std::vector<float> c(m * n);
    kernels::gemm_nn(a.data(), b.data(), c.data(), m, n, k, false);
    kernels::gemm_nn_generic(ad.data(), bd.data(), rd.data(), m, n, k, false);
    for (std::size_t i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(rd[i]).epsilon(1e-5));

    kernels::gemm_nt(a.data(), bt.data(), c.data(), m, n, k, false);
    kernels::gemm_nt_generic(ad.data(), btd.data(), rd.data(), m, n, k, false);
    for (std::size_t i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(rd[i]).epsilon(1e-5));

    kernels::gemm_tn(at.data(), b.data(), c.data(), m, n, k, false);
    kernels::gemm_tn_generic(atd.data(), bd.data(), rd.data(), m, n, k, false);
    for (std::size_t i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(rd[i]).epsilon(1e-5));

    // accumulate flag
    std::vector<float> c2 = c;
    kernels::gemm_nn(a.data(), b.data(), c.data(), m, n, k, true);
    kernels::gemm_nn_generic(ad.data(), bd.data(), rd.data(), m, n, k, true);
    for (std::size_t i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(rd[i]).epsilon(1e-5));
}

TEST_CASE("scalar and avx2 backends agree") {
    if (!kernels::avx2_supported()) return;
    BackendGuard guard;

    // sizes hitting main blocks and tails
    const std::tuple<int, int, int> sizes[] = {{64, 64, 64}, {13, 257, 31}, {128, 16, 128},
                                               {6, 16, 8},   {1, 1, 1},     {7, 9, 257}};
    for (auto [m, n, k] : sizes) {
        auto a = random_vec(static_cast<std::size_t>(m) * k, 11 + m);
        auto b = random_vec(static_cast<std::size_t>(k) * n, 12 + n);
        auto bt = random_vec(static_cast<std::size_t>(n) * k, 13 + k);
        auto at = random_vec(static_cast<std::size_t>(k) * m, 14 + m + n);

        std::vector<float> cs(static_cast<std::size_t>(m) * n), cv(cs.size());

        kernels::set_backend(kernels::Backend::kScalar);
        kernels::gemm_nn(a.data(), b.data(), cs.data(), m, n, k, false);
        kernels::set_backend(kernels::Backend::kAvx2);
        kernels::gemm_nn(a.data(), b.data(), cv.data(), m, n, k, false);
        CHECK(close_rel(cs, cv, 2e-5));

        kernels::set_backend(kernels::Backend::kScalar);
        kernels::gemm_nt(a.data(), bt.data(), cs.data(), m, n, k, false);
        kernels::set_backend(kernels::Backend::kAvx2);
        kernels::gemm_nt(a.data(), bt.data(), cv.data(), m, n, k, false);
        CHECK(close_rel(cs, cv, 2e-5));

        kernels::set_backend(kernels::Backend::kScalar);
        kernels::gemm_tn(at.data(), b.data(), cs.data(), m, n, k, false);
        kernels::set_backend(kernels::Backend::kAvx2);
        kernels::gemm_tn(at.data(), b.data(), cv.data(), m, n, k, false);
        CHECK(close_rel(cs, cv, 2e-5));
    }

    const std::size_t n = 1003;
    auto x = random_vec(n, 21, 4.0);
    auto dy = random_vec(n, 22);
    std::vector<float> ys(n), yv(n);

    kernels::set_backend(kernels::Backend::kScalar);
    kernels::gelu_forward(x.data(), ys.data(), n);
    kernels::set_backend(kernels::Backend::kAvx2);
    kernels::gelu_forward(x.data(), yv.data(), n);
    CHECK(max_abs_diff(ys, yv) < 1e-5);

    kernels::set_backend(kernels::Backend::kScalar);
    kernels::gelu_backward(x.data(), dy.data(), ys.data(), n);
    kernels::set_backend(kernels::Backend::kAvx2);
    kernels::gelu_backward(x.data(), dy.data(), yv.data(), n);
    CHECK(max_abs_diff(ys, yv) < 1e-5);

    auto row = random_vec(257, 23, 8.0);
    auto rs = row, rv = row;
    kernels::set_backend(kernels::Backend::kScalar);
    kernels::softmax_row(rs.data(), rs.size());
    float lses = kernels::lse_row(row.data(), row.size());
    kernels::set_backend(kernels::Backend::kAvx2);
    kernels::softmax_row(rv.data(), rv.size());
    float lsev = kernels::lse_row(row.data(), row.size());
    CHECK(max_abs_diff(rs, rv) < 1e-6);
    CHECK(std::abs(lses - lsev) < 1e-5);

    auto p = rs;
    auto dp = random_vec(p.size(), 24);
    std::vector<float> dss(p.size()), dsv(p.size());
    kernels::set_backend(kernels::Backend::kScalar);
    kernels::softmax_backward_row(p.data(), dp.data(), dss.data(), p.size());
    kernels::set_backend(kernels::Backend::kAvx2);
    kernels::softmax_backward_row(p.data(), dp.data(), dsv.data(), p.size());
    CHECK(max_abs_diff(dss, dsv) < 1e-6);

    auto g = random_vec(n, 25);
    auto ps = random_vec(n, 26);
    auto pv = ps;
    std::vector<float> ms(n, 0.01f), vs(n, 0.02f), mv = ms, vv = vs;
    kernels::set_backend(kernels::Backend::kScalar);
    kernels::adamw_update(ps.data(), g.data(), ms.data(), vs.data(), n, 1e-3f, 0.9f, 0.99f,
                          1e-8f, 0.1f, 1.1f, 1.05f, 0.5f);
    kernels::set_backend(kernels::Backend::kAvx2);
    kernels::adamw_update(pv.data(), g.data(), mv.data(), vv.data(), n, 1e-3f, 0.9f, 0.99f,
                          1e-8f, 0.1f, 1.1f, 1.05f, 0.5f);
    CHECK(max_abs_diff(ps, pv) < 1e-7);
    CHECK(max_abs_diff(ms, mv) < 1e-7);
    CHECK(max_abs_diff(vs, vv) < 1e-7);

    kernels::set_backend(kernels::Backend::kScalar);
    double sq_s = kernels::sumsq_f64(x.data(), n);
    kernels::set_backend(kernels::Backend::kAvx2);
    double sq_v = kernels::sumsq_f64(x.data(), n);
    CHECK(sq_s == doctest::Approx(sq_v).epsilon(1e-12));
}

TEST_CASE("gelu matches double reference at f32 precision") {
    for (double x : {-6.0, -2.0, -0.5, 0.0, 0.3, 1.7, 5.0}) {
        double y = kernels::gelu_scalar(x);
        float yf;
        kernels::gelu_forward(std::vector<float>{static_cast<float>(x)}.data(), &yf, 1);
        CHECK(static_cast<double>(yf) == doctest::Approx(y).epsilon(1e-5));
        // derivative sanity by central difference
        double h = 1e-6;
        double fd = (kernels::gelu_scalar(x + h) - kernels::gelu_scalar(x - h)) / (2 * h);
        CHECK(kernels::gelu_grad_scalar(x) == doctest::Approx(fd).epsilon(1e-6));
    }
}
