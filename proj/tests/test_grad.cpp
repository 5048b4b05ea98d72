// SPDX-License-Identifier: Apache-2.0
// Gradient correctness against the finite-difference oracle, and the
// train_step contracts: zero-rate no-op, clip bound, determinism,
// divergence signalling.

#include <cmath>
#include <vector>

#include "doctest.h"
#include "pmix/lm.hpp"
#include "pmix/model.hpp"
#include "pmix/optimizer.hpp"
#include "pmix/rng.hpp"
#include "support/fd_check.hpp"

using namespace pmix;

namespace {

std::vector<std::uint32_t> random_ids(std::size_t n, std::uint32_t vocab, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::uint32_t> ids(n);
    for (auto& x : ids) x = static_cast<std::uint32_t>(rng.next_below(vocab));
    return ids;
}

}  // namespace

TEST_CASE("finite differences confirm every parameter gradient (full loss)") {
    ModelConfig cfg{.layers = 2, .hidden = 16, .heads = 2, .ffn = 32, .vocab = 17,
                    .seq_len = 8};
    ModelParams<double> p(cfg);
    init_params(p, 101);
    const std::size_t batch = 2;
    auto ids = random_ids(batch * cfg.seq_len, cfg.vocab, 103);

    auto rep = testing::finite_difference_check(p, ids.data(), batch, cfg.seq_len);
    INFO("worst: ", rep.worst_tensor, "[", rep.worst_index, "] rel err ", rep.max_rel_err);
    CHECK(rep.max_rel_err < 1e-4);
    CHECK(rep.checked == p.size());
}

TEST_CASE("finite differences confirm prefix-loss gradients") {
    ModelConfig cfg{.layers = 1, .hidden = 8, .heads = 2, .ffn = 16, .vocab = 11,
                    .seq_len = 6};
    ModelParams<double> p(cfg);
    init_params(p, 107);
    // prefix loss == full loss on the truncated batch
    const std::size_t batch = 2, m = 4;
    auto full = random_ids(batch * cfg.seq_len, cfg.vocab, 109);
    std::vector<std::uint32_t> trunc(batch * m);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < m; ++t) trunc[b * m + t] = full[b * cfg.seq_len + t];

    auto rep = testing::finite_difference_check(p, trunc.data(), batch, m);
    INFO("worst: ", rep.worst_tensor, "[", rep.worst_index, "] rel err ", rep.max_rel_err);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("train_step: zero rate leaves parameters bit-identical") {
    ModelConfig cfg{.layers = 1, .hidden = 8, .heads = 2, .ffn = 16, .vocab = 11,
                    .seq_len = 6};
    ModelParams<float> p(cfg);
    init_params(p, 211);
    auto before = p.flat;
    OptimizerState<float> opt(p);
    Workspace<float> ws(cfg, 2);
    std::vector<float> grad;
    std::vector<std::uint32_t> scratch;
    auto ids = random_ids(2 * cfg.seq_len, cfg.vocab, 212);

    AdamwConfig acfg;
    acfg.weight_decay = 0.0;
    auto res = train_step(p, opt, ids.data(), 2, cfg.seq_len, 0.0, LossKind::kFull, 0, acfg,
                          ws, grad, scratch);
    CHECK(res.mean_loss > 0.0);
    CHECK(p.flat == before);
    CHECK(opt.step == 1);
}

TEST_CASE("train_step: clipped gradient norm respects the bound") {
    ModelConfig cfg{.layers = 2, .hidden = 16, .heads = 2, .ffn = 32, .vocab = 17,
                    .seq_len = 8};
    ModelParams<float> p(cfg);
    init_params(p, 213);
    OptimizerState<float> opt(p);
    Workspace<float> ws(cfg, 4);
    std::vector<float> grad;
    std::vector<std::uint32_t> scratch;
    auto ids = random_ids(4 * cfg.seq_len, cfg.vocab, 214);

    AdamwConfig acfg;  // clip_norm = 0.1
    for (int s = 0; s < 5; ++s) {
        auto res = train_step(p, opt, ids.data(), 4, cfg.seq_len, 1e-3, LossKind::kFull, 0,
                              acfg, ws, grad, scratch);
        CHECK(res.grad_norm <= acfg.clip_norm + 1e-9);
    }
}

TEST_CASE("train_step: deterministic under identical seeds and inputs") {
    ModelConfig cfg{.layers = 2, .hidden = 16, .heads = 2, .ffn = 32, .vocab = 17,
                    .seq_len = 8};
    auto run = [&] {
        ModelParams<float> p(cfg);
        init_params(p, 311);
        OptimizerState<float> opt(p);
        Workspace<float> ws(cfg, 4);
        std::vector<float> grad;
        std::vector<std::uint32_t> scratch;
        AdamwConfig acfg;
        for (int s = 0; s < 10; ++s) {
            auto ids = random_ids(4 * cfg.seq_len, cfg.vocab, 400 + s);
            train_step(p, opt, ids.data(), 4, cfg.seq_len, 5e-4, LossKind::kFull, 0, acfg, ws,
                       grad, scratch);
        }
        return p.flat;
    };
    auto a = run();
    auto b = run();
    CHECK(a == b);
}

TEST_CASE("train_step: prefix loss kind trains on the prefix only") {
    ModelConfig cfg{.layers = 1, .hidden = 8, .heads = 2, .ffn = 16, .vocab = 11,
                    .seq_len = 6};
    ModelParams<float> p(cfg);
    init_params(p, 501);
    auto ids = random_ids(2 * cfg.seq_len, cfg.vocab, 503);

    // mean prefix loss reported must equal mean of prefix_nll over the batch
    OptimizerState<float> opt(p);
    Workspace<float> ws(cfg, 2);
    std::vector<float> grad;
    std::vector<std::uint32_t> scratch;
    AdamwConfig acfg;
    auto p0 = p;
    auto res = train_step(p, opt, ids.data(), 2, cfg.seq_len, 0.0, LossKind::kPrefix, 4, acfg,
                          ws, grad, scratch);
    double want = 0.5 * (prefix_nll(p0, ids.data(), cfg.seq_len, 4) +
                         prefix_nll(p0, ids.data() + cfg.seq_len, cfg.seq_len, 4));
    CHECK(res.mean_loss == doctest::Approx(want).epsilon(1e-6));

    CHECK_THROWS_AS(train_step(p, opt, ids.data(), 2, cfg.seq_len, 0.0, LossKind::kPrefix, 1,
                               acfg, ws, grad, scratch),
                    std::invalid_argument);
}

TEST_CASE("train_step: non-finite loss raises TrainingDiverged with step index") {
    ModelConfig cfg{.layers = 1, .hidden = 8, .heads = 2, .ffn = 16, .vocab = 11,
                    .seq_len = 6};
    ModelParams<float> p(cfg);
    init_params(p, 601);
    // poison one embedding weight
    p.flat[3] = std::numeric_limits<float>::quiet_NaN();
    OptimizerState<float> opt(p);
    opt.step = 41;
    Workspace<float> ws(cfg, 1);
    std::vector<float> grad;
    std::vector<std::uint32_t> scratch;
    auto ids = random_ids(cfg.seq_len, cfg.vocab, 602);
    AdamwConfig acfg;
    try {
        train_step(p, opt, ids.data(), 1, cfg.seq_len, 1e-3, LossKind::kFull, 0, acfg, ws,
                   grad, scratch);
        FAIL("expected TrainingDiverged");
    } catch (const TrainingDiverged& e) {
        CHECK(e.step() == 41);
    }
}
