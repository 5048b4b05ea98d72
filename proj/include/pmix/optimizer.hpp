// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pmix/common.hpp"
#include "pmix/kernels.hpp"
#include "pmix/lm.hpp"
#include "pmix/model.hpp"

namespace pmix {

// AdamW with decoupled weight decay and global-norm gradient clipping.
struct AdamwConfig {
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double weight_decay = 0.1;  // matrices only, never norm gains
    double clip_norm = 0.1;
};

template <class T>
struct OptimizerState {
    std::vector<T> m, v;
    std::int64_t step = 0;

    OptimizerState() = default;
    explicit OptimizerState(const ModelParams<T>& p)
        : m(p.size(), T(0)), v(p.size(), T(0)) {}
};

enum class LossKind { kFull, kPrefix };

struct TrainStepResult {
    double mean_loss = 0.0;
    double grad_norm = 0.0;   // after clipping
    double clip_scale = 1.0;
};

// Gradient of the mean per-sequence total NLL over the batch (unclipped),
// accumulated into grad (resized+zeroed here). Returns the mean loss.
template <class T>
double compute_gradients(const ModelParams<T>& p, const std::uint32_t* ids,
                         std::size_t batch, std::size_t len, Workspace<T>& ws,
                         std::vector<T>& grad) {
    grad.assign(p.size(), T(0));
    forward_batch(p, ids, batch, len, ws);
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) total += sequence_nll(ws, b);
    backward_batch(p, ws, grad.data());
    return total / static_cast<double>(batch);
}

// One optimizer step on a batch. loss kind prefix(M) trains on the first
// prefix_m tokens (identical gradients to masking a full forward, since the
// model is causal). Throws TrainingDiverged on non-finite loss.
template <class T>
TrainStepResult train_step(ModelParams<T>& p, OptimizerState<T>& opt,
                           const std::uint32_t* ids, std::size_t batch, std::size_t seq_len,
                           double rate, LossKind kind, std::size_t prefix_m,
                           const AdamwConfig& acfg, Workspace<T>& ws, std::vector<T>& grad,
                           std::vector<std::uint32_t>& prefix_scratch) {
    if (batch == 0) throw std::invalid_argument("train_step: empty batch");
    if (rate < 0.0) throw std::invalid_argument("train_step: negative rate");

    std::size_t len = seq_len;
    const std::uint32_t* data = ids;
    if (kind == LossKind::kPrefix) {
        if (prefix_m < 2 || prefix_m > seq_len)
            throw std::invalid_argument("train_step: prefix length out of range");
        if (prefix_m != seq_len) {
            prefix_scratch.resize(batch * prefix_m);
            for (std::size_t b = 0; b < batch; ++b) {
                std::memcpy(prefix_scratch.data() + b * prefix_m, ids + b * seq_len,
                            prefix_m * sizeof(std::uint32_t));
            }
            data = prefix_scratch.data();
            len = prefix_m;
        }
    }

    TrainStepResult res;
    res.mean_loss = compute_gradients(p, data, batch, len, ws, grad);
    if (!std::isfinite(res.mean_loss)) {
        throw TrainingDiverged(opt.step, "train_step: non-finite loss at step " +
                                             std::to_string(opt.step));
    }

    double norm = std::sqrt(kernels::sumsq_f64(grad.data(), grad.size()));
    res.clip_scale = (norm > acfg.clip_norm && norm > 0.0) ? acfg.clip_norm / norm : 1.0;
    res.grad_norm = norm * res.clip_scale;

    opt.step += 1;
    double bc1 = 1.0 - std::pow(acfg.beta1, static_cast<double>(opt.step));
    double bc2 = 1.0 - std::pow(acfg.beta2, static_cast<double>(opt.step));
    for (const auto& e : p.entries()) {
        T wd = e.decay ? static_cast<T>(acfg.weight_decay) : T(0);
        kernels::adamw_update(p.data() + e.offset, grad.data() + e.offset,
                              opt.m.data() + e.offset, opt.v.data() + e.offset, e.size,
                              static_cast<T>(rate), static_cast<T>(acfg.beta1),
                              static_cast<T>(acfg.beta2), static_cast<T>(acfg.eps), wd,
                              static_cast<T>(1.0 / bc1), static_cast<T>(1.0 / bc2),
                              static_cast<T>(res.clip_scale));
    }
    return res;
}

}  // namespace pmix
