// SPDX-License-Identifier: Apache-2.0
#pragma once

// Central finite-difference gradient oracle (64-bit, h = 1e-5). Compares the
// analytic gradient of the mean per-sequence loss against (L(p+h)-L(p-h))/2h
// for every parameter; returns the max relative error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pmix/lm.hpp"
#include "pmix/model.hpp"
#include "pmix/optimizer.hpp"

namespace pmix::testing {

struct FdReport {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    std::string worst_tensor;
    std::size_t checked = 0;
};

inline double batch_mean_loss(const ModelParams<double>& p, const std::uint32_t* ids,
                              std::size_t batch, std::size_t len, Workspace<double>& ws) {
    forward_batch(p, ids, batch, len, ws);
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) total += sequence_nll(ws, b);
    return total / static_cast<double>(batch);
}

inline FdReport finite_difference_check(ModelParams<double>& p, const std::uint32_t* ids,
                                        std::size_t batch, std::size_t len,
                                        double h = 1e-5) {
    Workspace<double> ws(p.config, batch);
    std::vector<double> grad;
    compute_gradients(p, ids, batch, len, ws, grad);

    FdReport rep;
    for (const auto& e : p.entries()) {
        for (std::size_t i = 0; i < e.size; ++i) {
            std::size_t idx = e.offset + i;
            double saved = p.flat[idx];
            p.flat[idx] = saved + h;
            double lp = batch_mean_loss(p, ids, batch, len, ws);
            p.flat[idx] = saved - h;
            double lm = batch_mean_loss(p, ids, batch, len, ws);
            p.flat[idx] = saved;
            double fd = (lp - lm) / (2.0 * h);
            double g = grad[idx];
            double rel = std::abs(g - fd) / std::max(1e-5, std::abs(g) + std::abs(fd));
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_index = i;
                rep.worst_tensor = e.name;
            }
            ++rep.checked;
        }
    }
    return rep;
}

}  // namespace pmix::testing
