// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace pmix {

enum class ScheduleKind { kWarmupCosine, kWarmupConstant };

struct ScheduleConfig {
    ScheduleKind kind = ScheduleKind::kWarmupConstant;
    std::int64_t warmup_steps = 0;
    double peak_rate = 1e-4;
    std::int64_t total_steps = 0;  // cosine only
    double floor_rate = 0.0;

    void validate() const {
        if (warmup_steps < 0) throw std::invalid_argument("schedule: warmup_steps < 0");
        if (peak_rate <= 0.0) throw std::invalid_argument("schedule: peak_rate <= 0");
        if (kind == ScheduleKind::kWarmupCosine) {
            if (total_steps <= warmup_steps)
                throw std::invalid_argument("schedule: total_steps must exceed warmup_steps");
            if (floor_rate < 0.0 || floor_rate > peak_rate)
                throw std::invalid_argument("schedule: floor_rate out of range");
        }
    }
};

inline double lr_at(const ScheduleConfig& s, std::int64_t step) {
    if (step < 0) throw std::invalid_argument("lr_at: step < 0");
    if (step < s.warmup_steps) {
        return s.peak_rate * static_cast<double>(step + 1) /
               static_cast<double>(s.warmup_steps);
    }
    if (s.kind == ScheduleKind::kWarmupConstant) return s.peak_rate;
    double span = static_cast<double>(s.total_steps - s.warmup_steps);
    double progress = static_cast<double>(step - s.warmup_steps) / span;
    if (progress > 1.0) progress = 1.0;
    return s.floor_rate +
           0.5 * (s.peak_rate - s.floor_rate) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace pmix
