// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <utility>

// Deterministic data parallelism. parallel_for partitions [0, n) into
// contiguous blocks, one per worker; no kernel ever splits a reduction
// across workers, so results are bit-identical for any thread count.
// Nested calls from inside a worker run inline.

namespace pmix {

// Process-wide worker count (including the calling thread). 0 = hardware.
void set_worker_count(std::size_t n);
std::size_t worker_count();

namespace detail {
bool in_worker();
std::size_t pool_threads();
// Runs part_fn(p) for p in [0, parts); part 0 on the caller.
void pool_run(std::size_t parts, const std::function<void(std::size_t)>& part_fn);
}  // namespace detail

template <class Fn>
void parallel_for(std::size_t n, std::size_t grain, Fn&& fn) {
    if (n == 0) return;
    if (grain == 0) grain = 1;
    std::size_t parts = (n + grain - 1) / grain;
    if (parts > 1 && !detail::in_worker()) {
        std::size_t workers = worker_count();
        std::size_t cap = detail::pool_threads() + 1;
        if (workers > cap) workers = cap;
        if (parts > workers) parts = workers;
    } else {
        parts = 1;
    }
    if (parts <= 1) {
        fn(0, n);
        return;
    }
    std::size_t chunk = (n + parts - 1) / parts;
    detail::pool_run(parts, [&](std::size_t p) {
        std::size_t b = p * chunk;
        std::size_t e = b + chunk < n ? b + chunk : n;
        if (b < e) fn(b, e);
    });
}

}  // namespace pmix
