// SPDX-License-Identifier: Apache-2.0
#include "pmix/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace pmix {
namespace {

std::size_t g_workers = 0;
thread_local bool t_in_worker = false;

// Workers spin briefly on the job generation counter before sleeping on a
// condition variable, so back-to-back kernels hand off in ~100ns while idle
// periods still release the core.
class Pool {
public:
    explicit Pool(std::size_t threads) {
        threads_.reserve(threads);
        for (std::size_t i = 0; i < threads; ++i) {
            threads_.emplace_back([this, i] { worker(i + 1); });
        }
    }

    ~Pool() {
        stop_.store(true, std::memory_order_release);
        {
            std::lock_guard<std::mutex> lock(m_);
            gen_.fetch_add(1, std::memory_order_release);
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    std::size_t size() const { return threads_.size(); }

    void run(std::size_t parts, const std::function<void(std::size_t)>& part_fn) {
        part_fn_ = &part_fn;
        parts_ = parts;
        pending_.store(parts - 1, std::memory_order_release);
        {
            std::lock_guard<std::mutex> lock(m_);
            gen_.fetch_add(1, std::memory_order_release);
        }
        cv_.notify_all();

        t_in_worker = true;
        part_fn(0);
        t_in_worker = false;

        while (pending_.load(std::memory_order_acquire) != 0) {
            std::this_thread::yield();
        }
        part_fn_ = nullptr;
    }

private:
    static constexpr int kSpins = 20000;

    void worker(std::size_t id) {
        t_in_worker = true;
        std::uint64_t seen = 0;  // pool starts at generation 0, before any run()
        for (;;) {
            std::uint64_t g = seen;
            for (int spin = 0; spin < kSpins; ++spin) {
                g = gen_.load(std::memory_order_acquire);
                if (g != seen) break;
#if defined(__x86_64__)
                __builtin_ia32_pause();
#else
                std::this_thread::yield();
#endif
            }
            if (g == seen) {
                std::unique_lock<std::mutex> lock(m_);
                cv_.wait(lock, [&] { return gen_.load(std::memory_order_acquire) != seen; });
                g = gen_.load(std::memory_order_acquire);
            }
            seen = g;
            if (stop_.load(std::memory_order_acquire)) return;
            if (id < parts_) {
                (*part_fn_)(id);
                pending_.fetch_sub(1, std::memory_order_acq_rel);
            }
        }
    }

    std::vector<std::thread> threads_;
    std::mutex m_;
    std::condition_variable cv_;
    const std::function<void(std::size_t)>* part_fn_ = nullptr;
    std::size_t parts_ = 0;
    std::atomic<std::size_t> pending_{0};
    std::atomic<std::uint64_t> gen_{0};
    std::atomic<bool> stop_{false};
};

Pool& pool() {
    static Pool p(worker_count() - 1);
    return p;
}

}  // namespace

void set_worker_count(std::size_t n) { g_workers = n; }

std::size_t worker_count() {
    if (g_workers > 0) return g_workers;
    std::size_t hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

namespace detail {

bool in_worker() { return t_in_worker; }

std::size_t pool_threads() { return pool().size(); }

void pool_run(std::size_t parts, const std::function<void(std::size_t)>& part_fn) {
    pool().run(parts, part_fn);
}

}  // namespace detail
}  // namespace pmix
