#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace emstad {

/// Worker count from EMSTAD_WORKERS, else the hardware concurrency.
inline unsigned default_workers() {
    if (const char* env = std::getenv("EMSTAD_WORKERS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) return static_cast<unsigned>(n);
        } catch (const std::exception&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/**
 * Evaluates fn(i) for i in [0, n) on `workers` threads and returns the results
 * indexed by i, so the output does not depend on scheduling. Workers pull
 * indices from a shared counter. The first exception thrown by any call is
 * rethrown after all workers stop.
 */
template <typename Fn>
auto parallel_map(std::size_t n, unsigned workers, Fn&& fn) -> std::vector<decltype(fn(std::size_t{}))> {
    using Result = decltype(fn(std::size_t{}));
    std::vector<Result> results(n);
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) results[i] = fn(i);
        return results;
    }

    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
                    if (i >= n || failed.load(std::memory_order_relaxed)) return;
                    try {
                        results[i] = fn(i);
                    } catch (...) {
                        std::lock_guard lock(error_mutex);
                        if (!error) error = std::current_exception();
                        failed = true;
                        return;
                    }
                }
            });
        }
    }
    if (error) std::rethrow_exception(error);
    return results;
}

} // namespace emstad
