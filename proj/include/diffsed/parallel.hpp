#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace diffsed {

// Runs fn(i) for i in [0, n) across up to n_threads workers. Callers make
// determinism trivial by writing results into slot i; the first exception is
// rethrown on the calling thread.
inline void parallel_for(size_t n, const std::function<void(size_t)>& fn, size_t n_threads) {
    if (n == 0) return;
    n_threads = std::min(n_threads == 0 ? 1 : n_threads, n);
    if (n_threads == 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> workers;
    workers.reserve(n_threads);
    for (size_t w = 0; w < n_threads; ++w) {
        workers.emplace_back([&] {
            for (;;) {
                const size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(error_mu);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : workers) t.join();
    if (error) std::rethrow_exception(error);
}

inline size_t default_threads() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 2 : hw;
}

}  // namespace diffsed
