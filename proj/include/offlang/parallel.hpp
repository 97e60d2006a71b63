#pragma once

#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace offlang {

// Runs fn(0..n) across up to `threads` workers. Each index must be
// independent (per-index seeds), so results do not depend on thread count.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    if (threads <= 1 || n == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = std::min(threads, n);
    std::vector<std::thread> pool;
    std::mutex mu;
    std::exception_ptr first_error;
    int next = 0;
    for (int t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            while (true) {
                int i;
                {
                    std::lock_guard<std::mutex> lock(mu);
                    if (next >= n || first_error) return;
                    i = next++;
                }
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace offlang
