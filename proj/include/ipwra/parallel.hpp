#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ipwra {

// IPWRA_THREADS env var, falling back to the hardware thread count
inline int thread_budget() {
    if (const char* s = std::getenv("IPWRA_THREADS")) {
        const int v = std::atoi(s);
        if (v >= 1) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
}

// Runs f(i) for i in [0, n).  Dynamic scheduling over an atomic counter;
// callers must write results into per-index slots so the schedule cannot
// change the outcome.  The first exception is rethrown after all workers
// stop picking up new work.
template <class F>
inline void parallel_for(long long n, F&& f, int threads = thread_budget()) {
    if (n <= 0) return;
    if (threads <= 1 || n == 1) {
        for (long long i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<long long> next{0};
    std::atomic<bool> abort{false};
    std::exception_ptr err;
    std::mutex err_mu;
    auto worker = [&]() {
        for (;;) {
            if (abort.load(std::memory_order_relaxed)) return;
            const long long i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= n) return;
            try {
                f(i);
            } catch (...) {
                {
                    std::lock_guard<std::mutex> lk(err_mu);
                    if (!err) err = std::current_exception();
                }
                abort.store(true, std::memory_order_relaxed);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads - 1));
    for (int t = 0; t < threads - 1; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

} // namespace ipwra
