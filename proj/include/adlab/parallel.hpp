#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace adlab {

// Worker count for sweep fan-out: the ADLAB_WORKERS environment variable when
// set (clamped to >= 1), otherwise 1 (sequential). Results are stored by index
// regardless, so the worker count never changes any output.
inline int default_workers() {
    if (const char* env = std::getenv("ADLAB_WORKERS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

// Run f(i) for i in [0, n) on up to `workers` threads. Each job must only
// write to its own slot. The first exception thrown by any job is rethrown
// on the calling thread after all jobs finish.
template <typename F>
void parallel_for_index(std::size_t n, int workers, F&& f) {
    if (n == 0) return;
    if (workers <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                f(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t count = std::min<std::size_t>(std::size_t(workers), n);
    pool.reserve(count);
    for (std::size_t i = 0; i < count; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace adlab
