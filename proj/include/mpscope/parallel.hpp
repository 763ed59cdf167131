#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace mpscope {

// Worker pool size: hardware concurrency, capped by the MPSCOPE_THREADS
// environment variable when set to a positive integer.
inline unsigned worker_count() {
    unsigned n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("MPSCOPE_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0 && static_cast<unsigned>(v) < n) {
            n = static_cast<unsigned>(v);
        }
    }
    return n;
}

// Runs fn(i) for i in [0, count). Results must be written into per-index
// slots by the caller so the outcome is independent of scheduling; the only
// nondeterminism allowed here is execution order. The first exception thrown
// by any task is rethrown on the calling thread.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn) {
    if (count == 0) return;
    const unsigned workers = worker_count();
    if (workers <= 1 || count == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    auto body = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count || failed.load()) return;
            try {
                fn(i);
            } catch (...) {
                if (!failed.exchange(true)) error = std::current_exception();
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    const unsigned spawned = static_cast<unsigned>(
        std::min<std::size_t>(workers, count));
    pool.reserve(spawned);
    for (unsigned t = 0; t < spawned; ++t) pool.emplace_back(body);
    for (auto& th : pool) th.join();
    if (failed.load() && error) std::rethrow_exception(error);
}

}  // namespace mpscope
