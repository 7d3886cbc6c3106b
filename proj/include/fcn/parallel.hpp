#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace fcn {

// Global worker count for element-parallel kernels. 1 = run inline.
inline std::atomic<int>& thread_count() {
    static std::atomic<int> n{1};
    return n;
}

inline void set_thread_count(int n) { thread_count().store(n < 1 ? 1 : n); }

// Splits [0,n) into contiguous chunks, one per worker. Each index is handled
// by exactly one worker and per-index arithmetic order is fixed inside fn,
// so results do not depend on the worker count.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
    const int workers = thread_count().load();
    if (workers <= 1 || n < 2) {
        fn(std::int64_t{0}, n);
        return;
    }
    const std::int64_t chunks = std::min<std::int64_t>(workers, n);
    const std::int64_t step = (n + chunks - 1) / chunks;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(chunks - 1));
    for (std::int64_t c = 1; c < chunks; ++c) {
        const std::int64_t b = c * step;
        const std::int64_t e = std::min(n, b + step);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    fn(std::int64_t{0}, std::min(n, step));
    for (auto& t : pool) t.join();
}

}  // namespace fcn
