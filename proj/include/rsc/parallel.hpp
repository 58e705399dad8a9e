#pragma once

#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace rsc {

inline int default_workers() {
    unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

// Static block partition over [0, n). Each index writes only its own output
// slots, so results are identical for any worker count.
inline void parallel_for(std::int64_t n, int workers, const std::function<void(std::int64_t)>& body) {
    if (n <= 0) return;
    if (workers <= 1 || n == 1) {
        for (std::int64_t i = 0; i < n; ++i) body(i);
        return;
    }
    int w = static_cast<int>(std::min<std::int64_t>(workers, n));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(w));
    std::exception_ptr err;
    std::mutex err_mu;
    for (int k = 0; k < w; ++k) {
        std::int64_t lo = n * k / w;
        std::int64_t hi = n * (k + 1) / w;
        pool.emplace_back([&, lo, hi] {
            try {
                for (std::int64_t i = lo; i < hi; ++i) body(i);
            } catch (...) {
                std::lock_guard<std::mutex> g(err_mu);
                if (!err) err = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace rsc
