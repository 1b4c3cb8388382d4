#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace seme {

// Thread count resolution: explicit request > SEME_THREADS > hardware.
inline unsigned resolve_thread_count(unsigned requested = 0) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("SEME_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n > 0) return static_cast<unsigned>(n);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

// Runs fn(i) for i in [0, n). Work items must be independent; callers get
// identical results at any thread count by writing to disjoint slots.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
    threads = resolve_thread_count(threads);
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace seme
