#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace semshape {

// 0 (or negative) means "use all hardware threads".
inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(chunk_index) for every chunk_index in [0, num_chunks), distributing
// chunks over `threads` workers. Chunks are handed out dynamically, so fn must
// write only to per-chunk storage; callers reduce afterwards in chunk order.
// That discipline makes every result independent of the thread count.
inline void for_each_chunk(std::size_t num_chunks, int threads,
                           const std::function<void(std::size_t)>& fn) {
    const int n_workers = std::min<std::size_t>(resolve_threads(threads), num_chunks);
    if (num_chunks == 0) return;
    if (n_workers <= 1) {
        for (std::size_t i = 0; i < num_chunks; ++i) fn(i);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;

    auto worker = [&] {
        while (!failed.load(std::memory_order_relaxed)) {
            const std::size_t i = next.fetch_add(1);
            if (i >= num_chunks) break;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                failed.store(true);
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace semshape
