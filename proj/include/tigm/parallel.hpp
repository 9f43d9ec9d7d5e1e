#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace tigm {

/// How E-step work is split across threads.
///
/// In deterministic mode the data are cut into a fixed number of chunks that
/// does not depend on the thread count, and partial statistics are merged in
/// chunk order, so results are bit-identical for any number of threads.
struct ParallelConfig {
    bool deterministic = true;
    std::size_t threads = 0;  // 0: TIGM_THREADS or hardware concurrency

    static constexpr std::size_t kDeterministicChunks = 16;

    std::size_t resolved_threads() const {
        if (threads > 0) return threads;
        if (const char* env = std::getenv("TIGM_THREADS")) {
            const long v = std::strtol(env, nullptr, 10);
            if (v > 0) return static_cast<std::size_t>(v);
        }
        return std::max<std::size_t>(1, std::thread::hardware_concurrency());
    }

    std::size_t chunk_count(std::size_t items) const {
        const std::size_t chunks = deterministic ? kDeterministicChunks : resolved_threads();
        return std::max<std::size_t>(1, std::min(chunks, items));
    }
};

/// Runs body(chunk, begin, end) over `chunks` contiguous ranges of [0, items).
inline void parallel_chunks(std::size_t items, std::size_t chunks, std::size_t threads,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& body) {
    auto range = [&](std::size_t c) {
        return std::pair{items * c / chunks, items * (c + 1) / chunks};
    };
    threads = std::min(threads, chunks);
    if (threads <= 1) {
        for (std::size_t c = 0; c < chunks; ++c) {
            auto [b, e] = range(c);
            body(c, b, e);
        }
        return;
    }
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t c = t; c < chunks; c += threads) {
                try {
                    auto [b, e] = range(c);
                    body(c, b, e);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace tigm
