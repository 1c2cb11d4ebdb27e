#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace coreflow {

// Process-wide worker cap. Default 1 keeps every run single-threaded unless the
// caller (CLI --threads / COREFLOW_THREADS) raises it.
inline std::atomic<unsigned>& thread_limit() {
    static std::atomic<unsigned> n{1};
    return n;
}

inline void set_thread_limit(unsigned n) { thread_limit().store(n == 0 ? 1u : n); }

// Chunked parallel loop. Chunk boundaries depend only on (n, chunk), never on the
// worker count, so per-chunk results reduced in chunk order are bit-identical for
// any thread limit. fn(begin, end, chunk_index).
template <class F>
void parallel_for_chunked(std::size_t n, std::size_t chunk, F&& fn) {
    if (n == 0) return;
    if (chunk == 0) chunk = 1;
    const std::size_t n_chunks = (n + chunk - 1) / chunk;
    unsigned workers = thread_limit().load();
    if (workers > n_chunks) workers = static_cast<unsigned>(n_chunks);
    if (workers <= 1) {
        for (std::size_t c = 0; c < n_chunks; ++c) {
            const std::size_t b = c * chunk;
            fn(b, std::min(n, b + chunk), c);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    auto body = [&] {
        for (;;) {
            const std::size_t c = next.fetch_add(1);
            if (c >= n_chunks) break;
            const std::size_t b = c * chunk;
            fn(b, std::min(n, b + chunk), c);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(body);
    body();
    for (auto& t : pool) t.join();
}

}  // namespace coreflow
