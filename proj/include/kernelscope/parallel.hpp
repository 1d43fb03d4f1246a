#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace kernelscope {

/// Number of worker threads used by parallel loops. 0 means hardware concurrency.
inline std::size_t& default_jobs() {
    static std::size_t jobs = 0;
    return jobs;
}

inline std::size_t resolve_jobs(std::size_t jobs) {
    if (jobs == 0) jobs = default_jobs();
    if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
    return jobs;
}

/// Calls body(i) for i in [0, n). Work is split into contiguous blocks; the
/// first exception thrown by any block is rethrown on the calling thread.
template <typename Body>
void parallel_for(std::size_t n, Body&& body, std::size_t jobs = 0) {
    jobs = std::min(resolve_jobs(jobs), n);
    if (jobs <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    workers.reserve(jobs);
    for (std::size_t w = 0; w < jobs; ++w) {
        const std::size_t begin = n * w / jobs;
        const std::size_t end = n * (w + 1) / jobs;
        workers.emplace_back([&, begin, end] {
            try {
                for (std::size_t i = begin; i < end; ++i) body(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : workers) t.join();
    if (failure) std::rethrow_exception(failure);
}

/// Fixed-size chunking of [0, n) that does not depend on the thread count, so
/// chunk-wise partial sums reduced in chunk order are bitwise reproducible.
struct Chunking {
    std::size_t n;
    std::size_t chunks;
    std::size_t begin(std::size_t c) const { return n * c / chunks; }
    std::size_t end(std::size_t c) const { return n * (c + 1) / chunks; }
};

inline Chunking make_chunking(std::size_t n, std::size_t max_chunks = 64) {
    return {n, std::max<std::size_t>(1, std::min(n, max_chunks))};
}

}  // namespace kernelscope
