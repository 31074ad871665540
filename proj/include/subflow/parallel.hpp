#pragma once

#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace subflow {

inline int hardware_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

/// Run fn(i) for i in [0, count) on up to `threads` worker threads.
///
/// Work items must be independent; callers that aggregate results do so
/// afterwards in index order, which keeps every reduction deterministic
/// regardless of the thread count. The lowest-index exception wins so that
/// failures are reproducible too.
inline void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
    if (count <= 0) {
        return;
    }
    const int workers = std::min(std::max(threads, 1), count);
    if (workers == 1) {
        for (int i = 0; i < count; ++i) {
            fn(i);
        }
        return;
    }

    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            // Contiguous slices: item -> thread assignment depends only on counts.
            const int lo = static_cast<int>(static_cast<long long>(count) * w / workers);
            const int hi = static_cast<int>(static_cast<long long>(count) * (w + 1) / workers);
            for (int i = lo; i < hi; ++i) {
                try {
                    fn(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(i)] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

}  // namespace subflow
