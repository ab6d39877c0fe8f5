#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace protoshot {

// Worker count: `requested` if nonzero, else PROTOSHOT_THREADS, else hardware concurrency.
unsigned resolve_threads(unsigned requested);

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index runs exactly
// once. If any call throws, the exception from the lowest failing index is
// rethrown after all workers stop, so failures are reported deterministically.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            if (failed.load(std::memory_order_relaxed)) break;
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
                failed = true;
            }
        }
    };

    const std::size_t workers = std::min<std::size_t>(std::max(1u, threads), n);
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace protoshot
