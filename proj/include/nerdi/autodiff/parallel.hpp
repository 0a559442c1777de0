#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace nerdi {

namespace detail {
inline std::atomic<std::size_t>& worker_count_storage() {
    static std::atomic<std::size_t> count{1};
    return count;
}
}  // namespace detail

/// Number of threads used by parallel kernels. Results never depend on it.
inline std::size_t worker_count() { return detail::worker_count_storage().load(); }
inline void set_worker_count(std::size_t n) { detail::worker_count_storage().store(std::max<std::size_t>(n, 1)); }

/// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is owned by exactly
/// one chunk, so kernels that write disjoint outputs stay bit-identical for any worker count.
template <class Fn>
void parallel_for(std::size_t n, std::size_t min_chunk, Fn&& fn) {
    const std::size_t workers = std::min(worker_count(), (n + min_chunk - 1) / std::max<std::size_t>(min_chunk, 1));
    if (workers <= 1) {
        if (n) fn(std::size_t{0}, n);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t b = w * chunk;
        const std::size_t e = std::min(n, b + chunk);
        if (b >= e) break;
        threads.emplace_back([&, w, b, e] {
            try {
                fn(b, e);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& err : errors) {
        if (err) std::rethrow_exception(err);
    }
}

}  // namespace nerdi
