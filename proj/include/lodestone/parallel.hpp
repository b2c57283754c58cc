// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace lodestone {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be
/// written into caller-owned slots indexed by i, which makes the outcome
/// independent of scheduling; the first exception is rethrown after all
/// threads join.
template <typename Fn>
void parallel_for(size_t n, int workers, Fn&& fn) {
    if (workers < 1) workers = 1;
    if (workers == 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto body = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> threads;
    const size_t count = std::min<size_t>(static_cast<size_t>(workers), n);
    threads.reserve(count);
    for (size_t t = 0; t < count; ++t) threads.emplace_back(body);
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace lodestone
