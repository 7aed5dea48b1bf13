#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace obn {

/// Worker count for batch-parallel kernels. Thread count never changes
/// numeric results: parallel sections only touch disjoint outputs, and every
/// floating-point reduction stays in serial index order.
int thread_count();
void set_thread_count(int n);

/// Run fn(begin, end) over a static contiguous partition of [0, n).
/// Falls back to a plain call when n is small or one thread is configured.
inline void parallel_for(int n, const std::function<void(int, int)>& fn) {
    int workers = std::min(thread_count(), n);
    if (workers <= 1 || n < 2) {
        if (n > 0) fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers) - 1);
    int chunk = (n + workers - 1) / workers;
    for (int t = 1; t < workers; ++t) {
        int b = t * chunk, e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back(fn, b, e);
    }
    fn(0, std::min(n, chunk));
    for (auto& th : pool) th.join();
}

} // namespace obn
