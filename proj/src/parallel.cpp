#include "obn/parallel.hpp"

#include <atomic>
#include <cstdlib>

namespace obn {

namespace {

int default_threads() {
    if (const char* env = std::getenv("OBN_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    return static_cast<int>(std::min(hw, 4u));
}

std::atomic<int> g_threads{0}; // 0 = not yet initialized

} // namespace

int thread_count() {
    int n = g_threads.load(std::memory_order_relaxed);
    if (n == 0) {
        n = default_threads();
        g_threads.store(n, std::memory_order_relaxed);
    }
    return n;
}

void set_thread_count(int n) {
    g_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed);
}

} // namespace obn
