#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string_view>
#include <thread>
#include <vector>

namespace qtlab {

// Worker count: QTLAB_THREADS if set and positive, otherwise the hardware count.
inline unsigned thread_count()
{
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("QTLAB_THREADS")) {
        std::string_view sv(env);
        unsigned v = 0;
        auto [ptr, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), v);
        if (ec == std::errc() && v > 0) return std::min(v, 4 * hw);
    }
    return hw;
}

// Static block partition of [0, n). fn(begin, end) must only touch its own range.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_block = 256)
{
    unsigned workers = thread_count();
    if (workers <= 1 || n < 2 * min_block) {
        fn(std::size_t{0}, n);
        return;
    }
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, n / min_block));
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto guarded = [&](std::size_t b, std::size_t e) {
        try {
            fn(b, e);
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
        }
    };
    std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned w = 1; w < workers; ++w) {
        std::size_t b = w * chunk, e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back(guarded, b, e);
    }
    guarded(std::size_t{0}, std::min(n, chunk));
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

} // namespace qtlab
