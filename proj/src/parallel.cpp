#include "csdn/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace csdn {
namespace {

int read_env_threads()
{
    if (const char* env = std::getenv("CSDN_THREADS")) {
        try {
            return std::max(0, std::stoi(env));
        } catch (...) {
            return 0;
        }
    }
    return static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
}

std::atomic<int>& configured()
{
    static std::atomic<int> value{read_env_threads()};
    return value;
}

} // namespace

int thread_count() { return std::max(1, configured().load()); }

void set_thread_count(int n) { configured().store(std::max(0, n)); }

void retain_heap()
{
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body)
{
    const auto workers = std::min<std::int64_t>(thread_count(), n);
    if (workers <= 1) {
        for (std::int64_t i = 0; i < n; ++i)
            body(i);
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (std::int64_t t = 0; t < workers; ++t)
        pool.emplace_back([&] {
            for (auto i = next.fetch_add(1); i < n; i = next.fetch_add(1))
                body(i);
        });
}

} // namespace csdn
