#pragma once

#include <cstdint>
#include <functional>

namespace csdn {

/// Number of worker threads kernels may use. Read once from CSDN_THREADS;
/// 0 or 1 means single-threaded deterministic mode. Defaults to the
/// hardware concurrency when unset.
int thread_count();

/// Overrides the value read from the environment (tests, CLI).
void set_thread_count(int n);

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// OS, so repeated forward passes do not page-fault their scratch memory.
/// No-op outside glibc.
void retain_heap();

/// Runs body(i) for i in [0, n). Iterations must write disjoint outputs.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body);

} // namespace csdn
