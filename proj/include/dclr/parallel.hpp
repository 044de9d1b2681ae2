#pragma once

// Device- and user-level loops run through for_each_index so that the serial
// path stays available as the reference for the OpenMP one. Every kernel
// routed here writes only to its own slot, so both paths are bit-identical.

#include <cstddef>
#include <exception>
#include <mutex>
#include <omp.h>

namespace dclr {

enum class Execution { kSerial, kParallel };

struct ExecPolicy {
  Execution mode = Execution::kSerial;
  int threads = 0;  // 0: OpenMP default

  static ExecPolicy serial() { return {}; }
  static ExecPolicy parallel(int threads = 0) { return {Execution::kParallel, threads}; }
};

template <class Fn>
void for_each_index(std::size_t n, const ExecPolicy& policy, Fn&& fn) {
  if (policy.mode == Execution::kSerial || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  // Exceptions cannot cross the parallel region; keep the one from the lowest
  // index so the reported failure matches the serial path.
  std::exception_ptr first;
  std::size_t first_index = n;
  std::mutex guard;
  const int threads = policy.threads > 0 ? policy.threads : omp_get_max_threads();
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (long long i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard<std::mutex> lock(guard);
      if (static_cast<std::size_t>(i) < first_index) {
        first_index = static_cast<std::size_t>(i);
        first = std::current_exception();
      }
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace dclr
