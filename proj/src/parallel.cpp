#include "aifa/parallel.hpp"

#include <omp.h>

namespace aifa {

void set_thread_count(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

int thread_count() { return omp_get_max_threads(); }

namespace detail {

void parallel_for_impl(std::size_t n, void (*body)(std::size_t, void*), void* ctx) {
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < count; ++i) body(static_cast<std::size_t>(i), ctx);
}

}  // namespace detail
}  // namespace aifa
