#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <vector>

#include "aifa/rng.hpp"

namespace aifa {

enum class Execution { Serial, Parallel };

// Set the OpenMP thread count for Parallel execution (0 keeps the default).
void set_thread_count(int threads);
int thread_count();

namespace detail {
void parallel_for_impl(std::size_t n, void (*body)(std::size_t, void*), void* ctx);
}

// body(i) for i in [0, n). Parallel runs use OpenMP with a dynamic schedule;
// the first exception thrown by any iteration is rethrown.
template <class F>
void parallel_for(std::size_t n, F&& body, Execution exec = Execution::Parallel) {
  if (exec == Execution::Serial) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  struct Ctx {
    F* f;
    std::exception_ptr err;
    std::mutex mu;
  } ctx{&body, nullptr, {}};
  detail::parallel_for_impl(
      n,
      [](std::size_t i, void* p) {
        auto* c = static_cast<Ctx*>(p);
        try {
          (*c->f)(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(c->mu);
          if (!c->err) c->err = std::current_exception();
        }
      },
      &ctx);
  if (ctx.err) std::rethrow_exception(ctx.err);
}

// results[r] = fn(r, rng_r) with rng_r seeded by derive_seed(master, r), so
// Serial and Parallel runs give identical results.
template <class F>
auto run_replicates(std::size_t n, std::uint64_t master, F&& fn, Execution exec = Execution::Parallel) {
  using R = decltype(fn(std::size_t{0}, std::declval<Rng&>()));
  std::vector<R> out(n);
  parallel_for(
      n,
      [&](std::size_t r) {
        Rng rng(derive_seed(master, r));
        out[r] = fn(r, rng);
      },
      exec);
  return out;
}

}  // namespace aifa
