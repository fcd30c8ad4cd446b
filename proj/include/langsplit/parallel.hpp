#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace langsplit {

/// Columns per block. Blocks never depend on the worker count: vectorized
/// kernels treat a column differently depending on its position in the block,
/// so a worker-dependent split would change results in the last bits.
inline constexpr std::ptrdiff_t kParallelBlock = 256;

/// Splits [0, n) into consecutive blocks of kParallelBlock indices and runs
/// fn(begin, end) once per block on up to `workers` threads. Callers write
/// only to per-index slots, so the result is independent of the worker count.
inline void parallel_for_blocks(std::ptrdiff_t n, int workers,
                                const std::function<void(std::ptrdiff_t, std::ptrdiff_t)>& fn) {
  if (n <= 0) return;
  const std::ptrdiff_t blocks = (n + kParallelBlock - 1) / kParallelBlock;
  const int w = int(std::max<std::ptrdiff_t>(1, std::min<std::ptrdiff_t>(workers, blocks)));
  auto run = [&](int t) {
    for (std::ptrdiff_t k = t; k < blocks; k += w) fn(k * kParallelBlock, std::min(n, (k + 1) * kParallelBlock));
  };
  if (w == 1) {
    run(0);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(w));
  for (int t = 0; t < w; ++t) {
    threads.emplace_back([&, t] {
      try {
        run(t);
      } catch (...) {
        errors[std::size_t(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
}

}  // namespace langsplit
