#pragma once

// Static-chunk parallel loop and fixed-shape reductions. Reduction order
// depends only on the number of terms, never on the worker count.

#include <algorithm>
#include <cstddef>
#include <span>
#include <thread>
#include <vector>

namespace semidpo {

template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::vector<std::jthread> pool;
  pool.reserve(w);
  for (std::size_t k = 0; k < w; ++k) {
    const std::size_t lo = n * k / w, hi = n * (k + 1) / w;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
}

/// Pairwise tree sum with a split point fixed by the length.
inline double pairwise_sum(std::span<const double> x) {
  if (x.empty()) return 0.0;
  if (x.size() == 1) return x[0];
  const std::size_t half = x.size() / 2;
  return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

/// Reduces `rows` (each of length `width`, stored contiguously) into row 0
/// with a stride-doubling tree. Overwrites the buffer.
inline void tree_reduce_rows(std::span<double> buf, std::size_t rows, std::size_t width) {
  for (std::size_t stride = 1; stride < rows; stride *= 2) {
    for (std::size_t i = 0; i + stride < rows; i += 2 * stride) {
      double* dst = buf.data() + i * width;
      const double* src = buf.data() + (i + stride) * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
    }
  }
}

}  // namespace semidpo
