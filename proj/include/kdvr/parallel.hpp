#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace kdvr {

// Runs fn(worker, begin, end) over [0, n) split into `workers` contiguous
// chunks. Chunk boundaries depend only on (n, workers), so any reduction
// that merges per-worker results in worker order is reproducible for a
// fixed worker count.
template <typename Fn>
void parallel_chunks(size_t n, int workers, Fn&& fn) {
  if (workers < 1) workers = 1;
  if (n == 0) return;
  size_t w = static_cast<size_t>(workers);
  if (w > n) w = n;
  if (w == 1) {
    fn(0, size_t{0}, n);
    return;
  }
  size_t base = n / w, rem = n % w;
  std::vector<std::thread> threads;
  threads.reserve(w);
  size_t begin = 0;
  for (size_t i = 0; i < w; ++i) {
    size_t len = base + (i < rem ? 1 : 0);
    size_t end = begin + len;
    threads.emplace_back([&fn, i, begin, end] { fn(i, begin, end); });
    begin = end;
  }
  for (auto& t : threads) t.join();
}

}  // namespace kdvr
