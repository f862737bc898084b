// Copyright 2026 The bfsd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef BFSD_PARALLEL_HPP
#define BFSD_PARALLEL_HPP

#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace bfsd {

// Process-wide worker cap for the fan-out helpers below. Results never
// depend on the thread count: every parallel site writes per-index outputs
// or reduces in index order afterwards.
unsigned max_threads();
void set_max_threads(unsigned n);

// Runs f(i) for i in [0, n), statically chunked over worker threads.
// f must only touch state owned by index i.
template <typename F>
void parallel_for(size_t n, F&& f) {
  const size_t workers =
      std::min<size_t>(n, std::max(1u, max_threads()));
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::exception_ptr first_error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const size_t chunk = (n + workers - 1) / workers;
  for (size_t w = 0; w < workers; ++w) {
    const size_t begin = w * chunk;
    const size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      try {
        for (size_t i = begin; i < end; ++i) {
          if (failed.load(std::memory_order_relaxed)) return;
          f(i);
        }
      } catch (...) {
        if (!failed.exchange(true)) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace bfsd

#endif  // BFSD_PARALLEL_HPP
