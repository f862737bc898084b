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

#include "bfsd/parallel.hpp"

namespace bfsd {

namespace {
std::atomic<unsigned> g_max_threads{0};  // 0 = use hardware concurrency
}

unsigned max_threads() {
  const unsigned n = g_max_threads.load(std::memory_order_relaxed);
  if (n != 0) return n;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

void set_max_threads(unsigned n) {
  g_max_threads.store(n, std::memory_order_relaxed);
}

}  // namespace bfsd
