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

#ifndef BFSD_RNG_HPP
#define BFSD_RNG_HPP

#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <vector>

namespace bfsd {

// Seeded generator with hand-rolled distributions. mt19937_64 output is
// pinned by the standard; std::uniform_*_distribution is not, so every
// derived draw here is implemented directly to keep runs bit-reproducible
// across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double next_unit() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + next_unit() * (hi - lo);
  }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  uint64_t below(uint64_t n) {
    if (n == 0) return 0;
    const uint64_t k = (UINT64_MAX % n + 1) % n;  // 2^64 mod n
    const uint64_t max_ok = UINT64_MAX - k;       // last value of a full cycle
    uint64_t r = gen_();
    while (r > max_ok) r = gen_();
    return r % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      const size_t j = static_cast<size_t>(below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

  // Engine state round-trips through the standard textual representation.
  void save(std::ostream& os) const { os << gen_; }
  void load(std::istream& is) { is >> gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace bfsd

#endif  // BFSD_RNG_HPP
