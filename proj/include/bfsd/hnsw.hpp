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
//
// Navigable small-world graph over length-normalized vectors under cosine
// distance. Construction is single-writer and deterministic (seeded level
// draws, tie-stable heaps); after build the structure is immutable and
// supports unlimited concurrent searches.

#ifndef BFSD_HNSW_HPP
#define BFSD_HNSW_HPP

#include <cstdint>
#include <vector>

namespace bfsd {

struct HnswParams {
  int m = 32;                // links per node on upper layers (2m on layer 0)
  int ef_construction = 200;
  int ef_search = 128;
  uint64_t seed = 7;
};

class HnswGraph {
 public:
  // data is n x dim row-major; vectors are normalized internally with an
  // epsilon guard, so search distances are cosine distances.
  HnswGraph(const std::vector<float>& data, size_t n, size_t dim,
            const HnswParams& params);

  // Up to ef candidate indices for the stored vector `query`, sorted by
  // (internal distance, index). The query point itself is included when
  // found; callers drop it and re-rank by true distance.
  std::vector<int32_t> search(int32_t query, int ef) const;

  size_t size() const { return n_; }

 private:
  struct Candidate {
    double dist;
    int32_t idx;
    bool operator<(const Candidate& o) const {
      return dist < o.dist || (dist == o.dist && idx < o.idx);
    }
    bool operator>(const Candidate& o) const { return o < *this; }
  };

  double distance(int32_t a, int32_t b) const;
  int32_t greedy_descend(int32_t query, int32_t entry, int level) const;
  std::vector<Candidate> search_layer(int32_t query, int32_t entry, int ef,
                                      int level) const;
  std::vector<int32_t> select_neighbors(std::vector<Candidate> candidates,
                                        int m) const;
  const std::vector<int32_t>& links(int32_t node, int level) const {
    return links_[static_cast<size_t>(node)][static_cast<size_t>(level)];
  }

  size_t n_ = 0;
  size_t dim_ = 0;
  HnswParams params_;
  double level_scale_ = 1.0;  // 1 / ln(m)
  std::vector<float> normalized_;
  std::vector<int> levels_;
  std::vector<std::vector<std::vector<int32_t>>> links_;  // [node][level]
  int32_t entry_ = -1;
  int max_level_ = -1;
};

}  // namespace bfsd

#endif  // BFSD_HNSW_HPP
