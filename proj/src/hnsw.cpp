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

#include "bfsd/hnsw.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "bfsd/errors.hpp"
#include "bfsd/rng.hpp"

namespace bfsd {

namespace {
constexpr double kNormEps = 1e-12;
}

HnswGraph::HnswGraph(const std::vector<float>& data, size_t n, size_t dim,
                     const HnswParams& params)
    : n_(n), dim_(dim), params_(params) {
  if (params_.m < 1 || params_.ef_construction < 1 || params_.ef_search < 1)
    throw ConfigError("hnsw parameters must be >= 1");
  if (data.size() != n * dim) throw DimensionError("hnsw data size mismatch");
  level_scale_ = 1.0 / std::log(static_cast<double>(std::max(2, params_.m)));

  normalized_.resize(n * dim);
  for (size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (size_t d = 0; d < dim; ++d) {
      const double x = data[i * dim + d];
      sq += x * x;
    }
    const double inv = 1.0 / (std::sqrt(sq) + kNormEps);
    for (size_t d = 0; d < dim; ++d)
      normalized_[i * dim + d] = static_cast<float>(data[i * dim + d] * inv);
  }

  levels_.resize(n);
  links_.resize(n);
  Rng rng(params_.seed);
  for (size_t i = 0; i < n; ++i) {
    double u = rng.next_unit();
    if (u <= 0.0) u = 0x1.0p-53;
    levels_[i] = static_cast<int>(std::floor(-std::log(u) * level_scale_));
    links_[i].resize(static_cast<size_t>(levels_[i]) + 1);
  }

  for (size_t i = 0; i < n; ++i) {
    const int32_t node = static_cast<int32_t>(i);
    const int level = levels_[i];
    if (entry_ < 0) {
      entry_ = node;
      max_level_ = level;
      continue;
    }
    int32_t ep = entry_;
    for (int lev = max_level_; lev > level; --lev)
      ep = greedy_descend(node, ep, lev);
    for (int lev = std::min(level, max_level_); lev >= 0; --lev) {
      std::vector<Candidate> found =
          search_layer(node, ep, params_.ef_construction, lev);
      ep = found.front().idx;
      const int m_max = lev == 0 ? 2 * params_.m : params_.m;
      std::vector<int32_t> neighbors = select_neighbors(found, params_.m);
      auto& own = links_[i][static_cast<size_t>(lev)];
      own = neighbors;
      for (int32_t nb : neighbors) {
        auto& back = links_[static_cast<size_t>(nb)][static_cast<size_t>(lev)];
        back.push_back(node);
        if (static_cast<int>(back.size()) > m_max) {
          std::vector<Candidate> pool;
          pool.reserve(back.size());
          for (int32_t b : back) pool.push_back({distance(nb, b), b});
          back = select_neighbors(std::move(pool), m_max);
        }
      }
    }
    if (level > max_level_) {
      entry_ = node;
      max_level_ = level;
    }
  }
}

double HnswGraph::distance(int32_t a, int32_t b) const {
  const float* pa = &normalized_[static_cast<size_t>(a) * dim_];
  const float* pb = &normalized_[static_cast<size_t>(b) * dim_];
  double dot = 0.0;
  for (size_t d = 0; d < dim_; ++d)
    dot += static_cast<double>(pa[d]) * static_cast<double>(pb[d]);
  return 1.0 - dot;
}

int32_t HnswGraph::greedy_descend(int32_t query, int32_t entry,
                                  int level) const {
  int32_t best = entry;
  double best_d = distance(query, best);
  bool improved = true;
  while (improved) {
    improved = false;
    for (int32_t nb : links(best, level)) {
      const double d = distance(query, nb);
      if (d < best_d || (d == best_d && nb < best)) {
        best = nb;
        best_d = d;
        improved = true;
      }
    }
  }
  return best;
}

std::vector<HnswGraph::Candidate> HnswGraph::search_layer(int32_t query,
                                                          int32_t entry,
                                                          int ef,
                                                          int level) const {
  std::vector<char> visited(n_, 0);
  std::priority_queue<Candidate, std::vector<Candidate>,
                      std::greater<Candidate>>
      frontier;  // nearest first
  std::priority_queue<Candidate> best;  // farthest first, capped at ef

  const Candidate start{distance(query, entry), entry};
  visited[static_cast<size_t>(entry)] = 1;
  frontier.push(start);
  best.push(start);

  while (!frontier.empty()) {
    const Candidate c = frontier.top();
    frontier.pop();
    if (static_cast<int>(best.size()) >= ef && best.top() < c) break;
    for (int32_t nb : links(c.idx, level)) {
      if (visited[static_cast<size_t>(nb)]) continue;
      visited[static_cast<size_t>(nb)] = 1;
      const Candidate cand{distance(query, nb), nb};
      if (static_cast<int>(best.size()) < ef || cand < best.top()) {
        frontier.push(cand);
        best.push(cand);
        if (static_cast<int>(best.size()) > ef) best.pop();
      }
    }
  }

  std::vector<Candidate> out;
  out.reserve(best.size());
  while (!best.empty()) {
    out.push_back(best.top());
    best.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<int32_t> HnswGraph::select_neighbors(
    std::vector<Candidate> candidates, int m) const {
  std::sort(candidates.begin(), candidates.end());
  std::vector<int32_t> out;
  for (const Candidate& c : candidates) {
    if (static_cast<int>(out.size()) >= m) break;
    bool keep = true;
    for (int32_t r : out) {
      if (distance(c.idx, r) < c.dist) {
        keep = false;
        break;
      }
    }
    if (keep) out.push_back(c.idx);
  }
  return out;
}

std::vector<int32_t> HnswGraph::search(int32_t query, int ef) const {
  if (query < 0 || static_cast<size_t>(query) >= n_)
    throw NotFoundError("hnsw query index out of range");
  int32_t ep = entry_;
  for (int lev = max_level_; lev >= 1; --lev)
    ep = greedy_descend(query, ep, lev);
  std::vector<Candidate> found = search_layer(query, ep, ef, 0);
  std::vector<int32_t> out;
  out.reserve(found.size());
  for (const Candidate& c : found) out.push_back(c.idx);
  return out;
}

}  // namespace bfsd
