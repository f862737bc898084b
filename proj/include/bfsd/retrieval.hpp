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
// Embed-and-search evaluation: exact and approximate k-NN over function
// embeddings, reciprocal-rank bounds for k-limited retrieval, recall@k,
// and pool-size diagnostics. Default evaluation searches the entire
// embedded set; pools exist only as a diagnostic.

#ifndef BFSD_RETRIEVAL_HPP
#define BFSD_RETRIEVAL_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bfsd/corpus.hpp"
#include "bfsd/curation.hpp"
#include "bfsd/model.hpp"

namespace bfsd {

enum class IndexKind { Exact = 0, ApproxHNSW = 1 };

const char* to_string(IndexKind kind);
IndexKind index_kind_from_string(const std::string& s);

struct IndexConfig {
  IndexKind kind = IndexKind::Exact;
  int k = 30;  // neighbors retrieved per query
  int hnsw_m = 32;
  int hnsw_ef_construction = 200;
  int hnsw_ef_search = 128;
  uint64_t hnsw_seed = 7;

  void validate() const;
};

// Embedded corpus: ids plus a row-major n x dim float matrix, with lineage
// digests. Matches the on-disk embeddings artifact exactly, so in-memory
// and loaded evaluations agree bit-for-bit.
struct EmbeddingSet {
  int dim = 0;
  std::vector<std::string> ids;
  std::vector<float> data;
  std::string corpus_digest;
  std::string checkpoint_digest;

  size_t size() const { return ids.size(); }
  std::span<const float> row(size_t i) const {
    return std::span<const float>(data.data() + i * static_cast<size_t>(dim),
                                  static_cast<size_t>(dim));
  }
  std::optional<size_t> find(const std::string& id) const;
};

struct Neighbor {
  int32_t index;    // position in the EmbeddingSet
  double distance;  // cosine distance
};

// Immutable after build; safe for unlimited concurrent queries. Neighbor
// lists are sorted ascending by (cosine distance, insertion index) and
// never contain the query itself.
class EmbeddingIndex {
 public:
  virtual ~EmbeddingIndex() = default;
  virtual std::vector<Neighbor> knn(int32_t query_index, int k) const = 0;
  virtual size_t size() const = 0;
  virtual IndexKind kind() const = 0;
};

// The set must outlive the index.
std::unique_ptr<EmbeddingIndex> build_index(const EmbeddingSet& set,
                                            const IndexConfig& config);

// Id-keyed query: up to k nearest other vectors, ascending distance.
// Throws NotFoundError when the id is not in the set.
std::vector<std::pair<std::string, double>> knn_by_id(
    const EmbeddingIndex& index, const EmbeddingSet& set,
    const std::string& query_id, int k);

struct QueryOutcome {
  std::string query_id;
  std::vector<std::pair<std::string, double>> neighbors;  // ascending
  std::optional<int> rank;  // 1-based position of first correct, within k
};

// rank present -> (1/r, 1/r); absent -> (0, 1/(k+1)).
std::pair<double, double> reciprocal_rank_bounds(const QueryOutcome& outcome,
                                                 int k);

struct EvalReport {
  int64_t n_queries = 0;
  double mrr_lower = 0.0;
  double mrr_upper = 0.0;
  std::optional<double> mrr_exact;  // exact index only (unbounded rank)
  std::map<int, double> recall;     // k in {1, 2, 5, 10}
  std::optional<int64_t> pool_size;
  IndexConfig index;
  LabelScheme scheme = LabelScheme::None;
  std::map<std::string, std::string> digests;

  std::string to_json(int indent = 2) const;
};

// Every embedded function is a query; correctness is label equality.
// Throws LabelError for any unlabeled id. With an exact index, mrr_exact is
// computed with unbounded rank (full scan). Pass `outcomes` to capture the
// per-query results.
EvalReport evaluate(const EmbeddingSet& set, const LabelTable& labels,
                    const IndexConfig& config,
                    std::vector<QueryOutcome>* outcomes = nullptr);

// Diagnostic only: ranks one uniformly chosen same-label match against
// pool_size - 1 distinct different-label distractors per sampled query.
// n_queries = 0 evaluates every eligible query.
EvalReport pool_evaluate(const EmbeddingSet& set, const LabelTable& labels,
                         int64_t pool_size, int64_t n_queries, uint64_t seed);

// Embeds subset records in canonical order. The corpus digest covers the
// serialized records actually embedded.
EmbeddingSet embed_corpus(const ModelParameters& params, const Corpus& corpus,
                          const RecordSubset& subset,
                          const std::string& checkpoint_digest = "");

// Embeddings artifact: header.json (dim, count, digests) + vectors.bin
// (little-endian 32-bit floats, corpus order) + ids.txt (one id per line).
void save_embeddings(const EmbeddingSet& set, const std::string& dir);
EmbeddingSet load_embeddings(const std::string& dir);

}  // namespace bfsd

#endif  // BFSD_RETRIEVAL_HPP
