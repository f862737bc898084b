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

#include "bfsd/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "bfsd/errors.hpp"
#include "bfsd/hnsw.hpp"
#include "bfsd/parallel.hpp"
#include "bfsd/rng.hpp"

namespace bfsd {

namespace {

using nlohmann::json;

constexpr double kCosineEps = 1e-12;
const int kRecallKs[] = {1, 2, 5, 10};

// Same formula as training::cosine_distance, evaluated on the float32
// vectors of the embeddings artifact so file-based and in-memory
// evaluations agree exactly.
double cosine_f(std::span<const float> u, std::span<const float> v) {
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    const double a = u[i];
    const double b = v[i];
    dot += a * b;
    uu += a * a;
    vv += b * b;
  }
  return 1.0 - dot / ((std::sqrt(uu) + kCosineEps) *
                      (std::sqrt(vv) + kCosineEps));
}

bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance ||
         (a.distance == b.distance && a.index < b.index);
}

class ExactIndex : public EmbeddingIndex {
 public:
  explicit ExactIndex(const EmbeddingSet& set) : set_(set) {}

  std::vector<Neighbor> knn(int32_t query_index, int k) const override {
    if (query_index < 0 || static_cast<size_t>(query_index) >= set_.size())
      throw NotFoundError("query index out of range");
    std::vector<Neighbor> all;
    all.reserve(set_.size() - 1);
    const auto q = set_.row(static_cast<size_t>(query_index));
    for (size_t j = 0; j < set_.size(); ++j) {
      if (static_cast<int32_t>(j) == query_index) continue;
      all.push_back({static_cast<int32_t>(j), cosine_f(q, set_.row(j))});
    }
    const size_t keep = std::min<size_t>(static_cast<size_t>(k), all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<long>(keep),
                      all.end(), neighbor_less);
    all.resize(keep);
    return all;
  }

  size_t size() const override { return set_.size(); }
  IndexKind kind() const override { return IndexKind::Exact; }

 private:
  const EmbeddingSet& set_;
};

class HnswIndex : public EmbeddingIndex {
 public:
  HnswIndex(const EmbeddingSet& set, const IndexConfig& config)
      : set_(set),
        config_(config),
        graph_(set.data, set.size(), static_cast<size_t>(set.dim),
               HnswParams{config.hnsw_m, config.hnsw_ef_construction,
                          config.hnsw_ef_search, config.hnsw_seed}) {}

  std::vector<Neighbor> knn(int32_t query_index, int k) const override {
    if (query_index < 0 || static_cast<size_t>(query_index) >= set_.size())
      throw NotFoundError("query index out of range");
    // +1 leaves room for the query itself among the candidates.
    const int ef = std::max(config_.hnsw_ef_search, k + 1);
    std::vector<int32_t> found = graph_.search(query_index, ef);
    const auto q = set_.row(static_cast<size_t>(query_index));
    std::vector<Neighbor> out;
    out.reserve(found.size());
    for (int32_t idx : found) {
      if (idx == query_index) continue;
      out.push_back({idx, cosine_f(q, set_.row(static_cast<size_t>(idx)))});
    }
    // Candidates are re-sorted by true distance, so the approximation only
    // affects which candidates were found, not their ordering.
    std::sort(out.begin(), out.end(), neighbor_less);
    if (out.size() > static_cast<size_t>(k))
      out.resize(static_cast<size_t>(k));
    return out;
  }

  size_t size() const override { return set_.size(); }
  IndexKind kind() const override { return IndexKind::ApproxHNSW; }

 private:
  const EmbeddingSet& set_;
  IndexConfig config_;
  HnswGraph graph_;
};

std::vector<int32_t> label_per_row(const EmbeddingSet& set,
                                   const LabelTable& labels) {
  std::vector<int32_t> out(set.size());
  for (size_t i = 0; i < set.size(); ++i) {
    auto it = labels.label_of.find(set.ids[i]);
    if (it == labels.label_of.end())
      throw LabelError("unlabeled id: " + set.ids[i]);
    out[i] = it->second;
  }
  return out;
}

void append_f32_le(std::string& out, float v) {
  const uint32_t u = std::bit_cast<uint32_t>(v);
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

float read_f32_le(const char* p) {
  uint32_t u = 0;
  for (int i = 0; i < 4; ++i)
    u |= static_cast<uint32_t>(static_cast<uint8_t>(p[i])) << (8 * i);
  return std::bit_cast<float>(u);
}

std::string vectors_blob(const EmbeddingSet& set) {
  std::string blob;
  blob.reserve(set.data.size() * 4);
  for (float v : set.data) append_f32_le(blob, v);
  return blob;
}

}  // namespace

const char* to_string(IndexKind kind) {
  return kind == IndexKind::Exact ? "Exact" : "ApproxHNSW";
}

IndexKind index_kind_from_string(const std::string& s) {
  if (s == "Exact") return IndexKind::Exact;
  if (s == "ApproxHNSW") return IndexKind::ApproxHNSW;
  throw SchemaError("unknown index kind \"" + s + "\"");
}

void IndexConfig::validate() const {
  if (k < 1) throw ConfigError("index k must be >= 1");
  if (hnsw_m < 1 || hnsw_ef_construction < 1 || hnsw_ef_search < 1)
    throw ConfigError("hnsw parameters must be >= 1");
}

std::optional<size_t> EmbeddingSet::find(const std::string& id) const {
  for (size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return i;
  return std::nullopt;
}

std::unique_ptr<EmbeddingIndex> build_index(const EmbeddingSet& set,
                                            const IndexConfig& config) {
  config.validate();
  if (set.size() == 0) throw EmptyCorpusError("cannot index zero vectors");
  if (set.data.size() != set.size() * static_cast<size_t>(set.dim))
    throw DimensionError("embedding matrix size mismatch");
  if (config.kind == IndexKind::Exact)
    return std::make_unique<ExactIndex>(set);
  return std::make_unique<HnswIndex>(set, config);
}

std::vector<std::pair<std::string, double>> knn_by_id(
    const EmbeddingIndex& index, const EmbeddingSet& set,
    const std::string& query_id, int k) {
  const auto pos = set.find(query_id);
  if (!pos) throw NotFoundError("unknown id: " + query_id);
  std::vector<std::pair<std::string, double>> out;
  for (const Neighbor& nb : index.knn(static_cast<int32_t>(*pos), k))
    out.emplace_back(set.ids[static_cast<size_t>(nb.index)], nb.distance);
  return out;
}

std::pair<double, double> reciprocal_rank_bounds(const QueryOutcome& outcome,
                                                 int k) {
  if (outcome.rank) {
    const double rr = 1.0 / static_cast<double>(*outcome.rank);
    return {rr, rr};
  }
  return {0.0, 1.0 / static_cast<double>(k + 1)};
}

EvalReport evaluate(const EmbeddingSet& set, const LabelTable& labels,
                    const IndexConfig& config,
                    std::vector<QueryOutcome>* outcomes) {
  config.validate();
  const std::vector<int32_t> label = label_per_row(set, labels);
  const std::unique_ptr<EmbeddingIndex> index = build_index(set, config);
  const size_t n = set.size();
  const bool exact = config.kind == IndexKind::Exact;

  struct PerQuery {
    QueryOutcome outcome;
    double lower = 0.0, upper = 0.0;
    double exact_rr = 0.0;
    bool hit[4] = {false, false, false, false};
  };
  std::vector<PerQuery> per_query(n);

  parallel_for(n, [&](size_t q) {
    PerQuery& pq = per_query[q];
    // The exact path retrieves everything once: the first k are the
    // k-limited outcome and the full list gives the unbounded rank.
    const std::vector<Neighbor> neighbors =
        index->knn(static_cast<int32_t>(q),
                   exact ? static_cast<int>(n) : config.k);
    pq.outcome.query_id = set.ids[q];
    const size_t shown = std::min<size_t>(static_cast<size_t>(config.k),
                                          neighbors.size());
    pq.outcome.neighbors.reserve(shown);
    for (size_t r = 0; r < neighbors.size(); ++r) {
      const bool correct =
          label[static_cast<size_t>(neighbors[r].index)] == label[q];
      if (r < shown) {
        pq.outcome.neighbors.emplace_back(
            set.ids[static_cast<size_t>(neighbors[r].index)],
            neighbors[r].distance);
        if (correct && !pq.outcome.rank)
          pq.outcome.rank = static_cast<int>(r + 1);
      }
      if (correct && exact && pq.exact_rr == 0.0)
        pq.exact_rr = 1.0 / static_cast<double>(r + 1);
    }
    const auto [lo, hi] = reciprocal_rank_bounds(pq.outcome, config.k);
    pq.lower = lo;
    pq.upper = hi;
    for (size_t ki = 0; ki < 4; ++ki)
      if (pq.outcome.rank && *pq.outcome.rank <= kRecallKs[ki])
        pq.hit[ki] = true;
  });

  EvalReport report;
  report.n_queries = static_cast<int64_t>(n);
  report.index = config;
  report.scheme = labels.scheme;
  double sum_lower = 0.0, sum_upper = 0.0, sum_exact = 0.0;
  int64_t hits[4] = {0, 0, 0, 0};
  for (const PerQuery& pq : per_query) {
    sum_lower += pq.lower;
    sum_upper += pq.upper;
    sum_exact += pq.exact_rr;
    for (size_t ki = 0; ki < 4; ++ki)
      if (pq.hit[ki]) ++hits[ki];
  }
  report.mrr_lower = sum_lower / static_cast<double>(n);
  report.mrr_upper = sum_upper / static_cast<double>(n);
  if (exact) report.mrr_exact = sum_exact / static_cast<double>(n);
  for (size_t ki = 0; ki < 4; ++ki)
    report.recall[kRecallKs[ki]] =
        static_cast<double>(hits[ki]) / static_cast<double>(n);
  report.digests["embeddings"] = sha256(vectors_blob(set)).hex();
  report.digests["corpus"] = set.corpus_digest;
  report.digests["checkpoint"] = set.checkpoint_digest;
  if (outcomes) {
    outcomes->clear();
    outcomes->reserve(n);
    for (PerQuery& pq : per_query)
      outcomes->push_back(std::move(pq.outcome));
  }
  return report;
}

EvalReport pool_evaluate(const EmbeddingSet& set, const LabelTable& labels,
                         int64_t pool_size, int64_t n_queries, uint64_t seed) {
  if (pool_size < 1) throw ConfigError("pool size must be >= 1");
  const std::vector<int32_t> label = label_per_row(set, labels);
  const size_t n = set.size();

  std::vector<std::vector<int32_t>> by_label;
  for (size_t i = 0; i < n; ++i) {
    const size_t l = static_cast<size_t>(label[i]);
    if (by_label.size() <= l) by_label.resize(l + 1);
    by_label[l].push_back(static_cast<int32_t>(i));
  }

  std::vector<int32_t> eligible;
  for (size_t i = 0; i < n; ++i)
    if (by_label[static_cast<size_t>(label[i])].size() >= 2)
      eligible.push_back(static_cast<int32_t>(i));
  if (eligible.empty())
    throw PoolError("no query has a same-label partner");

  Rng rng(seed);
  std::vector<int32_t> queries;
  if (n_queries <= 0 ||
      static_cast<size_t>(n_queries) >= eligible.size()) {
    queries = eligible;
  } else {
    std::vector<int32_t> pool = eligible;
    for (int64_t t = 0; t < n_queries; ++t) {
      const size_t j = static_cast<size_t>(t) +
                       static_cast<size_t>(rng.below(
                           pool.size() - static_cast<size_t>(t)));
      std::swap(pool[static_cast<size_t>(t)], pool[j]);
    }
    pool.resize(static_cast<size_t>(n_queries));
    queries = std::move(pool);
  }

  double sum_rr = 0.0;
  int64_t hits[4] = {0, 0, 0, 0};
  for (int32_t q : queries) {
    const auto& partners = by_label[static_cast<size_t>(label[q])];
    // Uniform same-label match other than the query itself.
    int32_t match = q;
    {
      const size_t others = partners.size() - 1;
      size_t pick = static_cast<size_t>(rng.below(others));
      for (int32_t p : partners) {
        if (p == q) continue;
        if (pick == 0) {
          match = p;
          break;
        }
        --pick;
      }
    }

    std::vector<int32_t> distractors;
    distractors.reserve(n);
    for (size_t j = 0; j < n; ++j)
      if (label[j] != label[q]) distractors.push_back(static_cast<int32_t>(j));
    const size_t need = static_cast<size_t>(pool_size - 1);
    if (distractors.size() < need)
      throw PoolError("pool size " + std::to_string(pool_size) + " needs " +
                      std::to_string(need) + " distractors, only " +
                      std::to_string(distractors.size()) + " available");
    for (size_t t = 0; t < need; ++t) {
      const size_t j =
          t + static_cast<size_t>(rng.below(distractors.size() - t));
      std::swap(distractors[t], distractors[j]);
    }
    distractors.resize(need);

    const auto qrow = set.row(static_cast<size_t>(q));
    const double d_match =
        cosine_f(qrow, set.row(static_cast<size_t>(match)));
    int64_t rank = 1;
    for (int32_t d : distractors) {
      const double dd = cosine_f(qrow, set.row(static_cast<size_t>(d)));
      if (dd < d_match || (dd == d_match && d < match)) ++rank;
    }
    sum_rr += 1.0 / static_cast<double>(rank);
    for (size_t ki = 0; ki < 4; ++ki)
      if (rank <= kRecallKs[ki]) ++hits[ki];
  }

  EvalReport report;
  report.n_queries = static_cast<int64_t>(queries.size());
  report.pool_size = pool_size;
  report.scheme = labels.scheme;
  const double mrr = sum_rr / static_cast<double>(queries.size());
  report.mrr_lower = mrr;
  report.mrr_upper = mrr;
  report.mrr_exact = mrr;
  for (size_t ki = 0; ki < 4; ++ki)
    report.recall[kRecallKs[ki]] = static_cast<double>(hits[ki]) /
                                   static_cast<double>(queries.size());
  report.digests["embeddings"] = sha256(vectors_blob(set)).hex();
  report.digests["corpus"] = set.corpus_digest;
  report.digests["checkpoint"] = set.checkpoint_digest;
  return report;
}

EmbeddingSet embed_corpus(const ModelParameters& params, const Corpus& corpus,
                          const RecordSubset& subset,
                          const std::string& checkpoint_digest) {
  EmbeddingSet set;
  set.dim = params.config.output_dim;
  set.checkpoint_digest = checkpoint_digest;
  set.ids.reserve(subset.size());
  set.data.assign(subset.size() * static_cast<size_t>(set.dim), 0.0f);

  std::string corpus_bytes;
  for (size_t pos : subset) {
    set.ids.push_back(corpus.at(pos).id);
    corpus_bytes += serialize_record(corpus.at(pos));
    corpus_bytes += '\n';
  }
  set.corpus_digest = sha256(corpus_bytes).hex();

  parallel_for(subset.size(), [&](size_t i) {
    Embedding e;
    try {
      e = forward(params, std::span<const uint8_t>(corpus.at(subset[i]).bytes));
    } catch (const EmptyFunctionError& err) {
      throw EmptyFunctionError("record " + corpus.at(subset[i]).id + ": " +
                               err.what());
    }
    for (size_t d = 0; d < static_cast<size_t>(set.dim); ++d)
      set.data[i * static_cast<size_t>(set.dim) + d] =
          static_cast<float>(e[d]);
  });
  return set;
}

void save_embeddings(const EmbeddingSet& set, const std::string& dir) {
  std::filesystem::create_directories(dir);
  json header;
  header["format_version"] = 1;
  header["dim"] = set.dim;
  header["count"] = set.size();
  header["corpus_digest"] = set.corpus_digest;
  header["checkpoint_digest"] = set.checkpoint_digest;
  {
    std::ofstream out(dir + "/header.json", std::ios::binary);
    if (!out) throw IoError("cannot write embeddings header: " + dir);
    out << header.dump(2) << '\n';
  }
  {
    const std::string blob = vectors_blob(set);
    std::ofstream out(dir + "/vectors.bin", std::ios::binary);
    if (!out) throw IoError("cannot write embeddings vectors: " + dir);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("write failed: " + dir + "/vectors.bin");
  }
  {
    std::ofstream out(dir + "/ids.txt", std::ios::binary);
    if (!out) throw IoError("cannot write embeddings ids: " + dir);
    for (const auto& id : set.ids) out << id << '\n';
    if (!out) throw IoError("write failed: " + dir + "/ids.txt");
  }
}

EmbeddingSet load_embeddings(const std::string& dir) {
  EmbeddingSet set;
  std::ifstream hin(dir + "/header.json", std::ios::binary);
  if (!hin) throw IoError("cannot open embeddings header: " + dir);
  json header;
  try {
    hin >> header;
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("bad embeddings header: ") + e.what());
  }
  if (header.value("format_version", -1) != 1)
    throw VersionError("unsupported embeddings format_version");
  set.dim = header.at("dim").get<int>();
  const size_t count = header.at("count").get<size_t>();
  set.corpus_digest = header.at("corpus_digest").get<std::string>();
  set.checkpoint_digest = header.at("checkpoint_digest").get<std::string>();

  {
    std::ifstream in(dir + "/ids.txt", std::ios::binary);
    if (!in) throw IoError("cannot open embeddings ids: " + dir);
    std::string line;
    while (std::getline(in, line)) set.ids.push_back(line);
  }
  if (set.ids.size() != count)
    throw SchemaError("embeddings id count mismatch: header says " +
                      std::to_string(count) + ", ids.txt has " +
                      std::to_string(set.ids.size()));

  std::ifstream bin(dir + "/vectors.bin", std::ios::binary);
  if (!bin) throw IoError("cannot open embeddings vectors: " + dir);
  std::string blob((std::istreambuf_iterator<char>(bin)),
                   std::istreambuf_iterator<char>());
  if (blob.size() != count * static_cast<size_t>(set.dim) * 4)
    throw SchemaError("embeddings vectors.bin size mismatch");
  set.data.resize(count * static_cast<size_t>(set.dim));
  for (size_t i = 0; i < set.data.size(); ++i)
    set.data[i] = read_f32_le(blob.data() + i * 4);
  return set;
}

std::string EvalReport::to_json(int indent) const {
  json obj;
  obj["format_version"] = 1;
  obj["n_queries"] = n_queries;
  obj["mrr_lower"] = mrr_lower;
  obj["mrr_upper"] = mrr_upper;
  if (mrr_exact)
    obj["mrr_exact"] = *mrr_exact;
  else
    obj["mrr_exact"] = nullptr;
  json rec;
  for (const auto& [k, v] : recall) rec[std::to_string(k)] = v;
  obj["recall"] = rec;
  if (pool_size)
    obj["pool_size"] = *pool_size;
  else
    obj["pool_size"] = nullptr;
  obj["index"] = {{"kind", to_string(index.kind)},
                  {"k", index.k},
                  {"hnsw_m", index.hnsw_m},
                  {"hnsw_ef_construction", index.hnsw_ef_construction},
                  {"hnsw_ef_search", index.hnsw_ef_search},
                  {"hnsw_seed", index.hnsw_seed}};
  obj["scheme"] = to_string(scheme);
  obj["digests"] = digests;
  return obj.dump(indent);
}

}  // namespace bfsd
