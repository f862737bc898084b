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
// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Each criterion is self-contained and seeded.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bfsd/corpus.hpp"
#include "bfsd/curation.hpp"
#include "bfsd/errors.hpp"
#include "bfsd/model.hpp"
#include "bfsd/parallel.hpp"
#include "bfsd/retrieval.hpp"
#include "bfsd/rng.hpp"
#include "bfsd/training.hpp"
#include "test_util.hpp"

using namespace bfsd;
using namespace bfsd::test;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

#define REQUIRE_OK(cond, message)                         \
  do {                                                    \
    if (!(cond)) return Outcome{false, (message)};        \
  } while (0)

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------
// Criterion 1: analytic gradients of the full triplet loss vs central
// finite differences on >= 20 random small instances.

// Loss recomputed serially through the public forward path; used only as
// the finite-difference functional.
double loss_only(const ModelParameters& params,
                 const std::vector<std::span<const uint8_t>>& items,
                 const std::vector<Triplet>& triplets, double margin) {
  std::vector<Embedding> embs;
  embs.reserve(items.size());
  for (const auto& item : items) embs.push_back(forward(params, item));
  double loss = 0.0;
  for (const auto& t : triplets) {
    const double d_ap =
        cosine_distance(embs[size_t(t.anchor)], embs[size_t(t.positive)]);
    const double d_an =
        cosine_distance(embs[size_t(t.anchor)], embs[size_t(t.negative)]);
    loss += triplet_hinge(d_ap, d_an, margin);
  }
  return loss / double(triplets.size());
}

// Smallest gap between the pooled winner and the runner-up across all
// channels and items; finite differences need this comfortably above the
// perturbation-induced activation shift.
double min_pool_gap(const ModelParameters& params,
                    const std::vector<std::span<const uint8_t>>& items) {
  double min_gap = 1e300;
  for (const auto& item : items) {
    const auto tokens = pad_and_truncate(item, params.config);
    const size_t W = size_t(params.config.window);
    const size_t E = size_t(params.config.embed_dim);
    const size_t C = size_t(params.config.channels);
    const size_t n_windows = tokens.size() / W;
    if (n_windows < 2) continue;
    for (size_t c = 0; c < C; ++c) {
      double best = -1e300, second = -1e300;
      for (size_t t = 0; t < n_windows; ++t) {
        double a = params.conv_b[c], g = params.gate_b[c];
        for (size_t j = 0; j < W; ++j)
          for (size_t d = 0; d < E; ++d) {
            const double x =
                params.embedding[size_t(tokens[t * W + j]) * E + d];
            a += x * double(params.conv_w[c * W * E + j * E + d]);
            g += x * double(params.gate_w[c * W * E + j * E + d]);
          }
        const double gated = a / (1.0 + std::exp(-g));
        if (gated > best) {
          second = best;
          best = gated;
        } else if (gated > second) {
          second = gated;
        }
      }
      min_gap = std::min(min_gap, best - second);
    }
  }
  return min_gap;
}

Outcome criterion_gradients() {
  ModelConfig cfg;
  cfg.channels = 4;
  cfg.output_dim = 8;
  cfg.max_len = 64;

  // Step of 1e-5 magnitude, dyadic so float32 parameters perturb
  // symmetrically; the quotient divides by the measured width regardless.
  const double h = 0x1.0p-17;
  double worst = 0.0;
  int instances_done = 0;
  uint64_t seed = 1000;
  while (instances_done < 20) {
    ++seed;
    Rng rng(seed);
    const ModelParameters params = init_params(cfg, rng.next_u64());

    std::vector<std::vector<uint8_t>> payloads;
    std::vector<int32_t> labels;
    const size_t pairs = 3;
    for (size_t p = 0; p < pairs; ++p) {
      const auto base = random_bytes(rng, 8, 64);
      auto variant = base;
      variant[rng.below(variant.size())] ^= uint8_t(1 + rng.below(255));
      payloads.push_back(base);
      payloads.push_back(variant);
      labels.push_back(int32_t(p));
      labels.push_back(int32_t(p));
    }
    std::vector<std::span<const uint8_t>> items;
    for (const auto& b : payloads) items.emplace_back(b);

    TripletBatch batch;
    batch.items = items;
    const auto embs = forward_batch(params, items);
    batch.triplets =
        mine_triplets(pairwise_cosine(embs), items.size(), labels, 0.2);
    if (batch.triplets.empty()) continue;

    // Well-conditioned instances only: hinge margins and max-pool gaps far
    // beyond the reach of the perturbation (a winner flip or hinge sign
    // change would put a kink inside the difference interval).
    bool conditioned = true;
    for (const auto& t : batch.triplets) {
      const double d_ap = cosine_distance(embs[size_t(t.anchor)],
                                          embs[size_t(t.positive)]);
      const double d_an = cosine_distance(embs[size_t(t.anchor)],
                                          embs[size_t(t.negative)]);
      if (std::abs(d_ap - d_an + 0.2) < 5e-3) conditioned = false;
    }
    if (!conditioned || min_pool_gap(params, items) < 1e-3) continue;

    const auto [loss, grads] = loss_and_grad(params, batch, 0.2);
    if (loss <= 0.0) continue;
    ++instances_done;

    struct Field {
      std::vector<float> ModelParameters::* p;
      std::vector<double> ParamGrads::* g;
    };
    const std::vector<Field> fields = {
        {&ModelParameters::embedding, &ParamGrads::embedding},
        {&ModelParameters::conv_w, &ParamGrads::conv_w},
        {&ModelParameters::conv_b, &ParamGrads::conv_b},
        {&ModelParameters::gate_w, &ParamGrads::gate_w},
        {&ModelParameters::gate_b, &ParamGrads::gate_b},
        {&ModelParameters::fc_w, &ParamGrads::fc_w},
        {&ModelParameters::fc_b, &ParamGrads::fc_b},
    };
    for (const auto& field : fields) {
      const size_t n = (params.*(field.p)).size();
      std::vector<double> errs(n, 0.0);
      parallel_for(n, [&](size_t i) {
        ModelParameters plus = params, minus = params;
        (plus.*(field.p))[i] = float(double((params.*(field.p))[i]) + h);
        (minus.*(field.p))[i] = float(double((params.*(field.p))[i]) - h);
        const double width =
            double((plus.*(field.p))[i]) - double((minus.*(field.p))[i]);
        const double fd = (loss_only(plus, items, batch.triplets, 0.2) -
                           loss_only(minus, items, batch.triplets, 0.2)) /
                          width;
        const double an = (grads.*(field.g))[i];
        errs[i] = std::abs(fd - an) /
                  std::max({std::abs(fd), std::abs(an), 1e-6});
      });
      for (double e : errs) worst = std::max(worst, e);
    }
    if (worst >= 1e-4)
      return Outcome{false, "max relative gradient error " + fmt(worst)};
  }
  return Outcome{true, "20 instances, max relative error " + fmt(worst)};
}

// ---------------------------------------------------------------------
// Criterion 2: mining equals a literal restatement of the selection rule.

std::vector<Triplet> literal_mine(const std::vector<double>& dist, size_t n,
                                  const std::vector<int32_t>& labels,
                                  double alpha) {
  std::vector<Triplet> out;
  for (size_t a = 0; a < n; ++a) {
    const size_t p = a ^ 1;
    const double d_ap = dist[a * n + p];
    int32_t pick = -1;
    bool semi = false;
    double pick_loss = 0.0;
    for (size_t j = 0; j < n; ++j) {  // hardest semi-hard = biggest loss
      if (labels[j] == labels[a]) continue;
      const double d_an = dist[a * n + j];
      if (d_an >= d_ap && d_an < d_ap + alpha) {
        const double loss = d_ap - d_an + alpha;
        if (pick < 0 || loss > pick_loss) {
          pick = int32_t(j);
          pick_loss = loss;
          semi = true;
        }
      }
    }
    if (pick < 0) {  // easiest hard = smallest loss
      for (size_t j = 0; j < n; ++j) {
        if (labels[j] == labels[a]) continue;
        const double d_an = dist[a * n + j];
        if (d_an < d_ap) {
          const double loss = d_ap - d_an + alpha;
          if (pick < 0 || loss < pick_loss) {
            pick = int32_t(j);
            pick_loss = loss;
          }
        }
      }
    }
    if (pick >= 0)
      out.push_back({int32_t(a), int32_t(p), pick,
                     semi ? TripletCategory::SemiHard : TripletCategory::Hard,
                     pick_loss});
  }
  return out;
}

Outcome criterion_mining() {
  Rng rng(2000);
  size_t total_triplets = 0;
  for (int batch_no = 0; batch_no < 250; ++batch_no) {
    const size_t pairs = 2 + rng.below(31);
    const size_t n = 2 * pairs;
    std::vector<int32_t> labels(n);
    for (size_t i = 0; i < n; ++i) labels[i] = int32_t(i / 2);
    std::vector<double> dist(n * n, 0.0);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = i + 1; j < n; ++j) {
        const double d = rng.uniform(0.0, 2.0);
        dist[i * n + j] = d;
        dist[j * n + i] = d;
      }
    const double alpha = rng.uniform(0.05, 0.5);
    const auto got = mine_triplets(dist, n, labels, alpha);
    const auto want = literal_mine(dist, n, labels, alpha);
    REQUIRE_OK(got.size() == want.size(),
               "triplet count mismatch in batch " + std::to_string(batch_no));
    for (size_t i = 0; i < got.size(); ++i) {
      const bool same = got[i].anchor == want[i].anchor &&
                        got[i].positive == want[i].positive &&
                        got[i].negative == want[i].negative &&
                        got[i].category == want[i].category &&
                        got[i].loss == want[i].loss;
      REQUIRE_OK(same, "triplet mismatch in batch " + std::to_string(batch_no));
    }
    total_triplets += got.size();
  }
  return Outcome{true,
                 "250 batches, " + std::to_string(total_triplets) +
                     " triplets identical"};
}

// ---------------------------------------------------------------------
// Criteria 3 and 4 share the random corpora.

struct RandomEval {
  EmbeddingSet set;
  LabelTable labels;
};

RandomEval random_eval_corpus(Rng& rng, size_t max_points) {
  RandomEval out;
  const size_t n = 50 + rng.below(max_points - 50 + 1);
  const size_t dim = 4 + rng.below(21);
  out.set.dim = int(dim);
  out.set.data.resize(n * dim);
  for (auto& x : out.set.data) x = float(rng.uniform(-1.0, 1.0));
  for (size_t i = 0; i < n; ++i)
    out.set.ids.push_back("v" + std::to_string(i));
  // ~10% duplicated rows force exact distance ties.
  for (size_t k = 0; k < n / 10; ++k) {
    const size_t src = rng.below(n), dst = rng.below(n);
    if (src != dst)
      std::copy_n(out.set.data.begin() + long(src * dim), dim,
                  out.set.data.begin() + long(dst * dim));
  }
  const size_t n_labels = std::max<size_t>(2, n / 3);
  std::map<std::string, int32_t> intern;
  for (size_t i = 0; i < n; ++i) {
    const std::string name = "l" + std::to_string(rng.below(n_labels));
    auto [it, inserted] =
        intern.emplace(name, int32_t(out.labels.canonical.size()));
    if (inserted) out.labels.canonical.push_back(name);
    out.labels.label_of[out.set.ids[i]] = it->second;
  }
  return out;
}

Outcome criterion_bounds(std::vector<RandomEval>& corpora) {
  Rng rng(3000);
  corpora.clear();
  for (int i = 0; i < 50; ++i)
    corpora.push_back(random_eval_corpus(rng, i < 45 ? 600 : 2000));

  // The no-match bound itself, exact.
  QueryOutcome miss;
  const auto [lo, hi] = reciprocal_rank_bounds(miss, 30);
  REQUIRE_OK(lo == 0.0 && hi == 1.0 / 31.0,
             "no-match bound is not (0, 1/31)");

  size_t misses = 0;
  for (size_t ci = 0; ci < corpora.size(); ++ci) {
    IndexConfig cfg;  // Exact, k = 30
    std::vector<QueryOutcome> outcomes;
    const EvalReport report =
        evaluate(corpora[ci].set, corpora[ci].labels, cfg, &outcomes);
    REQUIRE_OK(report.mrr_exact.has_value(), "exact index must report mrr");
    REQUIRE_OK(report.mrr_lower <= *report.mrr_exact + 1e-15 &&
                   *report.mrr_exact <= report.mrr_upper + 1e-15,
               "bracketing violated on corpus " + std::to_string(ci) + ": " +
                   fmt(report.mrr_lower) + " / " + fmt(*report.mrr_exact) +
                   " / " + fmt(report.mrr_upper));
    REQUIRE_OK(report.recall.at(1) <= report.recall.at(2) &&
                   report.recall.at(2) <= report.recall.at(5) &&
                   report.recall.at(5) <= report.recall.at(10) &&
                   report.recall.at(10) <= 1.0,
               "recall@k not monotone on corpus " + std::to_string(ci));
    REQUIRE_OK(report.recall.at(1) <= *report.mrr_exact + 1e-15 &&
                   report.recall.at(1) <= report.mrr_upper + 1e-15,
               "recall@1 exceeds mrr on corpus " + std::to_string(ci));
    // Recompute the aggregate bounds from per-query outcomes.
    double sum_lo = 0.0, sum_hi = 0.0;
    for (const auto& o : outcomes) {
      const auto [l, u] = reciprocal_rank_bounds(o, cfg.k);
      sum_lo += l;
      sum_hi += u;
      if (!o.rank) {
        ++misses;
        REQUIRE_OK(u == 1.0 / 31.0, "per-query no-match upper is not 1/31");
      }
    }
    const double n = double(outcomes.size());
    REQUIRE_OK(report.mrr_lower == sum_lo / n && report.mrr_upper == sum_hi / n,
               "aggregate bounds do not match per-query bounds");
  }
  REQUIRE_OK(misses > 0, "no no-match queries were exercised");
  return Outcome{true, "50 corpora bracketed, " + std::to_string(misses) +
                           " no-match queries at exactly 1/31"};
}

Outcome criterion_exact_fidelity(const std::vector<RandomEval>& corpora) {
  REQUIRE_OK(!corpora.empty(), "criterion 3 corpora unavailable");
  for (size_t ci = 0; ci < corpora.size(); ++ci) {
    const EmbeddingSet& set = corpora[ci].set;
    const auto index = build_index(set, IndexConfig{});
    const size_t stride = set.size() > 500 ? 7 : 1;
    std::vector<size_t> queries;
    for (size_t q = 0; q < set.size(); q += stride) queries.push_back(q);
    std::vector<std::string> failures(queries.size());
    parallel_for(queries.size(), [&](size_t qi) {
      const size_t q = queries[qi];
      const auto got = index->knn(int32_t(q), 30);
      // Quadratic scan with stable_sort on distance only: insertion order
      // breaks ties.
      std::vector<Neighbor> want;
      const auto qrow = set.row(q);
      for (size_t j = 0; j < set.size(); ++j) {
        if (j == q) continue;
        double dot = 0, uu = 0, vv = 0;
        const auto r = set.row(j);
        for (size_t d = 0; d < r.size(); ++d) {
          dot += double(qrow[d]) * double(r[d]);
          uu += double(qrow[d]) * double(qrow[d]);
          vv += double(r[d]) * double(r[d]);
        }
        want.push_back({int32_t(j), 1.0 - dot / ((std::sqrt(uu) + 1e-12) *
                                                 (std::sqrt(vv) + 1e-12))});
      }
      std::stable_sort(want.begin(), want.end(),
                       [](const Neighbor& a, const Neighbor& b) {
                         return a.distance < b.distance;
                       });
      if (want.size() > 30) want.resize(30);
      if (got.size() != want.size()) {
        failures[qi] = "size mismatch";
        return;
      }
      for (size_t i = 0; i < got.size(); ++i)
        if (got[i].index != want[i].index ||
            got[i].distance != want[i].distance) {
          failures[qi] = "neighbor mismatch at rank " + std::to_string(i + 1);
          return;
        }
    });
    for (const auto& f : failures)
      REQUIRE_OK(f.empty(),
                 "corpus " + std::to_string(ci) + ": " + f);
  }
  return Outcome{true, "exact knn equals the quadratic oracle on all corpora"};
}

// ---------------------------------------------------------------------
// Criterion 5: HNSW recall and bound bracketing at 10k x 128.

Outcome criterion_ann() {
  Rng rng(5000);
  const size_t n = 10000, dim = 128;
  EmbeddingSet set;
  set.dim = int(dim);
  set.data.resize(n * dim);
  for (auto& x : set.data) x = float(rng.uniform(-1.0, 1.0));
  LabelTable labels;
  for (size_t i = 0; i < n; ++i) {
    set.ids.push_back("v" + std::to_string(i));
    const int32_t label = int32_t(i / 2);
    if (size_t(label) >= labels.canonical.size())
      labels.canonical.push_back("l" + std::to_string(label));
    labels.label_of[set.ids[i]] = label;
  }

  IndexConfig approx_cfg;
  approx_cfg.kind = IndexKind::ApproxHNSW;
  const auto graph = build_index(set, approx_cfg);
  const auto exact = build_index(set, IndexConfig{});

  std::vector<double> recalls(n, 0.0);
  parallel_for(n, [&](size_t q) {
    const auto got = graph->knn(int32_t(q), 30);
    const auto want = exact->knn(int32_t(q), 30);
    std::set<int32_t> got_ids;
    for (const auto& nb : got) got_ids.insert(nb.index);
    size_t hit = 0;
    for (const auto& nb : want)
      if (got_ids.count(nb.index)) ++hit;
    recalls[q] = double(hit) / double(want.size());
  });
  double recall = 0.0;
  for (double r : recalls) recall += r;
  recall /= double(n);
  REQUIRE_OK(recall >= 0.95, "30-NN recall " + fmt(recall) + " < 0.95");

  const EvalReport exact_report = evaluate(set, labels, IndexConfig{});
  const EvalReport approx_report = evaluate(set, labels, approx_cfg);
  REQUIRE_OK(exact_report.mrr_exact.has_value(), "missing exact mrr");
  REQUIRE_OK(approx_report.mrr_lower <= *exact_report.mrr_exact &&
                 *exact_report.mrr_exact <= approx_report.mrr_upper,
             "hnsw interval [" + fmt(approx_report.mrr_lower) + ", " +
                 fmt(approx_report.mrr_upper) + "] misses exact mrr " +
                 fmt(*exact_report.mrr_exact));
  return Outcome{true, "recall " + fmt(recall) + ", interval [" +
                           fmt(approx_report.mrr_lower) + ", " +
                           fmt(approx_report.mrr_upper) + "] contains " +
                           fmt(*exact_report.mrr_exact)};
}

// ---------------------------------------------------------------------
// Criterion 6: synthetic overfit experiment. Artifacts are kept for
// criterion 10.

struct OverfitRun {
  bool ready = false;
  EmbeddingSet set;
  LabelTable labels;
  double mrr_exact = 0.0;
};

Outcome criterion_overfit(OverfitRun& run) {
  Rng rng(20260806);
  Corpus corpus;
  LabelTable labels;
  for (int label = 0; label < 200; ++label) {
    const auto base = random_bytes(rng, 64, 512);
    for (int v = 0; v < 4; ++v) {
      std::vector<uint8_t> bytes = base;
      if (v > 0) {
        const size_t k = 1 + rng.below(8);
        for (size_t i = 0; i < k; ++i) {
          const size_t pos = rng.below(bytes.size() + 1);
          bytes.insert(bytes.begin() + long(pos), 0x90);  // no-op filler
        }
      }
      const std::string id =
          "L" + std::to_string(label) + "_v" + std::to_string(v);
      corpus.add(make_record(id, "lab" + std::to_string(label), bytes,
                             "s" + std::to_string(label)));
      if (size_t(label) >= labels.canonical.size())
        labels.canonical.push_back("lab" + std::to_string(label));
      labels.label_of[id] = label;
    }
  }
  RecordSubset all(corpus.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  const LabeledSet set = build_labeled_set(corpus, all, labels);

  ModelConfig mcfg;
  mcfg.channels = 32;
  mcfg.output_dim = 32;
  TrainConfig tcfg;
  tcfg.labels_per_batch = 50;
  tcfg.functions_per_epoch = 4800;  // 48 steps per desk-scale epoch
  tcfg.epochs = 50;
  tcfg.seed = 607;

  double final_epoch_loss = 1e300;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochSummary& e) {
    final_epoch_loss = e.mean_loss;
  };
  const TrainState state = bfsd::train(set, mcfg, tcfg, hooks);

  run.set = embed_corpus(state.params, corpus, all, "");
  run.labels = labels;
  const EvalReport report = evaluate(run.set, run.labels, IndexConfig{});
  run.mrr_exact = *report.mrr_exact;
  run.ready = true;

  REQUIRE_OK(final_epoch_loss < 0.05,
             "final epoch mean loss " + fmt(final_epoch_loss) + " >= 0.05");
  REQUIRE_OK(*report.mrr_exact >= 0.80,
             "mrr_exact " + fmt(*report.mrr_exact) + " < 0.80");
  REQUIRE_OK(report.recall.at(1) >= 0.70,
             "recall@1 " + fmt(report.recall.at(1)) + " < 0.70");
  return Outcome{true, "mrr_exact " + fmt(*report.mrr_exact) + ", recall@1 " +
                           fmt(report.recall.at(1)) + ", final loss " +
                           fmt(final_epoch_loss)};
}

// ---------------------------------------------------------------------
// Criterion 7: curation invariants over fuzzed corpora.

Outcome criterion_curation(size_t n_corpora) {
  for (uint64_t seed = 1; seed <= n_corpora; ++seed) {
    const Corpus corpus = random_corpus(seed * 7919, 30 + seed % 90);
    auto split = split_by_source(corpus, 0.8, seed);
    split = restrict_common_functions(corpus, split, 0.5);

    // C1: every source on one side.
    std::map<std::string, std::set<Side>> source_sides;
    for (const auto& rec : corpus.records()) {
      auto it = split.side.find(rec.id);
      if (it != split.side.end()) source_sides[rec.source_id].insert(it->second);
    }
    for (const auto& [src, sides] : source_sides)
      REQUIRE_OK(sides.size() <= 1, "C1 violated for source " + src);

    // C2: common names on a single side (independent recount).
    std::set<std::string> binaries;
    std::map<std::string, std::set<std::string>> name_bins;
    for (const auto& rec : corpus.records()) {
      binaries.insert(rec.binary_id);
      name_bins[rec.name].insert(rec.binary_id);
    }
    for (const auto& [name, bins] : name_bins) {
      if (2 * bins.size() <= binaries.size()) continue;
      std::set<Side> sides;
      for (const auto& rec : corpus.records()) {
        if (rec.name != name) continue;
        auto it = split.side.find(rec.id);
        if (it != split.side.end()) sides.insert(it->second);
      }
      REQUIRE_OK(sides.size() <= 1, "C2 violated for name " + name);
    }

    for (Side side : {Side::Train, Side::Test}) {
      RecordSubset subset = dedup(corpus, side_records(corpus, split, side));
      std::set<std::string> hashes;
      for (size_t pos : subset)
        REQUIRE_OK(hashes.insert(byte_hash(corpus.at(pos)).hex()).second,
                   "duplicate byte hash survived dedup");
      if (subset.empty()) continue;

      const LabelTable table =
          assign_labels(corpus, subset, compute_label_stats(corpus, subset));
      const RecordSubset kept =
          downsample_singletons(corpus, subset, table, 0.05, seed ^ 0xabc);

      std::map<int32_t, size_t> mult;
      for (size_t pos : kept) ++mult[table.label_of.at(corpus.at(pos).id)];
      size_t singles = 0;
      for (size_t pos : kept)
        if (mult.at(table.label_of.at(corpus.at(pos).id)) == 1) ++singles;
      REQUIRE_OK(double(singles) <= 0.05 * double(kept.size()) + 1.0,
                 "singleton fraction exceeded on side");

      const size_t none = normalize_labels(table, LabelScheme::None).n_labels();
      const size_t mt =
          normalize_labels(table, LabelScheme::MaskType).n_labels();
      const size_t ms =
          normalize_labels(table, LabelScheme::MaskSource).n_labels();
      const size_t mb =
          normalize_labels(table, LabelScheme::MaskBoth).n_labels();
      REQUIRE_OK(mb <= mt && mt <= none && mb <= ms && ms <= none,
                 "label-count monotonicity violated");
    }
  }
  return Outcome{true, std::to_string(n_corpora) + " corpora clean"};
}

// ---------------------------------------------------------------------
// Criterion 8: the labeling-rule table on a hand-built corpus.

Outcome criterion_label_rules() {
  Corpus c;
  c.add(make_record("m1", "memset", std::vector<uint8_t>(16, 1), "s1", "b1"));
  c.add(make_record("m2", "memset", std::vector<uint8_t>(20, 2), "s2", "b2"));
  c.add(make_record("m3", "memset", std::vector<uint8_t>(25, 3), "s3", "b3"));
  const std::string long_name(120, 'q');
  c.add(make_record("L1", long_name, std::vector<uint8_t>(300, 4), "s1", "b1"));
  c.add(make_record("L2", long_name, std::vector<uint8_t>(900, 5), "s2", "b2"));
  c.add(make_record("t1", "stable", std::vector<uint8_t>(100, 6), "s1", "b1"));
  c.add(make_record("t2", "stable", std::vector<uint8_t>(101, 7), "s2", "b2"));
  // Release sizes [90, 110]: mean 100, population sd 10, 0.1 >= 0.05.
  c.add(make_record("f1", "foo", std::vector<uint8_t>(90, 8), "s1", "b1"));
  c.add(make_record("f2", "foo", std::vector<uint8_t>(110, 9), "s2", "b2"));

  RecordSubset all(c.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  const LabelStats stats = compute_label_stats(c, all);
  const LabelTable table = assign_labels(c, all, stats);

  auto canon = [&](const std::string& id) {
    return table.canonical[size_t(table.label_of.at(id))];
  };
  REQUIRE_OK(labeling_rule_for("memset", stats) == LabelRule::SmallEverywhere,
             "rule 1 did not fire for memset");
  REQUIRE_OK(labeling_rule_for(long_name, stats) == LabelRule::LongName,
             "rule 2 did not fire for the 120-char name");
  REQUIRE_OK(labeling_rule_for("stable", stats) == LabelRule::StableSize,
             "rule 3 did not fire for stable sizes");
  REQUIRE_OK(labeling_rule_for("foo", stats) == LabelRule::PerSource,
             "fallback did not fire for foo");
  REQUIRE_OK(canon("m1") == "memset" && canon("m2") == "memset" &&
                 canon("m3") == "memset",
             "rule 1 label wrong");
  REQUIRE_OK(canon("L1") == long_name && canon("L2") == long_name,
             "rule 2 label wrong");
  REQUIRE_OK(canon("t1") == "stable" && canon("t2") == "stable",
             "rule 3 label wrong");
  REQUIRE_OK(canon("f1") == "s1\\foo" && canon("f2") == "s2\\foo",
             "per-source subdivision wrong");
  REQUIRE_OK(table.n_labels() == 5, "expected exactly 5 labels");
  return Outcome{true, "all four rules produce the dictated labels"};
}

// ---------------------------------------------------------------------
// Criterion 9: masking conformance on the two printed function names.

Outcome criterion_masks() {
  const std::string f1 = "21991\\std::collate<char>::do_compare";
  const std::string f2 = "193204\\std::collate<wchar_t>::do_compare";

  // Row "Mask type".
  REQUIRE_OK(mask_type(f1) == "21991\\std::collate<#>::do_compare",
             "mask_type(f1) = " + mask_type(f1));
  REQUIRE_OK(mask_type(f2) == "193204\\std::collate<#>::do_compare",
             "mask_type(f2) = " + mask_type(f2));
  // Row "Mask source ID".
  REQUIRE_OK(mask_source(f1) == "std::collate<char>::do_compare",
             "mask_source(f1) = " + mask_source(f1));
  REQUIRE_OK(mask_source(f2) == "std::collate<wchar_t>::do_compare",
             "mask_source(f2) = " + mask_source(f2));
  // Row "Mask ID & type": both collapse to one string.
  REQUIRE_OK(mask_type(mask_source(f1)) == "std::collate<#>::do_compare" &&
                 mask_type(mask_source(f2)) == "std::collate<#>::do_compare",
             "mask both mismatch");
  return Outcome{true, "all four normalization rows reproduced"};
}

// ---------------------------------------------------------------------
// Criterion 10: pool-size sanity on the criterion-6 model.

Outcome criterion_pools(const OverfitRun& run) {
  REQUIRE_OK(run.ready, "criterion 6 artifacts unavailable");
  const EvalReport p1 = pool_evaluate(run.set, run.labels, 1, 0, 1001);
  REQUIRE_OK(p1.mrr_exact.has_value() && *p1.mrr_exact == 1.0,
             "pool size 1 mrr is " + fmt(*p1.mrr_exact));
  const EvalReport p10 = pool_evaluate(run.set, run.labels, 10, 0, 1001);
  REQUIRE_OK(*p10.mrr_exact >= run.mrr_exact - 1e-9,
             "pool-10 mrr " + fmt(*p10.mrr_exact) +
                 " below full-corpus mrr " + fmt(run.mrr_exact));
  return Outcome{true, "pool-1 mrr 1.0, pool-10 mrr " + fmt(*p10.mrr_exact) +
                           " >= full " + fmt(run.mrr_exact)};
}

// ---------------------------------------------------------------------
// Criterion 11: end-to-end determinism through the CLI.

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(BFSD_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  return WEXITSTATUS(std::system(cmd.c_str()));
}

void write_pipeline_corpus(const std::string& path) {
  Rng rng(117);
  Corpus corpus;
  int next = 0;
  for (int name = 0; name < 14; ++name) {
    for (int inst = 0; inst < 6; ++inst) {
      const size_t len = 40 + size_t(name);
      corpus.add(make_record(
          "f" + std::to_string(next++), "fn" + std::to_string(name),
          random_bytes(rng, len, len + 1), "src" + std::to_string(inst),
          "bin" + std::to_string((name * 6 + inst) % 20),
          inst % 2 ? BuildMode::Debug : BuildMode::Release));
    }
  }
  for (int s = 0; s < 5; ++s)
    corpus.add(make_record("solo" + std::to_string(s),
                           "unique" + std::to_string(s),
                           random_bytes(rng, 120, 400),
                           "src" + std::to_string(s), "bin19"));
  save_corpus(corpus, path);
}

Outcome criterion_determinism() {
  TempDir dir("acceptance_e2e");
  const std::string corpus = dir.file("corpus.jsonl");
  write_pipeline_corpus(corpus);

  const std::string model_args =
      " --set model.channels=8 --set model.output_dim=8 "
      "--set model.max_len=128";
  for (const char* run : {"a", "b"}) {
    const std::string out = dir.file(run);
    REQUIRE_OK(run_cli("curate --corpus " + corpus + " --seed 31 --out " +
                       out) == 0,
               "curate failed");
    REQUIRE_OK(
        run_cli("train --corpus " + corpus + " --split " + out +
                "/split.jsonl --labels " + out + "/labels_train.jsonl" +
                model_args +
                " --set train.labels_per_batch=4"
                " --set train.functions_per_epoch=16 --set train.epochs=2"
                " --seed 67 --out " +
                out) == 0,
        "train failed");
    REQUIRE_OK(run_cli("embed --corpus " + corpus + " --split " + out +
                       "/split.jsonl --side Train --checkpoint " + out +
                       "/checkpoint --out " + out) == 0,
               "embed failed");
    REQUIRE_OK(run_cli("eval --embeddings " + out + "/embeddings --labels " +
                       out + "/labels_train.jsonl --seed 5 "
                       "--set eval.pool_sizes=1,10 --out " +
                       out) == 0,
               "eval failed");
  }

  const std::vector<std::string> artifacts = {
      "split.jsonl",           "labels_train.jsonl",
      "labels_test.jsonl",     "curation_summary.json",
      "checkpoint/params.bin", "checkpoint/header.json",
      "checkpoint/optim.bin",  "embeddings/vectors.bin",
      "embeddings/ids.txt",    "embeddings/header.json",
      "eval_None.json",        "eval_None_pool1.json",
      "eval_None_pool10.json"};
  for (const auto& f : artifacts) {
    const std::string a = slurp(dir.file("a") + "/" + f);
    const std::string b = slurp(dir.file("b") + "/" + f);
    REQUIRE_OK(!a.empty(), f + " is empty");
    REQUIRE_OK(a == b, f + " differs between identical runs");
  }
  return Outcome{true, std::to_string(artifacts.size()) +
                           " artifacts bit-identical across reruns"};
}

// ---------------------------------------------------------------------

struct Criterion {
  int number;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> fn;
};

}  // namespace

int main() {
  std::vector<RandomEval> corpora;  // shared between criteria 3 and 4
  OverfitRun overfit;               // shared between criteria 6 and 10

  const std::vector<Criterion> criteria = {
      {1, "gradient correctness vs finite differences", 60.0,
       [] { return criterion_gradients(); }},
      {2, "mining equals the literal selection rule", 60.0,
       [] { return criterion_mining(); }},
      {3, "mrr bound bracketing with exact index", 120.0,
       [&] { return criterion_bounds(corpora); }},
      {4, "exact index equals quadratic brute force", 120.0,
       [&] { return criterion_exact_fidelity(corpora); }},
      {5, "hnsw recall and interval coverage", 300.0,
       [] { return criterion_ann(); }},
      {6, "synthetic overfit experiment", 600.0,
       [&] { return criterion_overfit(overfit); }},
      {7, "curation invariants on fuzzed corpora", 120.0,
       [] { return criterion_curation(100); }},
      {8, "labeling-rule table", 30.0, [] { return criterion_label_rules(); }},
      {9, "masking conformance", 30.0, [] { return criterion_masks(); }},
      {10, "pool-size sanity", 60.0,
       [&] { return criterion_pools(overfit); }},
      {11, "end-to-end determinism", 300.0,
       [] { return criterion_determinism(); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.fn();
    } catch (const std::exception& e) {
      outcome = Outcome{false, std::string("exception: ") + e.what()};
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (outcome.ok && elapsed > c.budget_seconds) {
      outcome.ok = false;
      outcome.detail = "over budget: " + fmt(elapsed) + "s > " +
                       fmt(c.budget_seconds) + "s";
    }
    std::printf("[%s] criterion %2d: %s (%.1fs)%s%s\n",
                outcome.ok ? "PASS" : "FAIL", c.number, c.name, elapsed,
                outcome.detail.empty() ? "" : " -- ",
                outcome.detail.c_str());
    std::fflush(stdout);
    if (!outcome.ok) ++failures;
  }
  if (failures > 0)
    std::printf("%d criterion(s) failed\n", failures);
  else
    std::printf("all criteria passed\n");
  return failures == 0 ? 0 : 1;
}
