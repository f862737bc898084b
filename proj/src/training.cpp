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

#include "bfsd/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "bfsd/errors.hpp"
#include "bfsd/parallel.hpp"

namespace bfsd {

namespace {

using nlohmann::json;

constexpr double kCosineEps = 1e-12;
// Keeps the batch-sampling stream independent of the init stream that
// consumes the same seed.
constexpr uint64_t kSampleStreamSalt = 0x9e3779b97f4a7c15ULL;

struct BatchForward {
  std::vector<Embedding> embeddings;
  std::vector<ForwardCache> caches;
};

BatchForward batch_forward(const ModelParameters& params,
                           const std::vector<std::span<const uint8_t>>& items) {
  BatchForward bf;
  bf.embeddings.resize(items.size());
  bf.caches.resize(items.size());
  parallel_for(items.size(), [&](size_t i) {
    bf.embeddings[i] = forward_cached(params, items[i], bf.caches[i]);
  });
  return bf;
}

// Adds lambda * d(cosine_distance(u, v)) / d(u, v) into du and dv.
void accumulate_cosine_grad(std::span<const double> u,
                            std::span<const double> v, double lambda,
                            std::vector<double>& du, std::vector<double>& dv) {
  const size_t n = u.size();
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (size_t i = 0; i < n; ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  const double nu = std::sqrt(uu);
  const double nv = std::sqrt(vv);
  const double denom = (nu + kCosineEps) * (nv + kCosineEps);
  const double inv_denom = 1.0 / denom;
  const double cu = nu > 0.0
                        ? dot / (nu * (nu + kCosineEps) * denom)
                        : 0.0;
  const double cv = nv > 0.0
                        ? dot / (nv * (nv + kCosineEps) * denom)
                        : 0.0;
  for (size_t i = 0; i < n; ++i) {
    du[i] += lambda * (u[i] * cu - v[i] * inv_denom);
    dv[i] += lambda * (v[i] * cv - u[i] * inv_denom);
  }
}

void zero_grads(ParamGrads& g) {
  auto zero = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
  zero(g.embedding);
  zero(g.conv_w);
  zero(g.conv_b);
  zero(g.gate_w);
  zero(g.gate_b);
  zero(g.fc_w);
  zero(g.fc_b);
}

std::pair<double, ParamGrads> grad_from_forward(
    const ModelParameters& params, const BatchForward& bf,
    const std::vector<Triplet>& triplets, double margin) {
  ParamGrads grads = make_grads(params.config);
  if (triplets.empty()) return {0.0, std::move(grads)};

  const size_t n_items = bf.embeddings.size();
  const size_t out_dim = static_cast<size_t>(params.config.output_dim);
  const double inv_t = 1.0 / static_cast<double>(triplets.size());

  std::vector<std::vector<double>> d_emb(n_items,
                                         std::vector<double>(out_dim, 0.0));
  double loss = 0.0;
  for (const auto& t : triplets) {
    if (t.anchor < 0 || t.positive < 0 || t.negative < 0 ||
        static_cast<size_t>(t.anchor) >= n_items ||
        static_cast<size_t>(t.positive) >= n_items ||
        static_cast<size_t>(t.negative) >= n_items)
      throw Error("triplet index out of range");
    const auto& ea = bf.embeddings[static_cast<size_t>(t.anchor)];
    const auto& ep = bf.embeddings[static_cast<size_t>(t.positive)];
    const auto& en = bf.embeddings[static_cast<size_t>(t.negative)];
    const double d_ap = cosine_distance(ea, ep);
    const double d_an = cosine_distance(ea, en);
    const double h = d_ap - d_an + margin;
    if (h > 0.0) {
      loss += h;
      accumulate_cosine_grad(ea, ep, inv_t,
                             d_emb[static_cast<size_t>(t.anchor)],
                             d_emb[static_cast<size_t>(t.positive)]);
      accumulate_cosine_grad(ea, en, -inv_t,
                             d_emb[static_cast<size_t>(t.anchor)],
                             d_emb[static_cast<size_t>(t.negative)]);
    }
  }
  loss *= inv_t;

  std::vector<size_t> active;
  for (size_t i = 0; i < n_items; ++i) {
    for (double x : d_emb[i]) {
      if (x != 0.0) {
        active.push_back(i);
        break;
      }
    }
  }

  // Per-item contributions are computed in parallel blocks but reduced in
  // ascending item order, so results do not depend on the thread count.
  const size_t block = std::max<size_t>(1, max_threads());
  std::vector<ParamGrads> buffers;
  for (size_t k = 0; k < std::min(block, active.size()); ++k)
    buffers.push_back(make_grads(params.config));
  for (size_t begin = 0; begin < active.size(); begin += block) {
    const size_t end = std::min(active.size(), begin + block);
    parallel_for(end - begin, [&](size_t k) {
      const size_t item = active[begin + k];
      backward_item(params, bf.caches[item], d_emb[item], buffers[k]);
    });
    for (size_t k = 0; k < end - begin; ++k) {
      grads.add(buffers[k]);
      zero_grads(buffers[k]);
    }
  }
  return {loss, std::move(grads)};
}

void append_f64_le(std::string& out, double v) {
  const uint64_t u = std::bit_cast<uint64_t>(v);
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

double read_f64_le(const char* p) {
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i)
    u |= static_cast<uint64_t>(static_cast<uint8_t>(p[i])) << (8 * i);
  return std::bit_cast<double>(u);
}

std::vector<std::vector<double> ParamGrads::*> grad_fields() {
  return {&ParamGrads::embedding, &ParamGrads::conv_w, &ParamGrads::conv_b,
          &ParamGrads::gate_w,    &ParamGrads::gate_b, &ParamGrads::fc_w,
          &ParamGrads::fc_b};
}

std::vector<std::vector<float> ModelParameters::*> param_fields() {
  return {&ModelParameters::embedding, &ModelParameters::conv_w,
          &ModelParameters::conv_b,    &ModelParameters::gate_w,
          &ModelParameters::gate_b,    &ModelParameters::fc_w,
          &ModelParameters::fc_b};
}

}  // namespace

void TrainConfig::validate() const {
  if (!(margin > 0.0)) throw ConfigError("margin must be > 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(clip_lo < clip_hi)) throw ConfigError("clip_lo must be < clip_hi");
  if (labels_per_batch < 2) throw ConfigError("labels_per_batch must be >= 2");
  if (functions_per_epoch < 1)
    throw ConfigError("functions_per_epoch must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
      !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("adam betas must be in [0, 1)");
}

OptimizerState make_optimizer_state(const ModelConfig& config) {
  OptimizerState s;
  s.m = make_grads(config);
  s.v = make_grads(config);
  s.step = 0;
  return s;
}

double cosine_distance(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw DimensionError("cosine_distance dimension mismatch: " +
                         std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()));
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  return 1.0 - dot / ((std::sqrt(uu) + kCosineEps) *
                      (std::sqrt(vv) + kCosineEps));
}

double triplet_hinge(double d_ap, double d_an, double alpha) {
  return std::max(d_ap - d_an + alpha, 0.0);
}

LabeledSet build_labeled_set(const Corpus& corpus, const RecordSubset& subset,
                             const LabelTable& table) {
  LabeledSet set;
  set.corpus = &corpus;
  set.positions = subset;
  set.labels.reserve(subset.size());
  set.by_label.assign(table.canonical.size(), {});
  for (size_t i = 0; i < subset.size(); ++i) {
    auto it = table.label_of.find(corpus.at(subset[i]).id);
    if (it == table.label_of.end())
      throw LabelError("record not in label table: " +
                       corpus.at(subset[i]).id);
    set.labels.push_back(it->second);
    set.by_label[static_cast<size_t>(it->second)].push_back(
        static_cast<int32_t>(i));
  }
  for (size_t l = 0; l < set.by_label.size(); ++l)
    if (set.by_label[l].size() >= 2)
      set.eligible.push_back(static_cast<int32_t>(l));
  return set;
}

std::vector<int32_t> sample_batch(const LabeledSet& set, int n_labels,
                                  Rng& rng) {
  if (n_labels < 1) throw ConfigError("n_labels must be >= 1");
  if (set.eligible.size() < static_cast<size_t>(n_labels))
    throw SamplingError(
        "insufficient eligible labels: need " + std::to_string(n_labels) +
        " labels with multiplicity >= 2, have " +
        std::to_string(set.eligible.size()));

  // Partial Fisher-Yates over a copy of the eligible list.
  std::vector<int32_t> pool = set.eligible;
  std::vector<int32_t> batch;
  batch.reserve(2 * static_cast<size_t>(n_labels));
  for (int t = 0; t < n_labels; ++t) {
    const size_t j =
        static_cast<size_t>(t) +
        static_cast<size_t>(rng.below(pool.size() - static_cast<size_t>(t)));
    std::swap(pool[static_cast<size_t>(t)], pool[j]);
    const auto& bucket = set.by_label[static_cast<size_t>(pool[t])];
    const size_t i = static_cast<size_t>(rng.below(bucket.size()));
    size_t k = static_cast<size_t>(rng.below(bucket.size() - 1));
    if (k >= i) ++k;
    batch.push_back(bucket[i]);
    batch.push_back(bucket[k]);
  }
  return batch;
}

std::vector<double> pairwise_cosine(const std::vector<Embedding>& embeddings) {
  const size_t n = embeddings.size();
  std::vector<double> dist(n * n, 0.0);
  parallel_for(n, [&](size_t i) {
    for (size_t j = i + 1; j < n; ++j) {
      const double d = cosine_distance(embeddings[i], embeddings[j]);
      dist[i * n + j] = d;
      dist[j * n + i] = d;
    }
  });
  return dist;
}

std::vector<Triplet> mine_triplets(const std::vector<double>& dist, size_t n,
                                   const std::vector<int32_t>& labels,
                                   double alpha) {
  if (labels.size() != n || dist.size() != n * n)
    throw DimensionError("mine_triplets size mismatch");
  if (n % 2 != 0) throw Error("mine_triplets requires a paired batch");

  std::vector<Triplet> out;
  for (size_t a = 0; a < n; ++a) {
    const size_t p = a ^ 1;  // fixed pair partner
    if (labels[a] != labels[p])
      throw Error("mine_triplets requires paired layout: items " +
                  std::to_string(a) + "," + std::to_string(p) +
                  " disagree on label");
    const double d_ap = dist[a * n + p];
    int32_t best_semi = -1, best_hard = -1;
    double best_semi_d = 0.0, best_hard_d = 0.0;
    for (size_t j = 0; j < n; ++j) {
      if (labels[j] == labels[a]) continue;
      const double d_an = dist[a * n + j];
      if (d_an < d_ap) {  // hard: keep the easiest (max distance)
        if (best_hard < 0 || d_an > best_hard_d) {
          best_hard = static_cast<int32_t>(j);
          best_hard_d = d_an;
        }
      } else if (d_an < d_ap + alpha) {  // semi-hard: keep the hardest (min)
        if (best_semi < 0 || d_an < best_semi_d) {
          best_semi = static_cast<int32_t>(j);
          best_semi_d = d_an;
        }
      }
    }
    if (best_semi >= 0) {
      out.push_back({static_cast<int32_t>(a), static_cast<int32_t>(p),
                     best_semi, TripletCategory::SemiHard,
                     d_ap - best_semi_d + alpha});
    } else if (best_hard >= 0) {
      out.push_back({static_cast<int32_t>(a), static_cast<int32_t>(p),
                     best_hard, TripletCategory::Hard,
                     d_ap - best_hard_d + alpha});
    }
  }
  return out;
}

std::pair<double, ParamGrads> loss_and_grad(const ModelParameters& params,
                                            const TripletBatch& batch,
                                            double margin) {
  const BatchForward bf = batch_forward(params, batch.items);
  return grad_from_forward(params, bf, batch.triplets, margin);
}

void adam_step(ModelParameters& params, const ParamGrads& grads,
               OptimizerState& state, const TrainConfig& config) {
  const auto gf = grad_fields();
  const auto pf = param_fields();
  for (auto field : gf) {
    for (double g : grads.*field) {
      if (!std::isfinite(g))
        throw NonFiniteGradientError("non-finite gradient component");
    }
  }

  ++state.step;
  const double bc1 =
      1.0 - std::pow(config.adam_beta1, static_cast<double>(state.step));
  const double bc2 =
      1.0 - std::pow(config.adam_beta2, static_cast<double>(state.step));
  for (size_t f = 0; f < gf.size(); ++f) {
    const std::vector<double>& g = grads.*gf[f];
    std::vector<double>& m = state.m.*gf[f];
    std::vector<double>& v = state.v.*gf[f];
    std::vector<float>& p = params.*pf[f];
    for (size_t i = 0; i < g.size(); ++i) {
      const double gc = std::clamp(g[i], config.clip_lo, config.clip_hi);
      m[i] = config.adam_beta1 * m[i] + (1.0 - config.adam_beta1) * gc;
      v[i] = config.adam_beta2 * v[i] + (1.0 - config.adam_beta2) * gc * gc;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] = static_cast<float>(
          static_cast<double>(p[i]) -
          config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_eps));
    }
  }
}

TrainState train(const LabeledSet& set, const ModelConfig& model_config,
                 const TrainConfig& train_config, const TrainHooks& hooks,
                 std::optional<TrainState> resume) {
  model_config.validate();
  train_config.validate();

  const int64_t batch_size = 2 * train_config.labels_per_batch;
  const int64_t steps_per_epoch =
      std::max<int64_t>(1, train_config.functions_per_epoch / batch_size);

  TrainState state;
  if (resume) {
    state = std::move(*resume);
    if (!(state.params.config == model_config))
      throw ProvenanceError("resume state model config differs from request");
  } else {
    state.params = init_params(model_config, train_config.seed);
    state.opt = make_optimizer_state(model_config);
    state.rng = Rng(train_config.seed ^ kSampleStreamSalt);
  }

  int epoch = static_cast<int>(state.steps_done / steps_per_epoch);
  int64_t step_in_epoch = state.steps_done % steps_per_epoch;

  EpochSummary summary;
  summary.epoch = epoch;
  int64_t summary_steps = 0;

  while (epoch < train_config.epochs) {
    for (; step_in_epoch < steps_per_epoch; ++step_in_epoch) {
      if (hooks.interrupt && hooks.interrupt->load()) {
        state.epochs_done = epoch;
        if (hooks.on_checkpoint) hooks.on_checkpoint(state);
        return state;
      }
      const auto t0 = std::chrono::steady_clock::now();

      const std::vector<int32_t> batch =
          sample_batch(set, train_config.labels_per_batch, state.rng);
      std::vector<std::span<const uint8_t>> items;
      std::vector<int32_t> batch_labels;
      items.reserve(batch.size());
      batch_labels.reserve(batch.size());
      for (int32_t idx : batch) {
        items.push_back(set.bytes_of(static_cast<size_t>(idx)));
        batch_labels.push_back(set.labels[static_cast<size_t>(idx)]);
      }

      const BatchForward bf = batch_forward(state.params, items);
      const std::vector<double> dist = pairwise_cosine(bf.embeddings);
      const std::vector<Triplet> triplets =
          mine_triplets(dist, items.size(), batch_labels, train_config.margin);
      auto [loss, grads] =
          grad_from_forward(state.params, bf, triplets, train_config.margin);
      adam_step(state.params, grads, state.opt, train_config);

      TrainStepLog log;
      log.step = ++state.steps_done;
      log.epoch = epoch;
      log.loss = loss;
      for (const auto& t : triplets)
        (t.category == TripletCategory::SemiHard ? log.n_semi_hard
                                                 : log.n_hard)++;
      log.n_skipped =
          static_cast<int>(items.size()) - static_cast<int>(triplets.size());
      log.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      if (hooks.on_step) hooks.on_step(log);

      summary.mean_loss += loss;
      summary.n_semi_hard += log.n_semi_hard;
      summary.n_hard += log.n_hard;
      summary.n_skipped += log.n_skipped;
      ++summary_steps;
    }
    // After a mid-epoch resume the summary covers only the steps this run
    // contributed; the step log is the canonical record.
    summary.mean_loss /= static_cast<double>(std::max<int64_t>(1, summary_steps));
    state.epochs_done = ++epoch;
    step_in_epoch = 0;
    if (hooks.on_epoch) hooks.on_epoch(summary);
    if (hooks.on_checkpoint) hooks.on_checkpoint(state);
    summary = EpochSummary{};
    summary.epoch = epoch;
    summary_steps = 0;
  }
  state.epochs_done = epoch;
  return state;
}

void save_train_state(const TrainState& state, const std::string& dir) {
  std::string blob;
  blob.reserve(16 + 16 * state.opt.m.embedding.size());
  const auto gf = grad_fields();
  for (auto field : gf)
    for (double x : state.opt.m.*field) append_f64_le(blob, x);
  for (auto field : gf)
    for (double x : state.opt.v.*field) append_f64_le(blob, x);
  {
    std::ofstream out(dir + "/optim.bin", std::ios::binary);
    if (!out) throw IoError("cannot write optimizer state: " + dir);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("write failed: " + dir + "/optim.bin");
  }
  std::ostringstream rng_text;
  state.rng.save(rng_text);
  json meta;
  meta["epochs_done"] = state.epochs_done;
  meta["steps_done"] = state.steps_done;
  meta["adam_step"] = state.opt.step;
  meta["rng_state"] = rng_text.str();
  std::ofstream out(dir + "/train_state.json", std::ios::binary);
  if (!out) throw IoError("cannot write train state: " + dir);
  out << meta.dump(2) << '\n';
}

TrainState load_train_state(const std::string& dir) {
  TrainState state;
  state.params = load_checkpoint(dir);
  state.opt = make_optimizer_state(state.params.config);

  std::ifstream bin(dir + "/optim.bin", std::ios::binary);
  if (!bin) throw IoError("cannot open optimizer state: " + dir);
  std::string blob((std::istreambuf_iterator<char>(bin)),
                   std::istreambuf_iterator<char>());
  size_t expected = 0;
  const auto gf = grad_fields();
  for (auto field : gf) expected += (state.opt.m.*field).size();
  if (blob.size() != 2 * expected * 8)
    throw CorruptCheckpointError("optim.bin size mismatch");
  size_t pos = 0;
  for (auto field : gf)
    for (double& x : state.opt.m.*field) {
      x = read_f64_le(blob.data() + pos);
      pos += 8;
    }
  for (auto field : gf)
    for (double& x : state.opt.v.*field) {
      x = read_f64_le(blob.data() + pos);
      pos += 8;
    }

  std::ifstream min(dir + "/train_state.json", std::ios::binary);
  if (!min) throw IoError("cannot open train state: " + dir);
  json meta;
  try {
    min >> meta;
  } catch (const json::parse_error& e) {
    throw CorruptCheckpointError(std::string("bad train state: ") + e.what());
  }
  state.epochs_done = meta.at("epochs_done").get<int>();
  state.steps_done = meta.at("steps_done").get<int64_t>();
  state.opt.step = meta.at("adam_step").get<int64_t>();
  std::istringstream rng_text(meta.at("rng_state").get<std::string>());
  state.rng.load(rng_text);
  return state;
}

}  // namespace bfsd
