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
// Triplet training loop: label-pair batch construction, cosine distances,
// online semi-hard mining with one triplet per anchor, hinge loss with
// exact gradients, and clipped Adam. Parameter and optimizer state have a
// single-mutator contract; batch fan-out reduces in ascending item order.

#ifndef BFSD_TRAINING_HPP
#define BFSD_TRAINING_HPP

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bfsd/corpus.hpp"
#include "bfsd/curation.hpp"
#include "bfsd/model.hpp"
#include "bfsd/rng.hpp"

namespace bfsd {

struct TrainConfig {
  double margin = 0.2;
  double learning_rate = 0.005;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_lo = -1.0;
  double clip_hi = 1.0;
  int labels_per_batch = 300;  // batch = 2 * labels_per_batch functions
  int64_t functions_per_epoch = 10'000'000;
  int epochs = 30;
  uint64_t seed = 0;

  void validate() const;
};

enum class TripletCategory { SemiHard = 0, Hard = 1 };

struct Triplet {
  int32_t anchor = 0;
  int32_t positive = 0;
  int32_t negative = 0;
  TripletCategory category = TripletCategory::SemiHard;
  double loss = 0.0;

  bool operator==(const Triplet&) const = default;
};

// Mined triplets plus the batch items they index into.
struct TripletBatch {
  std::vector<std::span<const uint8_t>> items;
  std::vector<Triplet> triplets;
};

struct OptimizerState {
  ParamGrads m;  // first moments
  ParamGrads v;  // second moments
  int64_t step = 0;
};

OptimizerState make_optimizer_state(const ModelConfig& config);

// 1 - (u.v) / ((|u|+eps)(|v|+eps)), eps = 1e-12. Range [0, 2].
double cosine_distance(std::span<const double> u, std::span<const double> v);

// max(d_ap - d_an + alpha, 0).
double triplet_hinge(double d_ap, double d_an, double alpha);

// Training-side view: byte payloads and integer labels in canonical order,
// with per-label buckets and the list of labels usable for positive pairs.
struct LabeledSet {
  const Corpus* corpus = nullptr;
  std::vector<size_t> positions;  // into corpus records
  std::vector<int32_t> labels;    // per position
  std::vector<std::vector<int32_t>> by_label;  // label id -> indices here
  std::vector<int32_t> eligible;  // label ids with multiplicity >= 2

  std::span<const uint8_t> bytes_of(size_t i) const {
    return std::span<const uint8_t>(corpus->at(positions[i]).bytes);
  }
};

LabeledSet build_labeled_set(const Corpus& corpus, const RecordSubset& subset,
                             const LabelTable& table);

// Samples n_labels distinct labels of multiplicity >= 2 without replacement
// and two distinct records per label. Returns 2*n_labels indices into
// set.positions, laid out as pairs (2i, 2i+1) sharing a label.
std::vector<int32_t> sample_batch(const LabeledSet& set, int n_labels,
                                  Rng& rng);

// Flat n x n matrix of pairwise cosine distances, zero diagonal.
std::vector<double> pairwise_cosine(const std::vector<Embedding>& embeddings);

// For each anchor a with fixed positive (its pair partner), picks at most
// one negative: the semi-hard negative with minimal d(a,n) when one exists
// (d_ap <= d(a,n) < d_ap + alpha), otherwise the hard negative with maximal
// d(a,n) (d(a,n) < d_ap). Anchors whose negatives are all easy emit
// nothing. Ties go to the lowest index.
std::vector<Triplet> mine_triplets(const std::vector<double>& dist, size_t n,
                                   const std::vector<int32_t>& labels,
                                   double alpha);

// Mean hinge over the given triplets with exact analytic gradients through
// cosine distance, max-pool, gating and the byte embedding. An empty
// triplet list yields loss 0 and zero gradients.
std::pair<double, ParamGrads> loss_and_grad(const ModelParameters& params,
                                            const TripletBatch& batch,
                                            double margin);

// Clamps each raw gradient component to [clip_lo, clip_hi], then applies a
// bias-corrected Adam update. Throws NonFiniteGradientError (and leaves
// params and state untouched) on any non-finite gradient component.
void adam_step(ModelParameters& params, const ParamGrads& grads,
               OptimizerState& state, const TrainConfig& config);

struct TrainStepLog {
  int64_t step = 0;
  int epoch = 0;
  double loss = 0.0;
  int n_semi_hard = 0;
  int n_hard = 0;
  int n_skipped = 0;
  int64_t wall_ms = 0;
};

struct EpochSummary {
  int epoch = 0;
  double mean_loss = 0.0;
  int64_t n_semi_hard = 0;
  int64_t n_hard = 0;
  int64_t n_skipped = 0;
};

// Mutable training state; checkpointed after every epoch so interrupted
// runs resume and reproduce the uninterrupted step stream.
struct TrainState {
  ModelParameters params;
  OptimizerState opt;
  Rng rng{0};
  int epochs_done = 0;
  int64_t steps_done = 0;
};

struct TrainHooks {
  std::function<void(const TrainStepLog&)> on_step;
  std::function<void(const EpochSummary&)> on_epoch;
  // Called after every completed epoch and on interrupt.
  std::function<void(const TrainState&)> on_checkpoint;
  // When set and true, training stops at the next step boundary.
  const std::atomic<bool>* interrupt = nullptr;
};

// Runs sample -> forward -> distances -> mine -> loss/grad -> adam for
// epochs * (functions_per_epoch / batch) steps. Pass a state from a
// previous run to resume; otherwise parameters are freshly initialized
// from train seed-derived streams.
TrainState train(const LabeledSet& set, const ModelConfig& model_config,
                 const TrainConfig& train_config,
                 const TrainHooks& hooks = {},
                 std::optional<TrainState> resume = std::nullopt);

// Optimizer + RNG sidecar persisted next to the model checkpoint.
void save_train_state(const TrainState& state, const std::string& dir);
TrainState load_train_state(const std::string& dir);

}  // namespace bfsd

#endif  // BFSD_TRAINING_HPP
