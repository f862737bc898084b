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
// Byte-level embedding network: learned byte embedding, two parallel 1-D
// convolutions over non-overlapping windows combined by multiplicative
// sigmoid gating, temporal max-pool, and a single fully-connected layer.
// Parameters are stored as 32-bit floats (the checkpoint format); all
// arithmetic runs in double with fixed accumulation order, so results are
// bit-reproducible for a given (seed, config, input).

#ifndef BFSD_MODEL_HPP
#define BFSD_MODEL_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace bfsd {

struct ModelConfig {
  int vocab_size = 257;  // bytes 0-255 plus PAD
  int embed_dim = 8;
  int window = 8;
  int stride = 8;  // must equal window (non-overlapping)
  int channels = 128;
  int output_dim = 128;
  int max_len = 16384;  // truncation length in bytes

  int pad_token() const { return vocab_size - 1; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// All learned tensors, row-major. conv_* weights are
// channels x (window * embed_dim); fc_w is output_dim x channels.
struct ModelParameters {
  ModelConfig config;
  std::vector<float> embedding;  // vocab_size x embed_dim
  std::vector<float> conv_w, conv_b;  // filter branch
  std::vector<float> gate_w, gate_b;  // gate branch
  std::vector<float> fc_w, fc_b;

  bool operator==(const ModelParameters&) const = default;
};

using Embedding = std::vector<double>;

size_t param_count(const ModelConfig& config);

// Byte embedding ~ U(-0.05, 0.05); conv and FC weights ~ U(-r, r) with
// r = sqrt(6 / (fan_in + fan_out)); biases zero. Deterministic per seed.
ModelParameters init_params(const ModelConfig& config, uint64_t seed);

// Truncates to max_len, then extends with PAD to the next multiple of
// window. Output length is always >= window.
std::vector<uint16_t> pad_and_truncate(std::span<const uint8_t> bytes,
                                       const ModelConfig& config);

// Per-item forward state kept for the backward pass: the winning window
// per channel plus its pre-gating activations.
struct ForwardCache {
  std::vector<uint16_t> tokens;
  std::vector<double> pooled;    // channels
  std::vector<int32_t> winner;   // channels; lowest window index on ties
  std::vector<double> win_act;   // filter-branch activation at winner
  std::vector<double> win_sig;   // sigmoid(gate activation) at winner
};

Embedding forward(const ModelParameters& params,
                  std::span<const uint8_t> bytes);

Embedding forward_cached(const ModelParameters& params,
                         std::span<const uint8_t> bytes, ForwardCache& cache);

// Forward over an already-tokenized sequence whose length is a positive
// multiple of window. forward() is exactly
// forward_tokens(pad_and_truncate(bytes)).
Embedding forward_tokens(const ModelParameters& params,
                         std::vector<uint16_t> tokens, ForwardCache& cache);

// Elementwise equal to forward(); items processed independently, outputs in
// input order. Safe for concurrent readers of params.
std::vector<Embedding> forward_batch(
    const ModelParameters& params,
    const std::vector<std::span<const uint8_t>>& items);

// Gradient accumulators mirroring ModelParameters, in double.
struct ParamGrads {
  std::vector<double> embedding;
  std::vector<double> conv_w, conv_b;
  std::vector<double> gate_w, gate_b;
  std::vector<double> fc_w, fc_b;

  void add(const ParamGrads& other);
};

ParamGrads make_grads(const ModelConfig& config);

// Accumulates d(loss)/d(params) for one item into grads, given
// d(loss)/d(output). The max-pool routes gradient to the winning window
// only (lowest index on ties, matching forward_cached).
void backward_item(const ModelParameters& params, const ForwardCache& cache,
                   std::span<const double> d_output, ParamGrads& grads);

// Checkpoint directory: header.json (format version, config, per-tensor
// shapes and byte offsets, seed provenance) + params.bin (little-endian
// 32-bit floats concatenated in header order). Round-trips bit-identically.
void save_checkpoint(const ModelParameters& params, const std::string& dir,
                     uint64_t init_seed,
                     const std::string& extra_json = std::string());
ModelParameters load_checkpoint(const std::string& dir);

// 64-char hex SHA-256 of params.bin; used as lineage for embeddings.
std::string checkpoint_digest(const std::string& dir);

}  // namespace bfsd

#endif  // BFSD_MODEL_HPP
