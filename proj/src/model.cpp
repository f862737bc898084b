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

#include "bfsd/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "bfsd/digest.hpp"
#include "bfsd/errors.hpp"
#include "bfsd/parallel.hpp"
#include "bfsd/rng.hpp"

namespace bfsd {

namespace {

using nlohmann::json;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void append_f32_le(std::string& out, float v) {
  const uint32_t u = std::bit_cast<uint32_t>(v);
  out.push_back(static_cast<char>(u & 0xff));
  out.push_back(static_cast<char>((u >> 8) & 0xff));
  out.push_back(static_cast<char>((u >> 16) & 0xff));
  out.push_back(static_cast<char>((u >> 24) & 0xff));
}

float read_f32_le(const char* p) {
  const uint32_t u = (static_cast<uint32_t>(static_cast<uint8_t>(p[0]))) |
                     (static_cast<uint32_t>(static_cast<uint8_t>(p[1])) << 8) |
                     (static_cast<uint32_t>(static_cast<uint8_t>(p[2])) << 16) |
                     (static_cast<uint32_t>(static_cast<uint8_t>(p[3])) << 24);
  return std::bit_cast<float>(u);
}

struct TensorRef {
  const char* name;
  std::vector<float> ModelParameters::* field;
  std::vector<size_t> shape;
};

std::vector<TensorRef> tensor_table(const ModelConfig& c) {
  const size_t V = static_cast<size_t>(c.vocab_size);
  const size_t E = static_cast<size_t>(c.embed_dim);
  const size_t W = static_cast<size_t>(c.window);
  const size_t C = static_cast<size_t>(c.channels);
  const size_t O = static_cast<size_t>(c.output_dim);
  return {
      {"embedding", &ModelParameters::embedding, {V, E}},
      {"conv_w", &ModelParameters::conv_w, {C, W * E}},
      {"conv_b", &ModelParameters::conv_b, {C}},
      {"gate_w", &ModelParameters::gate_w, {C, W * E}},
      {"gate_b", &ModelParameters::gate_b, {C}},
      {"fc_w", &ModelParameters::fc_w, {O, C}},
      {"fc_b", &ModelParameters::fc_b, {O}},
  };
}

size_t shape_elems(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  if (embed_dim < 1 || window < 1 || stride < 1 || channels < 1 ||
      output_dim < 1)
    throw ConfigError("model dimensions must be >= 1");
  if (stride != window)
    throw ConfigError("stride must equal window (non-overlapping windows)");
  if (max_len < window) throw ConfigError("max_len must be >= window");
}

size_t param_count(const ModelConfig& config) {
  config.validate();
  const size_t V = static_cast<size_t>(config.vocab_size);
  const size_t E = static_cast<size_t>(config.embed_dim);
  const size_t W = static_cast<size_t>(config.window);
  const size_t C = static_cast<size_t>(config.channels);
  const size_t O = static_cast<size_t>(config.output_dim);
  return V * E + 2 * (C * W * E + C) + O * C + O;
}

ModelParameters init_params(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ModelParameters p;
  p.config = config;
  for (const auto& t : tensor_table(config))
    (p.*t.field).assign(shape_elems(t.shape), 0.0f);

  Rng rng(seed);
  auto fill_uniform = [&rng](std::vector<float>& v, double r) {
    for (auto& x : v) x = static_cast<float>(rng.uniform(-r, r));
  };

  const double we = static_cast<double>(config.window * config.embed_dim);
  const double conv_r = std::sqrt(6.0 / (we + config.channels));
  const double fc_r =
      std::sqrt(6.0 / (static_cast<double>(config.channels) +
                       static_cast<double>(config.output_dim)));
  fill_uniform(p.embedding, 0.05);
  fill_uniform(p.conv_w, conv_r);
  fill_uniform(p.gate_w, conv_r);
  fill_uniform(p.fc_w, fc_r);
  // Biases stay exactly zero.
  return p;
}

std::vector<uint16_t> pad_and_truncate(std::span<const uint8_t> bytes,
                                       const ModelConfig& config) {
  const size_t w = static_cast<size_t>(config.window);
  const size_t n = std::min(bytes.size(), static_cast<size_t>(config.max_len));
  const size_t padded = std::max(w, (n + w - 1) / w * w);
  std::vector<uint16_t> tokens(padded,
                               static_cast<uint16_t>(config.pad_token()));
  for (size_t i = 0; i < n; ++i) tokens[i] = bytes[i];
  return tokens;
}

Embedding forward_tokens(const ModelParameters& params,
                         std::vector<uint16_t> tokens, ForwardCache& cache) {
  const auto& cfg = params.config;
  const size_t W = static_cast<size_t>(cfg.window);
  const size_t E = static_cast<size_t>(cfg.embed_dim);
  const size_t C = static_cast<size_t>(cfg.channels);
  const size_t O = static_cast<size_t>(cfg.output_dim);
  const size_t WE = W * E;

  if (tokens.empty() || tokens.size() % W != 0)
    throw DimensionError("token length must be a positive window multiple");
  cache.tokens = std::move(tokens);
  const size_t n_windows = cache.tokens.size() / W;

  cache.pooled.assign(C, 0.0);
  cache.winner.assign(C, 0);
  cache.win_act.assign(C, 0.0);
  cache.win_sig.assign(C, 0.0);

  std::vector<double> win_vec(WE);
  for (size_t t = 0; t < n_windows; ++t) {
    for (size_t j = 0; j < W; ++j) {
      const size_t tok = cache.tokens[t * W + j];
      for (size_t d = 0; d < E; ++d)
        win_vec[j * E + d] = params.embedding[tok * E + d];
    }
    for (size_t c = 0; c < C; ++c) {
      double a = params.conv_b[c];
      double g = params.gate_b[c];
      const float* wa = &params.conv_w[c * WE];
      const float* wg = &params.gate_w[c * WE];
      for (size_t m = 0; m < WE; ++m) {
        a += static_cast<double>(wa[m]) * win_vec[m];
        g += static_cast<double>(wg[m]) * win_vec[m];
      }
      const double s = sigmoid(g);
      const double gated = a * s;
      if (t == 0 || gated > cache.pooled[c]) {
        cache.pooled[c] = gated;
        cache.winner[c] = static_cast<int32_t>(t);
        cache.win_act[c] = a;
        cache.win_sig[c] = s;
      }
    }
  }

  Embedding out(O);
  for (size_t o = 0; o < O; ++o) {
    double acc = params.fc_b[o];
    const float* wf = &params.fc_w[o * C];
    for (size_t c = 0; c < C; ++c)
      acc += static_cast<double>(wf[c]) * cache.pooled[c];
    out[o] = acc;
  }
  return out;
}

Embedding forward_cached(const ModelParameters& params,
                         std::span<const uint8_t> bytes, ForwardCache& cache) {
  if (bytes.empty()) throw EmptyFunctionError("cannot embed empty function");
  return forward_tokens(params, pad_and_truncate(bytes, params.config), cache);
}

Embedding forward(const ModelParameters& params,
                  std::span<const uint8_t> bytes) {
  ForwardCache cache;
  return forward_cached(params, bytes, cache);
}

std::vector<Embedding> forward_batch(
    const ModelParameters& params,
    const std::vector<std::span<const uint8_t>>& items) {
  std::vector<Embedding> out(items.size());
  parallel_for(items.size(), [&](size_t i) {
    try {
      out[i] = forward(params, items[i]);
    } catch (const EmptyFunctionError& e) {
      throw EmptyFunctionError("item " + std::to_string(i) + ": " + e.what());
    }
  });
  return out;
}

ParamGrads make_grads(const ModelConfig& config) {
  const auto tensors = tensor_table(config);
  ParamGrads g;
  g.embedding.assign(shape_elems(tensors[0].shape), 0.0);
  g.conv_w.assign(shape_elems(tensors[1].shape), 0.0);
  g.conv_b.assign(shape_elems(tensors[2].shape), 0.0);
  g.gate_w.assign(shape_elems(tensors[3].shape), 0.0);
  g.gate_b.assign(shape_elems(tensors[4].shape), 0.0);
  g.fc_w.assign(shape_elems(tensors[5].shape), 0.0);
  g.fc_b.assign(shape_elems(tensors[6].shape), 0.0);
  return g;
}

void ParamGrads::add(const ParamGrads& other) {
  auto axpy = [](std::vector<double>& a, const std::vector<double>& b) {
    for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  };
  axpy(embedding, other.embedding);
  axpy(conv_w, other.conv_w);
  axpy(conv_b, other.conv_b);
  axpy(gate_w, other.gate_w);
  axpy(gate_b, other.gate_b);
  axpy(fc_w, other.fc_w);
  axpy(fc_b, other.fc_b);
}

void backward_item(const ModelParameters& params, const ForwardCache& cache,
                   std::span<const double> d_output, ParamGrads& grads) {
  const auto& cfg = params.config;
  const size_t W = static_cast<size_t>(cfg.window);
  const size_t E = static_cast<size_t>(cfg.embed_dim);
  const size_t C = static_cast<size_t>(cfg.channels);
  const size_t O = static_cast<size_t>(cfg.output_dim);
  const size_t WE = W * E;
  if (d_output.size() != O)
    throw DimensionError("d_output dimension mismatch");

  std::vector<double> d_pool(C, 0.0);
  for (size_t o = 0; o < O; ++o) {
    const double dout = d_output[o];
    grads.fc_b[o] += dout;
    const float* wf = &params.fc_w[o * C];
    for (size_t c = 0; c < C; ++c) {
      grads.fc_w[o * C + c] += dout * cache.pooled[c];
      d_pool[c] += dout * static_cast<double>(wf[c]);
    }
  }

  std::vector<double> win_vec(WE);
  for (size_t c = 0; c < C; ++c) {
    const double dp = d_pool[c];
    if (dp == 0.0) continue;
    const size_t t = static_cast<size_t>(cache.winner[c]);
    for (size_t j = 0; j < W; ++j) {
      const size_t tok = cache.tokens[t * W + j];
      for (size_t d = 0; d < E; ++d)
        win_vec[j * E + d] = params.embedding[tok * E + d];
    }
    const double s = cache.win_sig[c];
    const double da = dp * s;
    const double dg = dp * cache.win_act[c] * s * (1.0 - s);
    grads.conv_b[c] += da;
    grads.gate_b[c] += dg;
    const float* wa = &params.conv_w[c * WE];
    const float* wg = &params.gate_w[c * WE];
    for (size_t j = 0; j < W; ++j) {
      const size_t tok = cache.tokens[t * W + j];
      for (size_t d = 0; d < E; ++d) {
        const size_t m = j * E + d;
        grads.conv_w[c * WE + m] += da * win_vec[m];
        grads.gate_w[c * WE + m] += dg * win_vec[m];
        grads.embedding[tok * E + d] += da * static_cast<double>(wa[m]) +
                                        dg * static_cast<double>(wg[m]);
      }
    }
  }
}

void save_checkpoint(const ModelParameters& params, const std::string& dir,
                     uint64_t init_seed, const std::string& extra_json) {
  std::filesystem::create_directories(dir);
  const auto tensors = tensor_table(params.config);

  json header;
  header["format_version"] = 1;
  header["config"] = {
      {"vocab_size", params.config.vocab_size},
      {"embed_dim", params.config.embed_dim},
      {"window", params.config.window},
      {"stride", params.config.stride},
      {"channels", params.config.channels},
      {"output_dim", params.config.output_dim},
      {"max_len", params.config.max_len},
  };
  header["init_seed"] = init_seed;

  std::string blob;
  json tensor_list = json::array();
  size_t offset = 0;
  for (const auto& t : tensors) {
    const std::vector<float>& data = params.*t.field;
    const size_t bytes = data.size() * 4;
    tensor_list.push_back(
        {{"name", t.name}, {"shape", t.shape}, {"offset", offset},
         {"bytes", bytes}});
    for (float v : data) append_f32_le(blob, v);
    offset += bytes;
  }
  header["tensors"] = tensor_list;
  if (!extra_json.empty()) header["extra"] = json::parse(extra_json);

  {
    std::ofstream out(dir + "/header.json", std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint header: " + dir);
    out << header.dump(2) << '\n';
  }
  {
    std::ofstream out(dir + "/params.bin", std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint params: " + dir);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("write failed: " + dir + "/params.bin");
  }
}

ModelParameters load_checkpoint(const std::string& dir) {
  std::ifstream hin(dir + "/header.json", std::ios::binary);
  if (!hin) throw IoError("cannot open checkpoint header: " + dir);
  json header;
  try {
    hin >> header;
  } catch (const json::parse_error& e) {
    throw CorruptCheckpointError(std::string("bad checkpoint header: ") +
                                 e.what());
  }

  if (!header.contains("format_version") ||
      !header.at("format_version").is_number_integer())
    throw CorruptCheckpointError("checkpoint header missing format_version");
  if (header.at("format_version").get<int>() != 1)
    throw VersionError("unsupported checkpoint format_version " +
                       header.at("format_version").dump());

  ModelParameters p;
  try {
    const auto& c = header.at("config");
    p.config.vocab_size = c.at("vocab_size").get<int>();
    p.config.embed_dim = c.at("embed_dim").get<int>();
    p.config.window = c.at("window").get<int>();
    p.config.stride = c.at("stride").get<int>();
    p.config.channels = c.at("channels").get<int>();
    p.config.output_dim = c.at("output_dim").get<int>();
    p.config.max_len = c.at("max_len").get<int>();
  } catch (const json::exception& e) {
    throw CorruptCheckpointError(std::string("bad checkpoint config: ") +
                                 e.what());
  }
  try {
    p.config.validate();
  } catch (const ConfigError& e) {
    throw CorruptCheckpointError(std::string("invalid checkpoint config: ") +
                                 e.what());
  }

  const auto tensors = tensor_table(p.config);
  if (!header.contains("tensors") || !header.at("tensors").is_array() ||
      header.at("tensors").size() != tensors.size())
    throw CorruptCheckpointError("checkpoint tensor table mismatch");

  size_t offset = 0;
  for (size_t i = 0; i < tensors.size(); ++i) {
    const auto& entry = header.at("tensors").at(i);
    if (entry.at("name").get<std::string>() != tensors[i].name)
      throw CorruptCheckpointError("unexpected tensor name: " +
                                   entry.at("name").dump());
    const auto shape = entry.at("shape").get<std::vector<size_t>>();
    if (shape != tensors[i].shape)
      throw CorruptCheckpointError(
          std::string("tensor shape mismatch for ") + tensors[i].name);
    if (entry.at("offset").get<size_t>() != offset ||
        entry.at("bytes").get<size_t>() != shape_elems(shape) * 4)
      throw CorruptCheckpointError(
          std::string("tensor layout mismatch for ") + tensors[i].name);
    offset += shape_elems(shape) * 4;
  }

  std::ifstream bin(dir + "/params.bin", std::ios::binary);
  if (!bin) throw IoError("cannot open checkpoint params: " + dir);
  std::string blob((std::istreambuf_iterator<char>(bin)),
                   std::istreambuf_iterator<char>());
  if (blob.size() != offset)
    throw CorruptCheckpointError(
        "params.bin size mismatch: expected " + std::to_string(offset) +
        " bytes, got " + std::to_string(blob.size()));

  size_t pos = 0;
  for (const auto& t : tensors) {
    std::vector<float>& data = p.*t.field;
    data.resize(shape_elems(t.shape));
    for (auto& v : data) {
      v = read_f32_le(blob.data() + pos);
      pos += 4;
    }
  }
  return p;
}

std::string checkpoint_digest(const std::string& dir) {
  return sha256_file(dir + "/params.bin").hex();
}

}  // namespace bfsd
