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

#include "bfsd/config.hpp"

#include <charconv>
#include <fstream>
#include <set>

#include "json.hpp"

#include "bfsd/errors.hpp"

namespace bfsd {

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> kKeys = {
      "seed", "threads",
      "corpus", "split", "labels", "checkpoint", "embeddings", "side",
      "curate.ratio", "curate.common_threshold", "curate.singleton_max_frac",
      "curate.scheme",
      "model.embed_dim", "model.window", "model.stride", "model.channels",
      "model.output_dim", "model.max_len",
      "train.margin", "train.learning_rate", "train.beta1", "train.beta2",
      "train.eps", "train.clip_lo", "train.clip_hi",
      "train.labels_per_batch", "train.functions_per_epoch", "train.epochs",
      "index.kind", "index.k", "index.hnsw_m", "index.hnsw_ef_construction",
      "index.hnsw_ef_search", "index.hnsw_seed",
      "eval.schemes", "eval.pool_sizes", "eval.pool_queries",
  };
  return kKeys;
}

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r'))
    --e;
  return s.substr(b, e - b);
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  RunConfig cfg;
  std::string line, section;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    if (cfg.entries_.count(key))
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": duplicate key \"" + key + "\"");
    cfg.entries_[key] = value;
  }
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

bool RunConfig::has(const std::string& key) const {
  return entries_.count(key) != 0;
}

std::string RunConfig::get_str(const std::string& key,
                               const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

std::string RunConfig::require_str(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end())
    throw ConfigError("missing required config key \"" + key + "\"");
  return it->second;
}

int64_t RunConfig::get_int(const std::string& key, int64_t fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  int64_t value = 0;
  const auto [p, ec] = std::from_chars(
      it->second.data(), it->second.data() + it->second.size(), value);
  if (ec != std::errc() || p != it->second.data() + it->second.size())
    throw ConfigError("config key \"" + key + "\" is not an integer: " +
                      it->second);
  return value;
}

uint64_t RunConfig::get_uint(const std::string& key, uint64_t fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  uint64_t value = 0;
  const auto [p, ec] = std::from_chars(
      it->second.data(), it->second.data() + it->second.size(), value);
  if (ec != std::errc() || p != it->second.data() + it->second.size())
    throw ConfigError("config key \"" + key +
                      "\" is not an unsigned integer: " + it->second);
  return value;
}

double RunConfig::get_double(const std::string& key, double fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    size_t used = 0;
    const double value = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return value;
  } catch (const std::exception&) {
    throw ConfigError("config key \"" + key + "\" is not a number: " +
                      it->second);
  }
}

uint64_t RunConfig::require_seed() const {
  if (!has("seed"))
    throw ConfigError("a seed is mandatory for this command (--seed N)");
  return get_uint("seed", 0);
}

void RunConfig::validate_keys() const {
  for (const auto& [key, value] : entries_) {
    if (!known_keys().count(key))
      throw ConfigError("unknown config key \"" + key + "\"");
  }
}

ModelConfig RunConfig::model_config() const {
  ModelConfig cfg;
  cfg.embed_dim = static_cast<int>(get_int("model.embed_dim", cfg.embed_dim));
  cfg.window = static_cast<int>(get_int("model.window", cfg.window));
  cfg.stride = static_cast<int>(get_int("model.stride", cfg.stride));
  cfg.channels = static_cast<int>(get_int("model.channels", cfg.channels));
  cfg.output_dim =
      static_cast<int>(get_int("model.output_dim", cfg.output_dim));
  cfg.max_len = static_cast<int>(get_int("model.max_len", cfg.max_len));
  cfg.validate();
  return cfg;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig cfg;
  cfg.margin = get_double("train.margin", cfg.margin);
  cfg.learning_rate = get_double("train.learning_rate", cfg.learning_rate);
  cfg.adam_beta1 = get_double("train.beta1", cfg.adam_beta1);
  cfg.adam_beta2 = get_double("train.beta2", cfg.adam_beta2);
  cfg.adam_eps = get_double("train.eps", cfg.adam_eps);
  cfg.clip_lo = get_double("train.clip_lo", cfg.clip_lo);
  cfg.clip_hi = get_double("train.clip_hi", cfg.clip_hi);
  cfg.labels_per_batch = static_cast<int>(
      get_int("train.labels_per_batch", cfg.labels_per_batch));
  cfg.functions_per_epoch =
      get_int("train.functions_per_epoch", cfg.functions_per_epoch);
  cfg.epochs = static_cast<int>(get_int("train.epochs", cfg.epochs));
  cfg.seed = require_seed();
  cfg.validate();
  return cfg;
}

IndexConfig RunConfig::index_config(size_t n_vectors) const {
  IndexConfig cfg;
  const std::string kind = get_str("index.kind", "auto");
  if (kind == "auto") {
    // Exact numbers by default at desk scale; approximate above 100k.
    cfg.kind =
        n_vectors < 100000 ? IndexKind::Exact : IndexKind::ApproxHNSW;
  } else if (kind == "exact") {
    cfg.kind = IndexKind::Exact;
  } else if (kind == "hnsw") {
    cfg.kind = IndexKind::ApproxHNSW;
  } else {
    throw ConfigError("index.kind must be auto, exact, or hnsw");
  }
  cfg.k = static_cast<int>(get_int("index.k", cfg.k));
  cfg.hnsw_m = static_cast<int>(get_int("index.hnsw_m", cfg.hnsw_m));
  cfg.hnsw_ef_construction = static_cast<int>(
      get_int("index.hnsw_ef_construction", cfg.hnsw_ef_construction));
  cfg.hnsw_ef_search =
      static_cast<int>(get_int("index.hnsw_ef_search", cfg.hnsw_ef_search));
  cfg.hnsw_seed = get_uint("index.hnsw_seed", cfg.hnsw_seed);
  cfg.validate();
  return cfg;
}

std::string RunConfig::to_json() const {
  nlohmann::json obj(entries_);
  return obj.dump();
}

}  // namespace bfsd
