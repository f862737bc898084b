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
// Key=value configuration with INI-style sections. Flags override file
// values; the effective map is echoed into every output artifact so a run
// is a pure function of (inputs, config, seed).

#ifndef BFSD_CONFIG_HPP
#define BFSD_CONFIG_HPP

#include <cstdint>
#include <map>
#include <string>

#include "bfsd/model.hpp"
#include "bfsd/retrieval.hpp"
#include "bfsd/training.hpp"

namespace bfsd {

class RunConfig {
 public:
  RunConfig() = default;

  // Parses "key = value" lines; "[section]" prefixes keys as "section.key";
  // '#' and ';' start comments. Duplicate keys are rejected.
  static RunConfig from_file(const std::string& path);

  // Later set() wins (flag overrides).
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_str(const std::string& key,
                      const std::string& fallback) const;
  std::string require_str(const std::string& key) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  uint64_t get_uint(const std::string& key, uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;

  uint64_t require_seed() const;  // seed is mandatory for stochastic commands

  // Rejects keys outside the documented set (typo safety).
  void validate_keys() const;

  ModelConfig model_config() const;
  TrainConfig train_config() const;
  // `auto` index kind resolves by corpus size; pass the vector count.
  IndexConfig index_config(size_t n_vectors) const;

  const std::map<std::string, std::string>& entries() const {
    return entries_;
  }
  // Effective config as a JSON object string, for artifact echoes.
  std::string to_json() const;

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace bfsd

#endif  // BFSD_CONFIG_HPP
