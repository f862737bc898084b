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

#include "bfsd/curation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include "json.hpp"

#include "bfsd/errors.hpp"
#include "bfsd/rng.hpp"

namespace bfsd {

namespace {
using nlohmann::json;
}

const char* to_string(Side side) {
  return side == Side::Train ? "Train" : "Test";
}

Side side_from_string(const std::string& s) {
  if (s == "Train") return Side::Train;
  if (s == "Test") return Side::Test;
  throw SchemaError("side must be \"Train\" or \"Test\", got \"" + s + "\"");
}

const char* to_string(LabelScheme scheme) {
  switch (scheme) {
    case LabelScheme::None: return "None";
    case LabelScheme::MaskType: return "MaskType";
    case LabelScheme::MaskSource: return "MaskSource";
    case LabelScheme::MaskBoth: return "MaskBoth";
  }
  return "None";
}

LabelScheme scheme_from_string(const std::string& s) {
  if (s == "None") return LabelScheme::None;
  if (s == "MaskType") return LabelScheme::MaskType;
  if (s == "MaskSource") return LabelScheme::MaskSource;
  if (s == "MaskBoth") return LabelScheme::MaskBoth;
  throw SchemaError("unknown label scheme \"" + s + "\"");
}

SplitAssignment split_by_source(const Corpus& corpus, double ratio,
                                uint64_t seed) {
  if (corpus.size() == 0) throw EmptyCorpusError("cannot split empty corpus");
  if (!(ratio > 0.0 && ratio < 1.0))
    throw ConfigError("split ratio must be in (0, 1)");

  // Distinct sources in first-appearance order, with function counts.
  std::vector<std::string> sources;
  std::unordered_map<std::string, size_t> count_of;
  for (const auto& rec : corpus.records()) {
    auto [it, inserted] = count_of.emplace(rec.source_id, 0);
    if (inserted) sources.push_back(rec.source_id);
    ++it->second;
  }

  Rng rng(seed);
  rng.shuffle(sources);
  // Largest first; the shuffle is the tie-break among equal counts.
  std::stable_sort(sources.begin(), sources.end(),
                   [&](const std::string& a, const std::string& b) {
                     return count_of[a] > count_of[b];
                   });

  const double target = ratio * static_cast<double>(corpus.size());
  std::unordered_map<std::string, Side> side_of_source;
  size_t train_count = 0;
  for (const auto& src : sources) {
    const size_t c = count_of[src];
    // The first source always trains; afterwards a source joins Train only
    // if that keeps the train side at or below the target.
    if (train_count == 0 ||
        static_cast<double>(train_count + c) <= target) {
      side_of_source[src] = Side::Train;
      train_count += c;
    } else {
      side_of_source[src] = Side::Test;
    }
  }

  SplitAssignment split;
  split.ratio = ratio;
  for (const auto& rec : corpus.records())
    split.side[rec.id] = side_of_source[rec.source_id];
  return split;
}

SplitAssignment restrict_common_functions(const Corpus& corpus,
                                          const SplitAssignment& split,
                                          double threshold) {
  std::set<std::string> all_binaries;
  std::map<std::string, std::set<std::string>> binaries_of_name;
  std::map<std::string, std::vector<size_t>> positions_of_name;
  for (size_t pos = 0; pos < corpus.size(); ++pos) {
    const auto& rec = corpus.at(pos);
    all_binaries.insert(rec.binary_id);
    binaries_of_name[rec.name].insert(rec.binary_id);
    positions_of_name[rec.name].push_back(pos);
  }
  const double cutoff = threshold * static_cast<double>(all_binaries.size());

  SplitAssignment out = split;
  for (const auto& [name, binaries] : binaries_of_name) {
    if (static_cast<double>(binaries.size()) <= cutoff) continue;
    size_t on_train = 0, on_test = 0;
    for (size_t pos : positions_of_name[name]) {
      auto it = out.side.find(corpus.at(pos).id);
      if (it == out.side.end()) continue;
      (it->second == Side::Train ? on_train : on_test)++;
    }
    const Side drop = on_train >= on_test ? Side::Test : Side::Train;
    for (size_t pos : positions_of_name[name]) {
      auto it = out.side.find(corpus.at(pos).id);
      if (it != out.side.end() && it->second == drop) out.side.erase(it);
    }
  }
  return out;
}

RecordSubset side_records(const Corpus& corpus, const SplitAssignment& split,
                          Side side) {
  RecordSubset subset;
  for (size_t pos = 0; pos < corpus.size(); ++pos) {
    auto it = split.side.find(corpus.at(pos).id);
    if (it != split.side.end() && it->second == side) subset.push_back(pos);
  }
  return subset;
}

RecordSubset dedup(const Corpus& corpus, const RecordSubset& subset) {
  RecordSubset out;
  std::unordered_set<Digest, DigestHasher> seen;
  for (size_t pos : subset) {
    if (seen.insert(byte_hash(corpus.at(pos))).second) out.push_back(pos);
  }
  return out;
}

LabelStats compute_label_stats(const Corpus& corpus,
                               const RecordSubset& subset) {
  LabelStats stats;
  for (size_t pos : subset) {
    const auto& rec = corpus.at(pos);
    auto& slot = stats.per_name[rec.name][static_cast<size_t>(rec.build_mode)];
    if (!slot) slot.emplace();
    slot->sizes.push_back(rec.bytes.size());
  }
  for (auto& [name, modes] : stats.per_name) {
    for (auto& slot : modes) {
      if (!slot) continue;
      double sum = 0.0;
      for (size_t s : slot->sizes) sum += static_cast<double>(s);
      const double n = static_cast<double>(slot->sizes.size());
      slot->mean = sum / n;
      double sq = 0.0;
      for (size_t s : slot->sizes) {
        const double d = static_cast<double>(s) - slot->mean;
        sq += d * d;
      }
      slot->stddev = std::sqrt(sq / n);
      // mean > 0 always: function bytes are non-empty.
      slot->norm_dev = slot->stddev / slot->mean;
    }
  }
  return stats;
}

LabelRule labeling_rule_for(const std::string& name, const LabelStats& stats) {
  auto it = stats.per_name.find(name);
  if (it == stats.per_name.end())
    throw LabelError("name absent from label stats: " + name);

  bool small_everywhere = true;
  for (const auto& slot : it->second) {
    if (!slot) continue;
    for (size_t s : slot->sizes)
      if (s > 25) small_everywhere = false;
  }
  if (small_everywhere) return LabelRule::SmallEverywhere;

  if (name.size() >= 100) return LabelRule::LongName;

  bool stable = true;
  for (const auto& slot : it->second) {
    if (slot && !(slot->norm_dev < 0.05)) stable = false;
  }
  if (stable) return LabelRule::StableSize;

  return LabelRule::PerSource;
}

LabelTable assign_labels(const Corpus& corpus, const RecordSubset& subset,
                         const LabelStats& stats) {
  LabelTable table;
  std::unordered_map<std::string, int32_t> intern;
  std::unordered_map<std::string, LabelRule> rule_of;
  for (size_t pos : subset) {
    const auto& rec = corpus.at(pos);
    auto rit = rule_of.find(rec.name);
    if (rit == rule_of.end())
      rit = rule_of.emplace(rec.name, labeling_rule_for(rec.name, stats)).first;
    const std::string canonical = rit->second == LabelRule::PerSource
                                      ? rec.source_id + "\\" + rec.name
                                      : rec.name;
    auto [lit, inserted] =
        intern.emplace(canonical, static_cast<int32_t>(table.canonical.size()));
    if (inserted) table.canonical.push_back(canonical);
    table.label_of[rec.id] = lit->second;
  }
  return table;
}

RecordSubset downsample_singletons(const Corpus& corpus,
                                   const RecordSubset& subset,
                                   const LabelTable& table, double max_frac,
                                   uint64_t seed) {
  if (!(max_frac >= 0.0 && max_frac < 1.0))
    throw ConfigError("singleton max fraction must be in [0, 1)");

  std::vector<size_t> multiplicity(table.canonical.size(), 0);
  std::vector<int32_t> label_at(subset.size());
  for (size_t i = 0; i < subset.size(); ++i) {
    auto it = table.label_of.find(corpus.at(subset[i]).id);
    if (it == table.label_of.end())
      throw LabelError("record not in label table: " +
                       corpus.at(subset[i]).id);
    label_at[i] = it->second;
    ++multiplicity[static_cast<size_t>(it->second)];
  }

  std::vector<size_t> singleton_positions;  // indexes into subset
  for (size_t i = 0; i < subset.size(); ++i)
    if (multiplicity[static_cast<size_t>(label_at[i])] == 1)
      singleton_positions.push_back(i);

  const size_t n_singletons = singleton_positions.size();
  const size_t n_non = subset.size() - n_singletons;
  if (n_singletons == 0) return subset;

  // Largest k with k <= max_frac * (n_non + k).
  auto fits = [&](size_t k) {
    return static_cast<double>(k) <=
           max_frac * static_cast<double>(n_non + k);
  };
  size_t keep = static_cast<size_t>(
      std::floor(max_frac * static_cast<double>(n_non) / (1.0 - max_frac)));
  while (fits(keep + 1)) ++keep;
  while (keep > 0 && !fits(keep)) --keep;
  keep = std::min(keep, n_singletons);

  Rng rng(seed);
  rng.shuffle(singleton_positions);
  std::vector<bool> kept(subset.size(), true);
  for (size_t i = keep; i < n_singletons; ++i)
    kept[singleton_positions[i]] = false;

  RecordSubset out;
  out.reserve(n_non + keep);
  for (size_t i = 0; i < subset.size(); ++i)
    if (kept[i]) out.push_back(subset[i]);
  return out;
}

std::string mask_type(const std::string& name) {
  std::string out;
  out.reserve(name.size());
  int depth = 0;
  for (char c : name) {
    if (c == '<') {
      ++depth;
    } else if (c == '>') {
      --depth;
      if (depth < 0) return name;  // unbalanced
      if (depth == 0) out += "<#>";
    } else if (depth == 0) {
      out.push_back(c);
    }
  }
  if (depth != 0) return name;  // unbalanced
  return out;
}

std::string mask_source(const std::string& label) {
  size_t i = 0;
  while (i < label.size() && label[i] >= '0' && label[i] <= '9') ++i;
  if (i > 0 && i < label.size() && label[i] == '\\')
    return label.substr(i + 1);
  return label;
}

LabelTable normalize_labels(const LabelTable& table, LabelScheme scheme) {
  auto transform = [scheme](const std::string& s) {
    switch (scheme) {
      case LabelScheme::None: return s;
      case LabelScheme::MaskType: return mask_type(s);
      case LabelScheme::MaskSource: return mask_source(s);
      case LabelScheme::MaskBoth: return mask_type(mask_source(s));
    }
    return s;
  };

  LabelTable out;
  out.scheme = scheme;
  std::unordered_map<std::string, int32_t> intern;
  std::vector<int32_t> remap(table.canonical.size());
  for (size_t old = 0; old < table.canonical.size(); ++old) {
    const std::string t = transform(table.canonical[old]);
    auto [it, inserted] =
        intern.emplace(t, static_cast<int32_t>(out.canonical.size()));
    if (inserted) out.canonical.push_back(t);
    remap[old] = it->second;
  }
  for (const auto& [id, label] : table.label_of)
    out.label_of[id] = remap[static_cast<size_t>(label)];
  return out;
}

void save_split(const Corpus& corpus, const SplitAssignment& split,
                const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write split sidecar: " + path);
  for (const auto& rec : corpus.records()) {
    auto it = split.side.find(rec.id);
    if (it == split.side.end()) continue;
    json obj;
    obj["id"] = rec.id;
    obj["side"] = to_string(it->second);
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

SplitAssignment load_split(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open split sidecar: " + path);
  SplitAssignment split;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": malformed JSON: " + e.what());
    }
    if (!obj.is_object() || !obj.contains("id") || !obj.contains("side"))
      throw SchemaError("line " + std::to_string(line_no) +
                        ": split row needs \"id\" and \"side\"");
    split.side[obj.at("id").get<std::string>()] =
        side_from_string(obj.at("side").get<std::string>());
  }
  return split;
}

void save_labels(const Corpus& corpus, const RecordSubset& subset,
                 const LabelTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write label sidecar: " + path);
  for (size_t pos : subset) {
    const auto& id = corpus.at(pos).id;
    auto it = table.label_of.find(id);
    if (it == table.label_of.end())
      throw LabelError("record not in label table: " + id);
    json obj;
    obj["id"] = id;
    obj["label"] = table.canonical[static_cast<size_t>(it->second)];
    obj["scheme"] = to_string(table.scheme);
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

LabelTable load_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open label sidecar: " + path);
  LabelTable table;
  std::unordered_map<std::string, int32_t> intern;
  bool scheme_seen = false;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": malformed JSON: " + e.what());
    }
    if (!obj.is_object() || !obj.contains("id") || !obj.contains("label") ||
        !obj.contains("scheme"))
      throw SchemaError("line " + std::to_string(line_no) +
                        ": label row needs \"id\", \"label\", \"scheme\"");
    const LabelScheme scheme =
        scheme_from_string(obj.at("scheme").get<std::string>());
    if (!scheme_seen) {
      table.scheme = scheme;
      scheme_seen = true;
    } else if (scheme != table.scheme) {
      throw SchemaError("line " + std::to_string(line_no) +
                        ": inconsistent scheme in label sidecar");
    }
    const std::string id = obj.at("id").get<std::string>();
    const std::string label = obj.at("label").get<std::string>();
    auto [it, inserted] =
        intern.emplace(label, static_cast<int32_t>(table.canonical.size()));
    if (inserted) table.canonical.push_back(label);
    if (!table.label_of.emplace(id, it->second).second)
      throw DuplicateIdError("line " + std::to_string(line_no) +
                             ": duplicate id in label sidecar: " + id);
  }
  return table;
}

}  // namespace bfsd
