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
// Leakage-free train/test splitting and semantic-equivalence labeling.
// All stages are pure functions over an immutable corpus; every random
// choice comes from an explicit seed.

#ifndef BFSD_CURATION_HPP
#define BFSD_CURATION_HPP

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "bfsd/corpus.hpp"

namespace bfsd {

enum class Side { Train = 0, Test = 1 };

const char* to_string(Side side);
Side side_from_string(const std::string& s);

// Record-id -> side map. Records absent from the map have been dropped
// from the curated set entirely (they are on no side).
struct SplitAssignment {
  std::unordered_map<std::string, Side> side;
  double ratio = 0.8;
};

// Positions into Corpus::records(), ascending (canonical order).
using RecordSubset = std::vector<size_t>;

struct NameModeStats {
  std::vector<size_t> sizes;
  double mean = 0.0;
  double stddev = 0.0;    // population standard deviation
  double norm_dev = 0.0;  // stddev / mean
};

// Per-name byte-size statistics split by build mode. Index by
// static_cast<size_t>(BuildMode).
struct LabelStats {
  std::map<std::string, std::array<std::optional<NameModeStats>, 2>> per_name;
};

enum class LabelScheme { None = 0, MaskType, MaskSource, MaskBoth };

const char* to_string(LabelScheme scheme);
LabelScheme scheme_from_string(const std::string& s);

// Which equivalence rule decided a name's label.
enum class LabelRule {
  SmallEverywhere,  // every instance <= 25 bytes
  LongName,         // name length >= 100 characters
  StableSize,       // size norm_dev < 0.05 in every build mode present
  PerSource,        // fallback: subdivided as "<source_id>\<name>"
};

struct LabelTable {
  std::unordered_map<std::string, int32_t> label_of;  // record id -> label id
  std::vector<std::string> canonical;                 // label id -> string
  LabelScheme scheme = LabelScheme::None;

  size_t n_labels() const { return canonical.size(); }
};

// Shuffles distinct source_ids with the seeded generator, orders them
// largest function count first, and fills the train side greedily: a source
// is placed on Train while doing so keeps the train side at or below
// ratio * total; the first source always lands on Train so the train side
// is never empty. Remaining sources go to Test. All records of a source
// share a side.
SplitAssignment split_by_source(const Corpus& corpus, double ratio,
                                uint64_t seed);

// Names found in more than threshold * (total distinct binaries) of the
// corpus keep records only on their majority side; minority-side records
// are dropped from the assignment (not moved). Majority is by instance
// count within the assignment; ties go to Train.
SplitAssignment restrict_common_functions(const Corpus& corpus,
                                          const SplitAssignment& split,
                                          double threshold = 0.5);

// Records of `split` on `side`, in canonical order.
RecordSubset side_records(const Corpus& corpus, const SplitAssignment& split,
                          Side side);

// Among records with equal byte_hash the first in canonical order is kept.
RecordSubset dedup(const Corpus& corpus, const RecordSubset& subset);

LabelStats compute_label_stats(const Corpus& corpus,
                               const RecordSubset& subset);

// The rule that fires for `name` given subset-wide stats. Rules are tried
// in order SmallEverywhere, LongName, StableSize, PerSource.
LabelRule labeling_rule_for(const std::string& name, const LabelStats& stats);

// Labels every record of the subset. Names resolved by rule 1-3 get a
// single label equal to the name; fallback names are subdivided per source
// as "<source_id>\<name>". `stats` must be computed over exactly `subset`.
LabelTable assign_labels(const Corpus& corpus, const RecordSubset& subset,
                         const LabelStats& stats);

// Randomly drops singleton-labeled records (seeded) until the kept
// singletons are at most max_frac of the surviving subset. Non-singletons
// are untouched; output preserves canonical order.
RecordSubset downsample_singletons(const Corpus& corpus,
                                   const RecordSubset& subset,
                                   const LabelTable& table, double max_frac,
                                   uint64_t seed);

// Replaces each outermost angle-bracket group (nesting handled) with "<#>".
// Unbalanced brackets leave the name unchanged.
std::string mask_type(const std::string& name);

// Strips a leading "<digits>\" source prefix if present.
std::string mask_source(const std::string& label);

// Applies the scheme to every canonical string and merges labels whose
// transformed strings collide. MaskBoth is mask_source then mask_type.
LabelTable normalize_labels(const LabelTable& table, LabelScheme scheme);

// Sidecar files: JSONL, one object per record, in the given subset order.
void save_split(const Corpus& corpus, const SplitAssignment& split,
                const std::string& path);
SplitAssignment load_split(const std::string& path);

void save_labels(const Corpus& corpus, const RecordSubset& subset,
                 const LabelTable& table, const std::string& path);
LabelTable load_labels(const std::string& path);

}  // namespace bfsd

#endif  // BFSD_CURATION_HPP
