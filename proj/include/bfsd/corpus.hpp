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
// Portable function-record data model: one record per extracted binary
// function, carried as raw bytes plus provenance metadata. The wire format
// is JSONL with hex-encoded bytes; record order in the file is the canonical
// order that all seeded downstream sampling indexes into.

#ifndef BFSD_CORPUS_HPP
#define BFSD_CORPUS_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "bfsd/digest.hpp"

namespace bfsd {

enum class BuildMode { Debug = 0, Release = 1 };

const char* to_string(BuildMode mode);
BuildMode build_mode_from_string(const std::string& s);

// One extracted function. Whether bytes are pre- or post-relocation fixups
// is producer-defined; producers must be consistent within a corpus.
struct FunctionRecord {
  std::string id;         // unique within a corpus
  std::string name;       // possibly mangled, possibly "NNNN\"-prefixed
  std::vector<uint8_t> bytes;  // non-empty
  std::string source_id;  // originating source project
  std::string binary_id;  // containing binary
  BuildMode build_mode = BuildMode::Release;
  std::optional<std::string> family;

  bool operator==(const FunctionRecord&) const = default;
};

// Immutable after construction; safe for concurrent readers.
class Corpus {
 public:
  // Throws DuplicateIdError if the id is already present.
  void add(FunctionRecord record);

  const std::vector<FunctionRecord>& records() const { return records_; }
  size_t size() const { return records_.size(); }
  const FunctionRecord& at(size_t pos) const { return records_[pos]; }

  // Position of a record by id, if present.
  std::optional<size_t> find(const std::string& id) const;

 private:
  std::vector<FunctionRecord> records_;
  std::unordered_map<std::string, size_t> by_id_;
};

struct NameStats {
  size_t instances = 0;
  size_t distinct_binaries = 0;
  // Byte sizes per build mode, in canonical record order.
  std::vector<size_t> sizes_debug;
  std::vector<size_t> sizes_release;
};

struct CorpusStats {
  size_t n_records = 0;
  size_t n_binaries = 0;
  std::map<std::string, NameStats> per_name;
};

// Decodes one JSONL corpus line. line_no (1-based) is included in error
// messages when nonzero. Decoding is strict: unknown keys, wrong types,
// uppercase or odd-length hex, and unknown build modes are all rejected.
FunctionRecord parse_record_line(const std::string& line, size_t line_no = 0);

// Canonical single-line JSON form; parse_record_line(serialize_record(r))
// reproduces r exactly.
std::string serialize_record(const FunctionRecord& record);

// Loads a JSONL corpus file. Any line error aborts with its line number.
Corpus load_corpus(const std::string& path);

// Writes records in order, one JSON object per line.
void save_corpus(const Corpus& corpus, const std::string& path);

// Content digest of the bytes field only; metadata never participates.
Digest byte_hash(const FunctionRecord& record);

CorpusStats corpus_stats(const Corpus& corpus);

}  // namespace bfsd

#endif  // BFSD_CORPUS_HPP
