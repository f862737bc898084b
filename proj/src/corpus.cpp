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

#include "bfsd/corpus.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "bfsd/errors.hpp"

namespace bfsd {

namespace {

using nlohmann::json;

std::string at_line(size_t line_no) {
  return line_no == 0 ? std::string()
                      : "line " + std::to_string(line_no) + ": ";
}

int hex_nibble(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  return -1;  // uppercase is rejected: the schema mandates lowercase hex
}

std::vector<uint8_t> decode_hex(const std::string& hex, size_t line_no) {
  if (hex.empty())
    throw EmptyFunctionError(at_line(line_no) + "bytes_hex is empty");
  if (hex.size() % 2 != 0)
    throw EncodingError(at_line(line_no) + "bytes_hex has odd length");
  std::vector<uint8_t> out(hex.size() / 2);
  for (size_t i = 0; i < out.size(); ++i) {
    const int hi = hex_nibble(hex[2 * i]);
    const int lo = hex_nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0)
      throw EncodingError(at_line(line_no) +
                          "bytes_hex is not lowercase hex at offset " +
                          std::to_string(2 * i));
    out[i] = static_cast<uint8_t>((hi << 4) | lo);
  }
  return out;
}

std::string encode_hex(const std::vector<uint8_t>& bytes) {
  static const char* kHex = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (uint8_t b : bytes) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xf]);
  }
  return out;
}

std::string require_string(const json& obj, const char* key, size_t line_no) {
  auto it = obj.find(key);
  if (it == obj.end())
    throw SchemaError(at_line(line_no) + "missing required field \"" +
                      key + "\"");
  if (!it->is_string())
    throw SchemaError(at_line(line_no) + "field \"" + key +
                      "\" must be a string");
  return it->get<std::string>();
}

}  // namespace

const char* to_string(BuildMode mode) {
  return mode == BuildMode::Debug ? "Debug" : "Release";
}

BuildMode build_mode_from_string(const std::string& s) {
  if (s == "Debug") return BuildMode::Debug;
  if (s == "Release") return BuildMode::Release;
  throw SchemaError("build_mode must be \"Debug\" or \"Release\", got \"" +
                    s + "\"");
}

void Corpus::add(FunctionRecord record) {
  auto [it, inserted] = by_id_.emplace(record.id, records_.size());
  if (!inserted)
    throw DuplicateIdError("duplicate record id \"" + record.id + "\"");
  records_.push_back(std::move(record));
}

std::optional<size_t> Corpus::find(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

FunctionRecord parse_record_line(const std::string& line, size_t line_no) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(at_line(line_no) + "malformed JSON: " + e.what());
  }
  if (!obj.is_object())
    throw ParseError(at_line(line_no) + "line is not a JSON object");

  static const std::set<std::string> kKnown = {
      "id",        "name",      "bytes_hex", "source_id",
      "binary_id", "build_mode", "family"};
  for (const auto& item : obj.items()) {
    if (!kKnown.count(item.key()))
      throw SchemaError(at_line(line_no) + "unknown field \"" + item.key() +
                        "\"");
  }

  FunctionRecord rec;
  rec.id = require_string(obj, "id", line_no);
  rec.name = require_string(obj, "name", line_no);
  rec.bytes = decode_hex(require_string(obj, "bytes_hex", line_no), line_no);
  rec.source_id = require_string(obj, "source_id", line_no);
  rec.binary_id = require_string(obj, "binary_id", line_no);
  try {
    rec.build_mode =
        build_mode_from_string(require_string(obj, "build_mode", line_no));
  } catch (const SchemaError& e) {
    throw SchemaError(at_line(line_no) + e.what());
  }
  if (auto it = obj.find("family"); it != obj.end() && !it->is_null()) {
    if (!it->is_string())
      throw SchemaError(at_line(line_no) + "field \"family\" must be a "
                        "string or null");
    rec.family = it->get<std::string>();
  }
  return rec;
}

std::string serialize_record(const FunctionRecord& record) {
  json obj;
  obj["id"] = record.id;
  obj["name"] = record.name;
  obj["bytes_hex"] = encode_hex(record.bytes);
  obj["source_id"] = record.source_id;
  obj["binary_id"] = record.binary_id;
  obj["build_mode"] = to_string(record.build_mode);
  if (record.family) obj["family"] = *record.family;
  return obj.dump();
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file: " + path);
  Corpus corpus;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    FunctionRecord rec = parse_record_line(line, line_no);
    try {
      corpus.add(std::move(rec));
    } catch (const DuplicateIdError& e) {
      throw DuplicateIdError(at_line(line_no) + e.what());
    }
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file: " + path);
  for (const auto& rec : corpus.records()) out << serialize_record(rec) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

Digest byte_hash(const FunctionRecord& record) {
  return sha256(std::span<const uint8_t>(record.bytes));
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats stats;
  stats.n_records = corpus.size();
  std::set<std::string> binaries;
  std::map<std::string, std::set<std::string>> binaries_per_name;
  for (const auto& rec : corpus.records()) {
    binaries.insert(rec.binary_id);
    NameStats& ns = stats.per_name[rec.name];
    ++ns.instances;
    binaries_per_name[rec.name].insert(rec.binary_id);
    (rec.build_mode == BuildMode::Debug ? ns.sizes_debug : ns.sizes_release)
        .push_back(rec.bytes.size());
  }
  stats.n_binaries = binaries.size();
  for (auto& [name, ns] : stats.per_name)
    ns.distinct_binaries = binaries_per_name[name].size();
  return stats;
}

}  // namespace bfsd
