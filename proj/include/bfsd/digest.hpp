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

#ifndef BFSD_DIGEST_HPP
#define BFSD_DIGEST_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>

namespace bfsd {

// 256-bit content digest. Rendered as 64-char lowercase hex everywhere.
struct Digest {
  std::array<uint8_t, 32> bytes{};

  bool operator==(const Digest&) const = default;
  std::string hex() const;
};

struct DigestHasher {
  size_t operator()(const Digest& d) const {
    size_t h;
    std::memcpy(&h, d.bytes.data(), sizeof(h));
    return h;
  }
};

// SHA-256 of the given bytes.
Digest sha256(std::span<const uint8_t> data);
Digest sha256(const std::string& data);

// SHA-256 of a whole file. Throws IoError if unreadable.
Digest sha256_file(const std::string& path);

}  // namespace bfsd

#endif  // BFSD_DIGEST_HPP
