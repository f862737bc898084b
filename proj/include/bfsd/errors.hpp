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

#ifndef BFSD_ERRORS_HPP
#define BFSD_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace bfsd {

// Base type for every error this library throws. Subtypes exist so callers
// can discriminate failure classes without parsing messages.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Corpus decoding.
struct ParseError : Error { using Error::Error; };
struct SchemaError : Error { using Error::Error; };
struct EncodingError : Error { using Error::Error; };
struct EmptyFunctionError : Error { using Error::Error; };
struct DuplicateIdError : Error { using Error::Error; };

// Curation.
struct EmptyCorpusError : Error { using Error::Error; };

// Model / checkpoints.
struct VersionError : Error { using Error::Error; };
struct CorruptCheckpointError : Error { using Error::Error; };

// Training.
struct SamplingError : Error { using Error::Error; };
struct DimensionError : Error { using Error::Error; };
struct NonFiniteGradientError : Error { using Error::Error; };

// Retrieval / evaluation.
struct NotFoundError : Error { using Error::Error; };
struct LabelError : Error { using Error::Error; };
struct PoolError : Error { using Error::Error; };
struct ProvenanceError : Error { using Error::Error; };

// Configuration and file plumbing. ConfigError maps to the CLI usage exit
// code; IoError is a runtime failure.
struct ConfigError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

}  // namespace bfsd

#endif  // BFSD_ERRORS_HPP
