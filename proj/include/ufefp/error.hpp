// Copyright 2026 The U-FEFP Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace ufefp {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape, topology or parameter-layout inconsistency.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Caller-supplied data violates an operation precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or unknown configuration key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable data file.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Parse failure that remembers the offending line.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : DataError(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Checkpoint checksum or container framing failure.
class IntegrityError : public DataError {
 public:
  using DataError::DataError;
};

/// Checkpoint written by an incompatible format version.
class VersionError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite loss or gradient encountered during training.
class NumericalFault : public Error {
 public:
  using Error::Error;
};

}  // namespace ufefp
