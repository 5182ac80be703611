// Copyright 2026 The opfnet Authors
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

#ifndef OPFNET_ERROR_H_
#define OPFNET_ERROR_H_

#include <stdexcept>
#include <string>

namespace opfnet {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text. `location()` is either "line L, column C" or a JSON
// field path such as "buses[3].vmin".
class ParseError : public Error {
 public:
  ParseError(const std::string& location, const std::string& message)
      : Error(location + ": " + message), location_(location) {}
  const std::string& location() const { return location_; }

 private:
  std::string location_;
};

// A required `mpc.<name>` matrix is absent from a MATPOWER document.
class MissingSectionError : public ParseError {
 public:
  explicit MissingSectionError(const std::string& section)
      : ParseError("mpc." + section, "missing section"), section_(section) {}
  const std::string& section() const { return section_; }

 private:
  std::string section_;
};

// A structurally readable case that violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DegenerateImpedanceError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Incompatible operand shapes or vector lengths.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Numerical failure inside a solver (singular Jacobian, no convergence).
class SolverError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace opfnet

#endif  // OPFNET_ERROR_H_
