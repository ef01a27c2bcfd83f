/* Copyright 2026 The moesched Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>

namespace moesched {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller violated an operation precondition (bad argument, bad config).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Internal state does not match what an operation requires, e.g. a decode
// step on a sequence with missing KV entries. Always fatal for a simulation.
class StateCorruption : public Error {
 public:
  using Error::Error;
};

// A checked simulation invariant failed (duplicate queue entry, job lost...).
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

// combine_expert_outputs called while a token still has pending experts.
class PartialTokenError : public InvariantViolation {
 public:
  using InvariantViolation::InvariantViolation;
};

// Cache append would exceed the configured capacity.
class CapacityExceeded : public Error {
 public:
  using Error::Error;
};

// Malformed trace or config text. `line` is 1-based, 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace moesched
