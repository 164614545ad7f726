/*
 * Copyright 2026 The smadp Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace smadp {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A scalar argument is out of its admissible range or non-finite.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Shapes, dimensions or container invariants do not line up.
class StructuralError : public Error {
 public:
  using Error::Error;
};

// A file does not follow the expected on-disk layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A file ended before the declared payload was read.
class LengthError : public Error {
 public:
  using Error::Error;
};

// A computation produced inf/nan or failed to converge.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// An object was used out of sequence (missing trend, stale history, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

// The privacy accountant could not produce a finite bound.
class AccountingError : public Error {
 public:
  using Error::Error;
};

namespace internal {

inline void Require(bool ok, const std::string& message) {
  if (!ok) throw ParameterError(message);
}

}  // namespace internal
}  // namespace smadp
