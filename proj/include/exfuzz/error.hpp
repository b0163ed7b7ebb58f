/*
 * Copyright 2026 The ExciteFuzz Authors.
 *
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

namespace exfuzz {

// Base for every failure raised by the library. The CLI maps the subclasses
// onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed arguments that violate an operation's preconditions.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent data: shapes, files, datasets, models.
class DataError : public Error {
 public:
  using Error::Error;
};

// A numerical failure (NaN/Inf, divergence) inside the engine.
class NumericError : public Error {
 public:
  using Error::Error;
};

// An internal invariant was violated. Always a bug.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace exfuzz
