/*
 * Copyright 2026 The tpgnn Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tpgnn {

using VertexId = std::uint32_t;
using EdgeIndex = std::uint64_t;
using WorkerId = int;

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or parameter value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A caller broke an operation's documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Workers disagreed inside a collective (shapes, key sets).
class CollectiveError : public Error {
 public:
  using Error::Error;
};

/// Collective sequencing broke down: mismatched rounds, timeouts, aborts.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Half-open index interval [begin, end).
struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool empty() const noexcept { return begin == end; }
  bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }

  friend bool operator==(const Range&, const Range&) = default;
};

/// Splits [0, total) into `parts` contiguous ranges whose sizes are
/// ceil(total/parts) for the first total % parts ranges and floor(total/parts)
/// for the rest. This one rule is used for chunks, vertex ownership and
/// feature columns alike.
inline std::vector<Range> even_ranges(std::size_t total, std::size_t parts) {
  if (parts == 0) throw ConfigError("even_ranges: parts must be >= 1");
  std::vector<Range> out;
  out.reserve(parts);
  const std::size_t base = total / parts;
  const std::size_t extra = total % parts;
  std::size_t lo = 0;
  for (std::size_t i = 0; i < parts; ++i) {
    const std::size_t width = base + (i < extra ? 1 : 0);
    out.push_back({lo, lo + width});
    lo += width;
  }
  return out;
}

/// max/min over non-negative counters. Equal values (including all-zero)
/// give exactly 1; a zero minimum with a positive maximum gives infinity.
template <typename T>
double imbalance_ratio(const std::vector<T>& values) {
  if (values.empty()) return 1.0;
  T lo = values.front();
  T hi = values.front();
  for (const T& v : values) {
    lo = v < lo ? v : lo;
    hi = v > hi ? v : hi;
  }
  if (lo == hi) return 1.0;
  if (lo == T{}) return std::numeric_limits<double>::infinity();
  return static_cast<double>(hi) / static_cast<double>(lo);
}

}  // namespace tpgnn
