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

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tpgnn/common.hpp"

namespace tpgnn {

/// Compressed sparse rows. Row r owns indices[offsets[r], offsets[r+1]).
struct Csr {
  std::vector<EdgeIndex> offsets{0};
  std::vector<VertexId> indices;

  std::size_t num_rows() const noexcept { return offsets.size() - 1; }
  std::size_t num_entries() const noexcept { return indices.size(); }
  std::span<const VertexId> row(std::size_t r) const {
    return {indices.data() + offsets[r], static_cast<std::size_t>(offsets[r + 1] - offsets[r])};
  }
  std::size_t degree(std::size_t r) const {
    return static_cast<std::size_t>(offsets[r + 1] - offsets[r]);
  }

  friend bool operator==(const Csr&, const Csr&) = default;
};

/// Builds a CSR with `num_rows` rows from (row, col) pairs. Duplicates are
/// dropped and every row ends up strictly ascending.
inline Csr csr_from_pairs(std::size_t num_rows, std::vector<std::pair<VertexId, VertexId>> pairs) {
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  Csr out;
  out.offsets.assign(num_rows + 1, 0);
  out.indices.reserve(pairs.size());
  for (const auto& [r, c] : pairs) {
    ++out.offsets[static_cast<std::size_t>(r) + 1];
    out.indices.push_back(c);
  }
  for (std::size_t r = 0; r < num_rows; ++r) out.offsets[r + 1] += out.offsets[r];
  return out;
}

inline Csr transpose(const Csr& m, std::size_t num_cols) {
  Csr out;
  out.offsets.assign(num_cols + 1, 0);
  for (VertexId c : m.indices) ++out.offsets[static_cast<std::size_t>(c) + 1];
  for (std::size_t c = 0; c < num_cols; ++c) out.offsets[c + 1] += out.offsets[c];
  out.indices.resize(m.indices.size());
  std::vector<EdgeIndex> cursor(out.offsets.begin(), out.offsets.end() - 1);
  // Rows are visited in ascending order, so each transposed row comes out sorted.
  for (std::size_t r = 0; r < m.num_rows(); ++r) {
    for (VertexId c : m.row(r)) out.indices[cursor[c]++] = static_cast<VertexId>(r);
  }
  return out;
}

/// Immutable directed graph over dense ids [0, V) with both orientations.
class Graph {
 public:
  Graph() = default;

  /// Edges are (src, dst). Duplicates collapse.
  static Graph from_edges(std::size_t num_vertices,
                          const std::vector<std::pair<VertexId, VertexId>>& edges) {
    std::vector<std::pair<VertexId, VertexId>> by_dst;
    by_dst.reserve(edges.size());
    for (const auto& [s, d] : edges) {
      if (s >= num_vertices || d >= num_vertices) {
        throw ConfigError("Graph::from_edges: edge (" + std::to_string(s) + ", " +
                          std::to_string(d) + ") outside [0, " + std::to_string(num_vertices) +
                          ")");
      }
      by_dst.emplace_back(d, s);
    }
    Graph g;
    g.num_vertices_ = num_vertices;
    g.in_ = csr_from_pairs(num_vertices, std::move(by_dst));
    g.out_ = transpose(g.in_, num_vertices);
    return g;
  }

  std::size_t num_vertices() const noexcept { return num_vertices_; }
  std::size_t num_edges() const noexcept { return in_.num_entries(); }

  /// Row v lists the in-neighbors of v.
  const Csr& in_csr() const noexcept { return in_; }
  /// Row u lists the out-neighbors of u.
  const Csr& out_csr() const noexcept { return out_; }

  std::size_t in_degree(VertexId v) const { return in_.degree(v); }
  std::size_t out_degree(VertexId u) const { return out_.degree(u); }

  std::vector<std::size_t> in_degrees() const {
    std::vector<std::size_t> d(num_vertices_);
    for (std::size_t v = 0; v < num_vertices_; ++v) d[v] = in_.degree(v);
    return d;
  }
  std::vector<std::size_t> out_degrees() const {
    std::vector<std::size_t> d(num_vertices_);
    for (std::size_t v = 0; v < num_vertices_; ++v) d[v] = out_.degree(v);
    return d;
  }

  std::vector<std::pair<VertexId, VertexId>> edges() const {
    std::vector<std::pair<VertexId, VertexId>> e;
    e.reserve(num_edges());
    for (std::size_t u = 0; u < num_vertices_; ++u) {
      for (VertexId v : out_.row(u)) e.emplace_back(static_cast<VertexId>(u), v);
    }
    return e;
  }

 private:
  std::size_t num_vertices_ = 0;
  Csr in_;
  Csr out_;
};

namespace detail {

inline std::vector<std::pair<std::uint64_t, std::uint64_t>> read_edge_pairs(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open edge list '" + path + "'");
  std::vector<std::pair<std::uint64_t, std::uint64_t>> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#' || line[first] == '%') continue;
    std::istringstream ss(line);
    std::string a;
    std::string b;
    std::string extra;
    if (!(ss >> a >> b) || (ss >> extra)) {
      throw ParseError("expected 'src dst', got '" + line + "'", lineno);
    }
    auto parse_id = [&](const std::string& tok) {
      if (tok.empty() || !std::all_of(tok.begin(), tok.end(), ::isdigit)) {
        throw ParseError("vertex id '" + tok + "' is not a non-negative integer", lineno);
      }
      try {
        return static_cast<std::uint64_t>(std::stoull(tok));
      } catch (const std::exception&) {
        throw ParseError("vertex id '" + tok + "' does not fit", lineno);
      }
    };
    pairs.emplace_back(parse_id(a), parse_id(b));
  }
  return pairs;
}

}  // namespace detail

/// Reads whitespace-separated "src dst" lines with ids in [0, num_vertices).
/// Blank lines and lines starting with '#' or '%' are skipped.
inline Graph load_edge_list(const std::string& path, std::size_t num_vertices) {
  std::ifstream probe(path);
  if (!probe) throw ConfigError("cannot open edge list '" + path + "'");
  std::vector<std::pair<VertexId, VertexId>> edges;
  std::size_t lineno = 0;
  std::string line;
  while (std::getline(probe, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#' || line[first] == '%') continue;
    std::istringstream ss(line);
    long long s = -1;
    long long d = -1;
    std::string extra;
    if (!(ss >> s >> d) || (ss >> extra)) {
      throw ParseError("expected 'src dst', got '" + line + "'", lineno);
    }
    if (s < 0 || d < 0 || static_cast<std::size_t>(s) >= num_vertices ||
        static_cast<std::size_t>(d) >= num_vertices) {
      throw ParseError("vertex id out of range [0, " + std::to_string(num_vertices) + ")",
                       lineno);
    }
    edges.emplace_back(static_cast<VertexId>(s), static_cast<VertexId>(d));
  }
  return Graph::from_edges(num_vertices, edges);
}

/// Edge list with arbitrary (sparse) non-negative ids; ids are renumbered
/// densely in ascending order of their original value.
struct RemappedGraph {
  Graph graph;
  std::vector<std::uint64_t> original_ids;  // dense id -> file id
};

inline RemappedGraph load_edge_list_remapped(const std::string& path) {
  const auto pairs = detail::read_edge_pairs(path);
  std::vector<std::uint64_t> ids;
  ids.reserve(pairs.size() * 2);
  for (const auto& [s, d] : pairs) {
    ids.push_back(s);
    ids.push_back(d);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  auto dense = [&](std::uint64_t id) {
    return static_cast<VertexId>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin());
  };
  std::vector<std::pair<VertexId, VertexId>> edges;
  edges.reserve(pairs.size());
  for (const auto& [s, d] : pairs) edges.emplace_back(dense(s), dense(d));
  return {Graph::from_edges(ids.size(), edges), std::move(ids)};
}

enum class NormMode {
  /// c_uv = 1 / sqrt(deg_in(v) * deg_out(u)) over the graph's in-edges. A
  /// vertex without in-edges gets an implicit self-loop of weight 1.
  GcnDegree,
  /// D^-1/2 (A + I) D^-1/2 over the symmetrized graph, D = degree + 1.
  SymSelfLoop,
};

inline const char* to_string(NormMode m) {
  return m == NormMode::GcnDegree ? "gcn" : "sym";
}

/// An aggregation operator: row v lists the sources feeding v and, aligned
/// with them, their coefficients.
struct NormCoefficients {
  NormMode mode = NormMode::SymSelfLoop;
  Csr rows;
  std::vector<double> values;

  std::size_t num_vertices() const noexcept { return rows.num_rows(); }
};

inline NormCoefficients compute_norm(const Graph& g, NormMode mode) {
  const std::size_t n = g.num_vertices();
  NormCoefficients out;
  out.mode = mode;
  if (mode == NormMode::GcnDegree) {
    const Csr& in = g.in_csr();
    std::vector<std::pair<VertexId, VertexId>> pairs;
    pairs.reserve(in.num_entries() + n);
    for (std::size_t v = 0; v < n; ++v) {
      if (in.degree(v) == 0) pairs.emplace_back(static_cast<VertexId>(v), static_cast<VertexId>(v));
      for (VertexId u : in.row(v)) pairs.emplace_back(static_cast<VertexId>(v), u);
    }
    out.rows = csr_from_pairs(n, std::move(pairs));
    out.values.resize(out.rows.num_entries());
    for (std::size_t v = 0; v < n; ++v) {
      for (EdgeIndex e = out.rows.offsets[v]; e < out.rows.offsets[v + 1]; ++e) {
        const VertexId u = out.rows.indices[e];
        if (u == v && g.in_degree(static_cast<VertexId>(v)) == 0) {
          out.values[e] = 1.0;
        } else {
          out.values[e] = 1.0 / std::sqrt(static_cast<double>(g.in_degree(static_cast<VertexId>(v))) *
                                          static_cast<double>(g.out_degree(u)));
        }
      }
    }
    return out;
  }

  // Symmetric closure plus the identity.
  std::vector<std::pair<VertexId, VertexId>> pairs;
  pairs.reserve(2 * g.num_edges() + n);
  for (std::size_t v = 0; v < n; ++v) {
    pairs.emplace_back(static_cast<VertexId>(v), static_cast<VertexId>(v));
    for (VertexId u : g.in_csr().row(v)) {
      pairs.emplace_back(static_cast<VertexId>(v), u);
      pairs.emplace_back(u, static_cast<VertexId>(v));
    }
  }
  out.rows = csr_from_pairs(n, std::move(pairs));
  std::vector<double> deg(n);
  for (std::size_t v = 0; v < n; ++v) deg[v] = static_cast<double>(out.rows.degree(v));
  out.values.resize(out.rows.num_entries());
  for (std::size_t v = 0; v < n; ++v) {
    for (EdgeIndex e = out.rows.offsets[v]; e < out.rows.offsets[v + 1]; ++e) {
      const VertexId u = out.rows.indices[e];
      const double lo = deg[std::min<std::size_t>(u, v)];
      const double hi = deg[std::max<std::size_t>(u, v)];
      out.values[e] = 1.0 / std::sqrt(lo * hi);
    }
  }
  return out;
}

/// Contiguous destination range of some dst-major CSR plus all of its entries.
/// A chunk is a view: it refers to the parent's arrays and does not own them.
struct Chunk {
  std::size_t id = 0;
  Range dst;
  EdgeIndex edge_begin = 0;  // absolute entry index in the parent
  EdgeIndex edge_end = 0;
  std::span<const EdgeIndex> offsets;  // parent offsets for dst.begin .. dst.end (inclusive)
  std::span<const VertexId> sources;   // parent indices for [edge_begin, edge_end)
  std::vector<VertexId> src_set;       // sorted unique sources

  std::size_t num_edges() const noexcept { return static_cast<std::size_t>(edge_end - edge_begin); }
  /// Sources feeding destination v (v inside dst).
  std::span<const VertexId> neighbors(std::size_t v) const {
    const std::size_t i = v - dst.begin;
    return sources.subspan(static_cast<std::size_t>(offsets[i] - edge_begin),
                           static_cast<std::size_t>(offsets[i + 1] - offsets[i]));
  }
};

/// Splits the destination rows of `rows` into `num_chunks` contiguous ranges
/// using the ceil/floor rule. The chunks reference `rows`, which must outlive them.
inline std::vector<Chunk> partition_chunks(const Csr& rows, std::size_t num_chunks) {
  const std::size_t n = rows.num_rows();
  if (num_chunks < 1 || num_chunks > std::max<std::size_t>(n, 1)) {
    throw ConfigError("partition_chunks: chunk count " + std::to_string(num_chunks) +
                      " outside [1, " + std::to_string(n) + "]");
  }
  std::vector<Chunk> chunks;
  chunks.reserve(num_chunks);
  const auto ranges = even_ranges(n, num_chunks);
  for (std::size_t j = 0; j < ranges.size(); ++j) {
    Chunk c;
    c.id = j;
    c.dst = ranges[j];
    c.edge_begin = rows.offsets[c.dst.begin];
    c.edge_end = rows.offsets[c.dst.end];
    c.offsets = std::span<const EdgeIndex>(rows.offsets).subspan(c.dst.begin, c.dst.size() + 1);
    c.sources = std::span<const VertexId>(rows.indices)
                    .subspan(static_cast<std::size_t>(c.edge_begin), c.num_edges());
    c.src_set.assign(c.sources.begin(), c.sources.end());
    std::sort(c.src_set.begin(), c.src_set.end());
    c.src_set.erase(std::unique(c.src_set.begin(), c.src_set.end()), c.src_set.end());
    chunks.push_back(std::move(c));
  }
  return chunks;
}

inline std::vector<Chunk> partition_chunks(const Graph& g, std::size_t num_chunks) {
  return partition_chunks(g.in_csr(), num_chunks);
}

inline std::vector<Chunk> partition_chunks(const NormCoefficients& c, std::size_t num_chunks) {
  return partition_chunks(c.rows, num_chunks);
}

}  // namespace tpgnn
