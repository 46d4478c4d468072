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
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "tpgnn/dense.hpp"
#include "tpgnn/graph.hpp"

namespace tpgnn {

/// Graph plus vertex features and class labels.
struct Dataset {
  Graph graph;
  DenseMatrix features;
  std::vector<int> labels;
  int num_classes = 0;
};

enum class SyntheticKind { TwoCluster, PowerLaw };

struct SyntheticParams {
  // TwoCluster
  std::size_t cluster_size = 10;
  double p_in = 0.5;
  double p_out = 0.02;
  // PowerLaw (Chung-Lu with expected degree ~ (id+1)^(-1/(exponent-1)))
  std::size_t vertices = 1000;
  double exponent = 2.5;
  double avg_degree = 10.0;
  int classes = 4;
  // features
  std::size_t feature_dim = 8;
  double signal = 1.0;
  double noise = 1.0;
};

namespace detail {

inline void validate(SyntheticKind kind, const SyntheticParams& p) {
  auto prob = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (p.feature_dim == 0) throw ConfigError("synthetic: feature_dim must be >= 1");
  if (!(p.noise >= 0.0)) throw ConfigError("synthetic: noise must be >= 0");
  if (kind == SyntheticKind::TwoCluster) {
    if (p.cluster_size < 1) throw ConfigError("synthetic: cluster_size must be >= 1");
    if (!prob(p.p_in) || !prob(p.p_out)) throw ConfigError("synthetic: p_in/p_out outside [0, 1]");
  } else {
    if (p.vertices < 1) throw ConfigError("synthetic: vertices must be >= 1");
    if (!(p.exponent > 1.0)) throw ConfigError("synthetic: power-law exponent must be > 1");
    if (!(p.avg_degree > 0.0)) throw ConfigError("synthetic: avg_degree must be > 0");
    if (p.classes < 1) throw ConfigError("synthetic: classes must be >= 1");
  }
}

}  // namespace detail

/// Deterministic for a fixed seed. TwoCluster: two dense communities with
/// sparse cross edges, label = community. PowerLaw: heavy-tailed degrees where
/// low ids are the hubs, labels uniform over `classes`. Edges are undirected
/// (stored in both directions) without self-loops; features are a class
/// centroid plus Gaussian noise.
inline Dataset generate_synthetic(SyntheticKind kind, const SyntheticParams& p, std::uint64_t seed) {
  detail::validate(kind, p);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Dataset ds;
  std::vector<std::pair<VertexId, VertexId>> edges;
  std::size_t n = 0;
  auto add_undirected = [&](std::size_t u, std::size_t v) {
    edges.emplace_back(static_cast<VertexId>(u), static_cast<VertexId>(v));
    edges.emplace_back(static_cast<VertexId>(v), static_cast<VertexId>(u));
  };

  if (kind == SyntheticKind::TwoCluster) {
    n = 2 * p.cluster_size;
    ds.num_classes = 2;
    ds.labels.resize(n);
    for (std::size_t v = 0; v < n; ++v) ds.labels[v] = v < p.cluster_size ? 0 : 1;
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t v = u + 1; v < n; ++v) {
        const double prob = ds.labels[u] == ds.labels[v] ? p.p_in : p.p_out;
        if (coin(rng) < prob) add_undirected(u, v);
      }
    }
  } else {
    n = p.vertices;
    ds.num_classes = p.classes;
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = std::pow(static_cast<double>(i + 1), -1.0 / (p.exponent - 1.0));
    }
    const double raw_sum = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& x : w) x *= p.avg_degree * static_cast<double>(n) / raw_sum;
    const double total = p.avg_degree * static_cast<double>(n);
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t v = u + 1; v < n; ++v) {
        if (coin(rng) < std::min(1.0, w[u] * w[v] / total)) add_undirected(u, v);
      }
    }
    std::uniform_int_distribution<int> pick(0, p.classes - 1);
    ds.labels.resize(n);
    for (auto& y : ds.labels) y = pick(rng);
  }
  ds.graph = Graph::from_edges(n, edges);

  DenseMatrix centers(static_cast<std::size_t>(ds.num_classes), p.feature_dim);
  if (kind == SyntheticKind::TwoCluster) {
    for (std::size_t c = 0; c < p.feature_dim; ++c) {
      centers(0, c) = p.signal;
      centers(1, c) = -p.signal;
    }
  } else {
    for (double& x : centers.data()) x = p.signal * gauss(rng);
  }
  ds.features = DenseMatrix(n, p.feature_dim);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t c = 0; c < p.feature_dim; ++c) {
      ds.features(v, c) = centers(static_cast<std::size_t>(ds.labels[v]), c) + p.noise * gauss(rng);
    }
  }
  return ds;
}

/// Train/validation/test membership masks.
struct VertexSplit {
  std::vector<std::uint8_t> train;
  std::vector<std::uint8_t> val;
  std::vector<std::uint8_t> test;
};

/// Random 65% / 25% / 10% split (floors for train and val, remainder test).
inline VertexSplit make_split(std::size_t num_vertices, std::uint64_t seed) {
  std::vector<std::size_t> order(num_vertices);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ 0x5EEDF00DULL);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = num_vertices * 65 / 100;
  const std::size_t n_val = num_vertices * 25 / 100;
  VertexSplit s{std::vector<std::uint8_t>(num_vertices, 0),
                std::vector<std::uint8_t>(num_vertices, 0),
                std::vector<std::uint8_t>(num_vertices, 0)};
  for (std::size_t i = 0; i < num_vertices; ++i) {
    auto& mask = i < n_train ? s.train : (i < n_train + n_val ? s.val : s.test);
    mask[order[i]] = 1;
  }
  return s;
}

}  // namespace tpgnn
