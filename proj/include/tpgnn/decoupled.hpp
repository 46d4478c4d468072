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

// Decoupled training: all NN layers run first on each vertex independently
// (L_hat = MLP(X)), then the graph operator is applied L times,
// Z_L = (gamma * A)^L * L_hat. The propagation is linear and needs no
// intermediate state for its backward pass.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tpgnn/dense.hpp"
#include "tpgnn/graph.hpp"
#include "tpgnn/layers.hpp"

namespace tpgnn {

enum class DecoupledKind { DecoupledGCN, DecoupledGAT };

struct DecoupledConfig {
  std::size_t nn_depth = 2;       // k
  std::size_t prop_rounds = 2;    // L
  double gamma = 1.0;
  std::vector<std::size_t> layer_dims{8, 16, 2};  // k + 1 entries
  DecoupledKind kind = DecoupledKind::DecoupledGCN;
  NormMode norm = NormMode::SymSelfLoop;
  double leaky_slope = kDefaultLeakySlope;

  void validate() const {
    if (nn_depth < 1) throw ConfigError("decoupled: nn_depth must be >= 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("decoupled: gamma must lie in (0, 1]");
    if (layer_dims.size() != nn_depth + 1) {
      throw ConfigError("decoupled: layer_dims needs nn_depth + 1 = " +
                        std::to_string(nn_depth + 1) + " entries, got " +
                        std::to_string(layer_dims.size()));
    }
    for (std::size_t d : layer_dims) {
      if (d == 0) throw ConfigError("decoupled: layer dims must be positive");
    }
  }

  /// Attention gradients flow into the shared weight and the attention vector
  /// only for a single propagation round; otherwise the coefficients are held
  /// constant within the epoch.
  bool attention_trainable() const { return kind == DecoupledKind::DecoupledGAT && prop_rounds == 1; }
};

/// Glorot-initialised weights; the last layer carries the attention vector
/// for the GAT variant.
inline std::vector<LayerParams> init_mlp_params(const std::vector<std::size_t>& dims,
                                                bool with_attention, std::uint64_t seed) {
  std::vector<LayerParams> params;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    params.push_back({glorot_init(dims[l], dims[l + 1], seed * 7919 + l + 1), {}});
  }
  if (with_attention && !params.empty()) {
    const DenseMatrix a = glorot_init(2 * dims.back(), 1, seed * 7919 + 1000003);
    params.back().attn.assign(a.data().begin(), a.data().end());
  }
  return params;
}

/// Per-layer inputs and pre-activations of one MLP forward pass.
struct MlpCache {
  std::vector<DenseMatrix> inputs;
  std::vector<DenseMatrix> pre_activations;
};

struct MlpResult {
  DenseMatrix output;
  MlpCache cache;
};

/// k rounds of gcn_update; ReLU on all but the last layer.
inline MlpResult mlp_forward(const DenseMatrix& x, const std::vector<LayerParams>& params) {
  if (params.empty()) throw ConfigError("mlp_forward: no layers");
  MlpResult r;
  DenseMatrix h = x;
  for (std::size_t l = 0; l < params.size(); ++l) {
    const bool act = l + 1 < params.size();
    UpdateResult u = gcn_update(h, params[l], act);
    r.cache.inputs.push_back(std::move(h));
    r.cache.pre_activations.push_back(std::move(u.pre_activation));
    h = std::move(u.output);
  }
  r.output = std::move(h);
  return r;
}

struct MlpGrads {
  std::vector<DenseMatrix> grad_weights;
  DenseMatrix grad_input;
};

inline MlpGrads mlp_backward(const MlpCache& cache, const std::vector<LayerParams>& params,
                             const DenseMatrix& grad_output) {
  MlpGrads g;
  g.grad_weights.resize(params.size());
  DenseMatrix grad = grad_output;
  for (std::size_t l = params.size(); l-- > 0;) {
    const bool act = l + 1 < params.size();
    UpdateGrads u = gcn_update_backward(cache.inputs[l], params[l], cache.pre_activations[l], grad, act);
    g.grad_weights[l] = std::move(u.grad_weight);
    grad = std::move(u.grad_input);
  }
  g.grad_input = std::move(grad);
  return g;
}

/// Operator values pre-multiplied by gamma. Forward and backward both use
/// these, so a symmetric operator gives bitwise-identical passes.
inline std::vector<double> scaled_values(std::span<const double> values, double gamma) {
  std::vector<double> out(values.begin(), values.end());
  for (double& v : out) v *= gamma;
  return out;
}

inline DenseMatrix propagate(const DenseMatrix& z0, AggregationView op, double gamma,
                             std::size_t rounds) {
  if (z0.rows() != op.num_vertices()) throw ShapeError("propagate: row mismatch");
  const std::vector<double> vals = scaled_values(op.values, gamma);
  const AggregationView scaled{op.rows, vals};
  DenseMatrix z = z0;
  for (std::size_t r = 0; r < rounds; ++r) z = aggregate(scaled, z);
  return z;
}

inline DenseMatrix propagate_backward(const DenseMatrix& grad_zl, AggregationView op, double gamma,
                                      std::size_t rounds) {
  if (grad_zl.rows() != op.num_vertices()) throw ShapeError("propagate_backward: row mismatch");
  const std::vector<double> vals = scaled_values(op.values, gamma);
  const AggregationView scaled{op.rows, vals};
  DenseMatrix g = grad_zl;
  for (std::size_t r = 0; r < rounds; ++r) g = aggregate_backward(scaled, g);
  return g;
}

inline DenseMatrix propagate(const DenseMatrix& z0, const Graph& g, const NormCoefficients& c,
                             double gamma, std::size_t rounds) {
  detail::check_graph(g, c);
  return propagate(z0, view_of(c), gamma, rounds);
}
inline DenseMatrix propagate(const DenseMatrix& z0, const Graph& g, const EdgeAttention& a,
                             double gamma, std::size_t rounds) {
  return propagate(z0, view_of(g, a), gamma, rounds);
}
inline FeatureSlice propagate(const FeatureSlice& z0, const Graph& g, const NormCoefficients& c,
                              double gamma, std::size_t rounds) {
  return detail::with_data(z0, propagate(z0.data, g, c, gamma, rounds));
}
inline DenseMatrix propagate_backward(const DenseMatrix& grad, const Graph& g,
                                      const NormCoefficients& c, double gamma, std::size_t rounds) {
  detail::check_graph(g, c);
  return propagate_backward(grad, view_of(c), gamma, rounds);
}
inline DenseMatrix propagate_backward(const DenseMatrix& grad, const Graph& g,
                                      const EdgeAttention& a, double gamma, std::size_t rounds) {
  return propagate_backward(grad, view_of(g, a), gamma, rounds);
}

/// Attention for every in-edge, computed as N workers would: worker w scores
/// the in-edges of the destinations it owns from the full embeddings, and the
/// partial arrays are merged in ascending edge order. `owned` lists each
/// worker's destinations and must partition [0, V).
inline EdgeAttention precompute_gat_attention(const Graph& g, const DenseMatrix& h,
                                              const LayerParams& p,
                                              const std::vector<std::vector<VertexId>>& owned,
                                              double slope = kDefaultLeakySlope) {
  if (h.rows() != g.num_vertices()) {
    throw ContractError("precompute_gat_attention: needs full embeddings for all " +
                        std::to_string(g.num_vertices()) + " vertices");
  }
  const Csr& in = g.in_csr();
  std::vector<double> merged(g.num_edges(), 0.0);
  std::vector<std::uint8_t> covered(g.num_vertices(), 0);
  const DenseMatrix projected = matmul(h, p.weight);
  const AttentionScores s = attention_scores(projected, p.attn);
  for (const auto& dsts : owned) {
    std::vector<double> local(g.num_edges(), 0.0);
    for (VertexId v : dsts) {
      if (v >= g.num_vertices() || covered[v]) {
        throw ConfigError("precompute_gat_attention: destination sets must partition the vertices");
      }
      covered[v] = 1;
      detail::softmax_in_edges(g, s, v, slope, local, nullptr);
      for (EdgeIndex e = in.offsets[v]; e < in.offsets[v + 1]; ++e) merged[e] = local[e];
    }
  }
  for (std::uint8_t c : covered) {
    if (!c) throw ConfigError("precompute_gat_attention: destination sets must cover every vertex");
  }
  return {std::move(merged)};
}

inline EdgeAttention precompute_gat_attention(const Graph& g, const FeatureSlice& h,
                                              const LayerParams& p,
                                              const std::vector<std::vector<VertexId>>& owned,
                                              double slope = kDefaultLeakySlope) {
  if (!h.is_full_width()) {
    throw ContractError("precompute_gat_attention: embedding slice is not full width");
  }
  return precompute_gat_attention(g, h.data, p, owned, slope);
}

/// Result of one full decoupled forward/backward pass on a single worker.
struct ModelStep {
  double loss = 0.0;
  DenseMatrix logits;
  std::vector<DenseMatrix> grad_weights;
  std::vector<double> grad_attn;  // empty unless attention is trainable
};

/// dL/dalpha for one propagation round: gamma * <G[v], Lhat[u]> per in-edge u->v.
inline std::vector<double> attention_edge_grads(const Graph& g, const DenseMatrix& grad_z,
                                                const DenseMatrix& l_hat, double gamma) {
  const Csr& in = g.in_csr();
  std::vector<double> out(g.num_edges(), 0.0);
  for (std::size_t v = 0; v < g.num_vertices(); ++v) {
    auto gv = grad_z.row(v);
    for (EdgeIndex e = in.offsets[v]; e < in.offsets[v + 1]; ++e) {
      auto lu = l_hat.row(in.indices[e]);
      double acc = 0.0;
      for (std::size_t k = 0; k < gv.size(); ++k) acc += gv[k] * lu[k];
      out[e] = acc;
    }
  }
  for (double& x : out) x *= gamma;
  return out;
}

/// MLP -> (attention) -> propagate -> softmax cross-entropy on `train` -> back.
/// `norm` is ignored for the GAT variant, whose operator is the attention.
inline ModelStep decoupled_forward_backward(const DecoupledConfig& cfg, const Graph& g,
                                            const NormCoefficients& norm, const DenseMatrix& x,
                                            const std::vector<LayerParams>& params,
                                            std::span<const int> labels,
                                            std::span<const std::uint8_t> train) {
  cfg.validate();
  if (params.size() != cfg.nn_depth) throw ConfigError("decoupled: parameter count != nn_depth");
  const bool gat = cfg.kind == DecoupledKind::DecoupledGAT;
  if (!gat) detail::check_graph(g, norm);

  MlpResult mlp = mlp_forward(x, params);
  const DenseMatrix& l_hat = mlp.output;

  EdgeAttention att;
  std::vector<double> raw;
  AttentionScores scores;
  if (gat) {
    scores = attention_scores(l_hat, params.back().attn);
    att = attention_from_scores(g, scores, cfg.leaky_slope, &raw);
  }
  const AggregationView op = gat ? view_of(g, att) : view_of(norm);

  ModelStep step;
  step.logits = propagate(l_hat, op, cfg.gamma, cfg.prop_rounds);
  LossAndGrad lg = softmax_xent_loss(step.logits, labels, train);
  step.loss = lg.loss;

  DenseMatrix grad_l_hat = propagate_backward(lg.grad, op, cfg.gamma, cfg.prop_rounds);
  if (cfg.attention_trainable()) {
    const std::vector<double> grad_alpha = attention_edge_grads(g, lg.grad, l_hat, cfg.gamma);
    const AttentionScores gs = attention_scores_backward(g, att, raw, grad_alpha, cfg.leaky_slope);
    ProjectionGrads pg = attention_projection_backward(l_hat, params.back().attn, gs);
    axpy_inplace(grad_l_hat, 1.0, pg.grad_projected);
    step.grad_attn = std::move(pg.grad_attn);
  }
  MlpGrads mg = mlp_backward(mlp.cache, params, grad_l_hat);
  step.grad_weights = std::move(mg.grad_weights);
  return step;
}

}  // namespace tpgnn
