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
#include <span>
#include <vector>

#include "tpgnn/dense.hpp"
#include "tpgnn/graph.hpp"

namespace tpgnn {

/// Per-edge attention weights aligned with Graph::in_csr() entry order.
struct EdgeAttention {
  std::vector<double> alpha;
};

/// Non-owning pairing of a dst-major sparsity pattern with its values.
struct AggregationView {
  const Csr* rows = nullptr;
  std::span<const double> values;

  std::size_t num_vertices() const { return rows->num_rows(); }
};

inline AggregationView view_of(const NormCoefficients& c) { return {&c.rows, c.values}; }
inline AggregationView view_of(const Graph& g, const EdgeAttention& a) {
  if (a.alpha.size() != g.num_edges()) throw ShapeError("EdgeAttention does not match graph");
  return {&g.in_csr(), a.alpha};
}

// ---------------------------------------------------------------------------
// Sparse aggregation kernels. Both visit destinations in ascending order and
// each destination's entries in CSR order, so restricting them to contiguous
// destination ranges (chunks) reproduces the whole-graph arithmetic exactly.

/// out[v] = sum_e values[e] * in[src(e)] for v in `dst`. Rows outside `dst`
/// are untouched.
inline void aggregate_rows(AggregationView op, const DenseMatrix& in, DenseMatrix& out, Range dst) {
  const Csr& s = *op.rows;
  const std::size_t width = in.cols();
  for (std::size_t v = dst.begin; v < dst.end; ++v) {
    auto o = out.row(v);
    std::fill(o.begin(), o.end(), 0.0);
    for (EdgeIndex e = s.offsets[v]; e < s.offsets[v + 1]; ++e) {
      const double c = op.values[e];
      auto src = in.row(s.indices[e]);
      for (std::size_t k = 0; k < width; ++k) o[k] += c * src[k];
    }
  }
}

/// grad_in[src(e)] += values[e] * grad_out[v] for v in `dst`.
inline void aggregate_backward_rows(AggregationView op, const DenseMatrix& grad_out,
                                    DenseMatrix& grad_in, Range dst) {
  const Csr& s = *op.rows;
  const std::size_t width = grad_out.cols();
  for (std::size_t v = dst.begin; v < dst.end; ++v) {
    auto g = grad_out.row(v);
    for (EdgeIndex e = s.offsets[v]; e < s.offsets[v + 1]; ++e) {
      const double c = op.values[e];
      auto o = grad_in.row(s.indices[e]);
      for (std::size_t k = 0; k < width; ++k) o[k] += c * g[k];
    }
  }
}

inline DenseMatrix aggregate(AggregationView op, const DenseMatrix& h) {
  if (h.rows() != op.num_vertices()) {
    throw ShapeError("aggregate: input has " + std::to_string(h.rows()) + " rows, graph has " +
                     std::to_string(op.num_vertices()) + " vertices");
  }
  DenseMatrix out(h.rows(), h.cols());
  aggregate_rows(op, h, out, {0, h.rows()});
  return out;
}

inline DenseMatrix aggregate_backward(AggregationView op, const DenseMatrix& grad_out) {
  if (grad_out.rows() != op.num_vertices()) throw ShapeError("aggregate_backward: row mismatch");
  DenseMatrix grad_in(grad_out.rows(), grad_out.cols());
  aggregate_backward_rows(op, grad_out, grad_in, {0, grad_out.rows()});
  return grad_in;
}

namespace detail {
inline void check_graph(const Graph& g, const NormCoefficients& c) {
  if (g.num_vertices() != c.num_vertices()) throw ShapeError("coefficients belong to another graph");
}
inline FeatureSlice with_data(const FeatureSlice& like, DenseMatrix data) {
  return {like.owner, like.cols, like.parent_cols, std::move(data)};
}
}  // namespace detail

inline DenseMatrix aggregate(const Graph& g, const NormCoefficients& c, const DenseMatrix& h) {
  detail::check_graph(g, c);
  return aggregate(view_of(c), h);
}
inline DenseMatrix aggregate(const Graph& g, const EdgeAttention& a, const DenseMatrix& h) {
  return aggregate(view_of(g, a), h);
}
inline FeatureSlice aggregate(const Graph& g, const NormCoefficients& c, const FeatureSlice& h) {
  return detail::with_data(h, aggregate(g, c, h.data));
}
inline FeatureSlice aggregate(const Graph& g, const EdgeAttention& a, const FeatureSlice& h) {
  return detail::with_data(h, aggregate(g, a, h.data));
}

inline DenseMatrix aggregate_backward(const Graph& g, const NormCoefficients& c,
                                      const DenseMatrix& grad_out) {
  detail::check_graph(g, c);
  return aggregate_backward(view_of(c), grad_out);
}
inline DenseMatrix aggregate_backward(const Graph& g, const EdgeAttention& a,
                                      const DenseMatrix& grad_out) {
  return aggregate_backward(view_of(g, a), grad_out);
}
inline FeatureSlice aggregate_backward(const Graph& g, const NormCoefficients& c,
                                       const FeatureSlice& grad_out) {
  return detail::with_data(grad_out, aggregate_backward(g, c, grad_out.data));
}

// ---------------------------------------------------------------------------
// Dense updates

/// Weight (in_dim x out_dim) and, for attention layers, the score vector
/// a = [a_src || a_dst] of length 2 * out_dim.
struct LayerParams {
  DenseMatrix weight;
  std::vector<double> attn;
};

struct UpdateResult {
  DenseMatrix output;
  DenseMatrix pre_activation;
};

struct UpdateGrads {
  DenseMatrix grad_input;
  DenseMatrix grad_weight;
};

/// relu(a * W), or a * W when apply_act is false.
inline UpdateResult gcn_update(const DenseMatrix& a, const LayerParams& p, bool apply_act) {
  if (a.cols() != p.weight.rows()) {
    throw ShapeError("gcn_update: input width " + std::to_string(a.cols()) + " vs weight rows " +
                     std::to_string(p.weight.rows()));
  }
  UpdateResult r;
  r.pre_activation = matmul(a, p.weight);
  r.output = apply_act ? relu(r.pre_activation) : r.pre_activation;
  return r;
}

inline UpdateGrads gcn_update_backward(const DenseMatrix& a, const LayerParams& p,
                                       const DenseMatrix& pre_activation,
                                       const DenseMatrix& grad_out, bool apply_act) {
  const DenseMatrix grad_pre = apply_act ? relu_grad(pre_activation, grad_out) : grad_out;
  return {matmul_nt(grad_pre, p.weight), matmul_tn(a, grad_pre)};
}

// ---------------------------------------------------------------------------
// Single-head edge attention
//
// e_uv = leaky_relu(a_src . Wh_u + a_dst . Wh_v); alpha = softmax of e over the
// in-edges of each v. The two dot products are computed once per vertex.

inline constexpr double kDefaultLeakySlope = 0.2;

struct AttentionScores {
  std::vector<double> src;  // a_src . Wh_v for every row v
  std::vector<double> dst;  // a_dst . Wh_v
};

inline AttentionScores attention_scores(const DenseMatrix& projected, std::span<const double> attn) {
  const std::size_t d = projected.cols();
  if (attn.size() != 2 * d) {
    throw ShapeError("attention vector length " + std::to_string(attn.size()) + " != 2 * " +
                     std::to_string(d));
  }
  AttentionScores s{std::vector<double>(projected.rows()), std::vector<double>(projected.rows())};
  for (std::size_t v = 0; v < projected.rows(); ++v) {
    auto row = projected.row(v);
    double a = 0.0;
    double b = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      a += attn[k] * row[k];
      b += attn[d + k] * row[k];
    }
    s.src[v] = a;
    s.dst[v] = b;
  }
  return s;
}

/// Everything the attention backward pass needs.
struct AttentionCache {
  DenseMatrix projected;     // Wh
  AttentionScores scores;
  std::vector<double> raw;   // pre-LeakyReLU score per in-edge
  double slope = kDefaultLeakySlope;
};

struct AttentionResult {
  EdgeAttention attention;
  AttentionCache cache;
};

namespace detail {

/// Softmax over the in-edges of one destination. Writes alpha (and the raw
/// scores when requested) at the destination's CSR positions.
inline void softmax_in_edges(const Graph& g, const AttentionScores& s, std::size_t v, double slope,
                             std::vector<double>& alpha, std::vector<double>* raw_out) {
  const Csr& in = g.in_csr();
  const EdgeIndex lo = in.offsets[v];
  const EdgeIndex hi = in.offsets[v + 1];
  if (lo == hi) return;
  double mx = -std::numeric_limits<double>::infinity();
  for (EdgeIndex e = lo; e < hi; ++e) {
    const double raw = s.src[in.indices[e]] + s.dst[v];
    if (raw_out) (*raw_out)[e] = raw;
    const double z = raw > 0.0 ? raw : slope * raw;
    alpha[e] = z;
    mx = std::max(mx, z);
  }
  double sum = 0.0;
  for (EdgeIndex e = lo; e < hi; ++e) {
    alpha[e] = std::exp(alpha[e] - mx);
    sum += alpha[e];
  }
  for (EdgeIndex e = lo; e < hi; ++e) alpha[e] /= sum;
}

}  // namespace detail

/// Edge softmax from per-vertex scores, with per-destination max subtraction.
inline EdgeAttention attention_from_scores(const Graph& g, const AttentionScores& s, double slope,
                                           std::vector<double>* raw_out = nullptr) {
  EdgeAttention att{std::vector<double>(g.num_edges(), 0.0)};
  if (raw_out) raw_out->assign(g.num_edges(), 0.0);
  for (std::size_t v = 0; v < g.num_vertices(); ++v) {
    detail::softmax_in_edges(g, s, v, slope, att.alpha, raw_out);
  }
  return att;
}

/// Needs full-width embeddings: the LeakyReLU and softmax do not decompose
/// over feature columns.
inline AttentionResult gat_attention(const Graph& g, const DenseMatrix& h, const LayerParams& p,
                                     double slope = kDefaultLeakySlope) {
  if (h.rows() != g.num_vertices()) throw ShapeError("gat_attention: row mismatch");
  if (h.cols() != p.weight.rows()) throw ShapeError("gat_attention: input width vs weight");
  AttentionResult r;
  r.cache.projected = matmul(h, p.weight);
  r.cache.scores = attention_scores(r.cache.projected, p.attn);
  r.cache.slope = slope;
  r.attention = attention_from_scores(g, r.cache.scores, slope, &r.cache.raw);
  return r;
}

inline AttentionResult gat_attention(const Graph& g, const FeatureSlice& h, const LayerParams& p,
                                     double slope = kDefaultLeakySlope) {
  if (!h.is_full_width()) {
    throw ContractError("gat_attention: needs full-dimension embeddings, got columns [" +
                        std::to_string(h.cols.begin) + ", " + std::to_string(h.cols.end) +
                        ") of " + std::to_string(h.parent_cols));
  }
  return gat_attention(g, h.data, p, slope);
}

/// Gradients of a scalar loss with respect to the per-vertex scores, given
/// dL/dalpha per edge.
inline AttentionScores attention_scores_backward(const Graph& g, const EdgeAttention& att,
                                                 std::span<const double> raw,
                                                 std::span<const double> grad_alpha, double slope) {
  if (grad_alpha.size() != g.num_edges() || raw.size() != g.num_edges()) {
    throw ShapeError("attention backward: per-edge arrays do not match the graph");
  }
  const Csr& in = g.in_csr();
  AttentionScores grad{std::vector<double>(g.num_vertices(), 0.0),
                       std::vector<double>(g.num_vertices(), 0.0)};
  for (std::size_t v = 0; v < g.num_vertices(); ++v) {
    const EdgeIndex lo = in.offsets[v];
    const EdgeIndex hi = in.offsets[v + 1];
    double weighted = 0.0;
    for (EdgeIndex e = lo; e < hi; ++e) weighted += att.alpha[e] * grad_alpha[e];
    for (EdgeIndex e = lo; e < hi; ++e) {
      const double grad_z = att.alpha[e] * (grad_alpha[e] - weighted);
      const double grad_raw = raw[e] > 0.0 ? grad_z : slope * grad_z;
      grad.src[in.indices[e]] += grad_raw;
      grad.dst[v] += grad_raw;
    }
  }
  return grad;
}

struct ProjectionGrads {
  DenseMatrix grad_projected;  // dL/dWh
  std::vector<double> grad_attn;
};

/// Pushes score gradients back onto Wh and the attention vector.
inline ProjectionGrads attention_projection_backward(const DenseMatrix& projected,
                                                     std::span<const double> attn,
                                                     const AttentionScores& grad_scores) {
  const std::size_t d = projected.cols();
  ProjectionGrads out{DenseMatrix(projected.rows(), d), std::vector<double>(2 * d, 0.0)};
  for (std::size_t v = 0; v < projected.rows(); ++v) {
    const double gs = grad_scores.src[v];
    const double gd = grad_scores.dst[v];
    auto row = projected.row(v);
    auto o = out.grad_projected.row(v);
    for (std::size_t k = 0; k < d; ++k) {
      o[k] = gs * attn[k] + gd * attn[d + k];
      out.grad_attn[k] += gs * row[k];
      out.grad_attn[d + k] += gd * row[k];
    }
  }
  return out;
}

struct AttentionGrads {
  DenseMatrix grad_h;
  DenseMatrix grad_weight;
  std::vector<double> grad_attn;
};

inline AttentionGrads gat_attention_backward(const Graph& g, const DenseMatrix& h,
                                             const LayerParams& p, const AttentionResult& fwd,
                                             std::span<const double> grad_alpha) {
  if (h.rows() != g.num_vertices() || h.cols() != p.weight.rows()) {
    throw ShapeError("gat_attention_backward: input shape");
  }
  const AttentionScores gs =
      attention_scores_backward(g, fwd.attention, fwd.cache.raw, grad_alpha, fwd.cache.slope);
  ProjectionGrads pg = attention_projection_backward(fwd.cache.projected, p.attn, gs);
  return {matmul_nt(pg.grad_projected, p.weight), matmul_tn(h, pg.grad_projected),
          std::move(pg.grad_attn)};
}

}  // namespace tpgnn
