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

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "test_util.hpp"
#include "tpgnn/layers.hpp"

namespace tpgnn {
namespace {

using testing::bitwise_equal;
using testing::dense_operator;
using testing::max_rel_err;
using testing::numeric_gradient;
using testing::random_graph;
using testing::random_matrix;

/// Operator with unit coefficient on every in-edge.
NormCoefficients unit_operator(const Graph& g) {
  NormCoefficients c;
  c.rows = g.in_csr();
  c.values.assign(g.num_edges(), 1.0);
  return c;
}

TEST(Aggregate, OneEdgePropagation) {
  const Graph g = Graph::from_edges(2, {{0, 1}});
  const NormCoefficients c = unit_operator(g);
  const DenseMatrix out = aggregate(g, c, DenseMatrix{{1}, {0}});
  EXPECT_EQ(out(0, 0), 0.0);
  EXPECT_EQ(out(1, 0), 1.0);
}

TEST(Aggregate, StarSums) {
  const Graph g = Graph::from_edges(3, {{1, 0}, {2, 0}});
  const DenseMatrix out = aggregate(g, unit_operator(g), DenseMatrix{{0}, {3}, {4}});
  EXPECT_EQ(out(0, 0), 7.0);
}

TEST(Aggregate, RowMismatchThrows) {
  const Graph g = random_graph(5, 0.3, 1);
  const NormCoefficients c = compute_norm(g, NormMode::SymSelfLoop);
  EXPECT_THROW(aggregate(g, c, DenseMatrix(4, 2)), ShapeError);
  EXPECT_THROW(aggregate_backward(g, c, DenseMatrix(6, 2)), ShapeError);
}

TEST(Aggregate, MatchesDenseOracle) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const std::size_t n = 5 + seed * 7 % 46;
    const Graph g = random_graph(n, 0.15, seed);
    for (NormMode mode : {NormMode::GcnDegree, NormMode::SymSelfLoop}) {
      const NormCoefficients c = compute_norm(g, mode);
      const DenseMatrix h = random_matrix(n, 3, seed + 50);
      const DenseMatrix oracle = matmul(dense_operator(view_of(c)), h);
      EXPECT_LT(max_abs_diff(aggregate(g, c, h), oracle), 1e-12);
      const DenseMatrix grad = random_matrix(n, 3, seed + 60);
      const DenseMatrix back = matmul(testing::transpose(dense_operator(view_of(c))), grad);
      EXPECT_LT(max_abs_diff(aggregate_backward(g, c, grad), back), 1e-12);
    }
  }
}

TEST(Aggregate, IsLinear) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Graph g = random_graph(25, 0.2, seed);
    const NormCoefficients c = compute_norm(g, NormMode::SymSelfLoop);
    const DenseMatrix x = random_matrix(25, 4, seed * 3);
    const DenseMatrix y = random_matrix(25, 4, seed * 3 + 1);
    const double alpha = 0.37 * static_cast<double>(seed);
    const double beta = -1.3;
    DenseMatrix combo = x;
    for (std::size_t i = 0; i < combo.size(); ++i) {
      combo.data()[i] = alpha * x.data()[i] + beta * y.data()[i];
    }
    DenseMatrix expected = aggregate(g, c, x);
    const DenseMatrix ay = aggregate(g, c, y);
    for (std::size_t i = 0; i < expected.size(); ++i) {
      expected.data()[i] = alpha * expected.data()[i] + beta * ay.data()[i];
    }
    EXPECT_LT(max_abs_diff(aggregate(g, c, combo), expected), 1e-12);
  }
}

TEST(Aggregate, ColumnSeparableBitwise) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const std::size_t n = 4 + seed % 30;
    const std::size_t d = 1 + seed % 9;
    const Graph g = random_graph(n, 0.2, seed);
    const NormCoefficients c = compute_norm(g, seed % 2 ? NormMode::GcnDegree : NormMode::SymSelfLoop);
    const DenseMatrix h = random_matrix(n, d, seed + 9);
    const DenseMatrix full = aggregate(g, c, h);
    const DenseMatrix full_back = aggregate_backward(g, c, h);
    for (std::size_t parts = 1; parts <= 4; ++parts) {
      std::vector<FeatureSlice> fwd;
      std::vector<FeatureSlice> bwd;
      const auto ranges = even_ranges(d, parts);
      for (std::size_t i = 0; i < parts; ++i) {
        const FeatureSlice s = col_slice(h, ranges[i], static_cast<WorkerId>(i));
        fwd.push_back(aggregate(g, c, s));
        bwd.push_back(aggregate_backward(g, c, s));
      }
      EXPECT_TRUE(bitwise_equal(col_concat(fwd), full));
      EXPECT_TRUE(bitwise_equal(col_concat(bwd), full_back));
    }
  }
}

TEST(AggregateBackward, PathTranspose) {
  const Graph g = Graph::from_edges(2, {{0, 1}});
  const DenseMatrix out = aggregate_backward(g, unit_operator(g), DenseMatrix{{0}, {5}});
  EXPECT_EQ(out(0, 0), 5.0);
  EXPECT_EQ(out(1, 0), 0.0);
}

TEST(AggregateBackward, SymmetricOperatorMatchesForwardBitwise) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Graph g = random_graph(20, 0.2, seed);
    const NormCoefficients c = compute_norm(g, NormMode::SymSelfLoop);
    const DenseMatrix h = random_matrix(20, 3, seed);
    EXPECT_TRUE(bitwise_equal(aggregate(g, c, h), aggregate_backward(g, c, h)));
  }
}

TEST(AggregateBackward, FiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Graph g = random_graph(5, 0.4, seed);
    const NormCoefficients c = compute_norm(g, NormMode::GcnDegree);
    DenseMatrix h = random_matrix(5, 2, seed);
    const DenseMatrix w = random_matrix(5, 2, seed + 10);
    auto f = [&] { return testing::weighted_sum(aggregate(g, c, h), w); };
    EXPECT_LT(max_rel_err(aggregate_backward(g, c, w), numeric_gradient(f, h), 1e-6), 1e-6);
  }
}

TEST(GcnUpdate, IdentityWeightNoActivation) {
  const DenseMatrix a = random_matrix(4, 3, 1);
  const LayerParams p{identity(3), {}};
  EXPECT_TRUE(bitwise_equal(gcn_update(a, p, false).output, a));
}

TEST(GcnUpdate, ReluApplied) {
  const LayerParams p{identity(2), {}};
  const DenseMatrix out = gcn_update(DenseMatrix{{1, -1}}, p, true).output;
  EXPECT_EQ(out(0, 0), 1.0);
  EXPECT_EQ(out(0, 1), 0.0);
}

TEST(GcnUpdate, ShapeMismatchThrows) {
  const LayerParams p{identity(3), {}};
  EXPECT_THROW(gcn_update(DenseMatrix(2, 2), p, true), ShapeError);
}

TEST(GcnUpdate, BackwardMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    for (bool act : {false, true}) {
      DenseMatrix a = random_matrix(3, 2, seed);
      LayerParams p{random_matrix(2, 4, seed + 1), {}};
      const DenseMatrix w = random_matrix(3, 4, seed + 2);
      const UpdateResult fwd = gcn_update(a, p, act);
      bool near_kink = false;
      for (double x : fwd.pre_activation.data()) near_kink = near_kink || std::abs(x) < 1e-4;
      if (act && near_kink) continue;
      const UpdateGrads g = gcn_update_backward(a, p, fwd.pre_activation, w, act);
      auto f = [&] { return testing::weighted_sum(gcn_update(a, p, act).output, w); };
      EXPECT_LT(max_rel_err(g.grad_input, numeric_gradient(f, a), 1e-6), 1e-5);
      EXPECT_LT(max_rel_err(g.grad_weight, numeric_gradient(f, p.weight), 1e-6), 1e-5);
    }
  }
}

LayerParams attention_params(std::size_t in, std::size_t out, std::uint64_t seed) {
  LayerParams p{random_matrix(in, out, seed), {}};
  const DenseMatrix a = random_matrix(2 * out, 1, seed + 1);
  p.attn.assign(a.data().begin(), a.data().end());
  return p;
}

TEST(GatAttention, SingleInEdgeIsOne) {
  const Graph g = Graph::from_edges(3, {{0, 1}, {2, 1}, {1, 2}});
  const LayerParams p = attention_params(2, 2, 4);
  const AttentionResult r = gat_attention(g, random_matrix(3, 2, 5), p);
  // Vertex 2 has the single in-edge 1 -> 2, which is the last entry.
  EXPECT_EQ(r.attention.alpha.back(), 1.0);
}

TEST(GatAttention, IdenticalSourcesSplitEvenly) {
  const Graph g = Graph::from_edges(3, {{1, 0}, {2, 0}});
  DenseMatrix h = random_matrix(3, 2, 6);
  h(2, 0) = h(1, 0);
  h(2, 1) = h(1, 1);
  const AttentionResult r = gat_attention(g, h, attention_params(2, 3, 7));
  ASSERT_EQ(r.attention.alpha.size(), 2u);
  EXPECT_EQ(r.attention.alpha[0], 0.5);
  EXPECT_EQ(r.attention.alpha[1], 0.5);
}

TEST(GatAttention, InEdgeWeightsSumToOne) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Graph g = random_graph(6 + seed % 10, 0.35, seed);
    const AttentionResult r = gat_attention(g, random_matrix(g.num_vertices(), 3, seed, 4.0),
                                            attention_params(3, 4, seed + 3));
    const Csr& in = g.in_csr();
    for (std::size_t v = 0; v < g.num_vertices(); ++v) {
      if (in.degree(v) == 0) continue;
      double s = 0.0;
      for (EdgeIndex e = in.offsets[v]; e < in.offsets[v + 1]; ++e) {
        EXPECT_GT(r.attention.alpha[e], 0.0);
        s += r.attention.alpha[e];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(GatAttention, RejectsPartialSlices) {
  const Graph g = random_graph(6, 0.3, 2);
  const DenseMatrix h = random_matrix(6, 4, 3);
  const LayerParams p = attention_params(4, 2, 4);
  EXPECT_THROW(gat_attention(g, col_slice(h, {0, 2}), p), ContractError);
  EXPECT_NO_THROW(gat_attention(g, col_slice(h, {0, 4}), p));
}

TEST(GatAttention, BackwardZeroUpstreamGivesZero) {
  const Graph g = random_graph(6, 0.4, 9);
  const DenseMatrix h = random_matrix(6, 3, 10);
  const LayerParams p = attention_params(3, 2, 11);
  const AttentionResult r = gat_attention(g, h, p);
  const std::vector<double> zero(g.num_edges(), 0.0);
  const AttentionGrads gr = gat_attention_backward(g, h, p, r, zero);
  for (double x : gr.grad_h.data()) EXPECT_EQ(x, 0.0);
  for (double x : gr.grad_weight.data()) EXPECT_EQ(x, 0.0);
  ASSERT_EQ(gr.grad_attn.size(), 4u);
  for (double x : gr.grad_attn) EXPECT_EQ(x, 0.0);
}

TEST(GatAttention, BackwardMatchesFiniteDifferences) {
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    const Graph g = random_graph(4, 0.6, seed);
    if (g.num_edges() == 0) continue;
    DenseMatrix h = random_matrix(4, 3, seed + 20);
    LayerParams p = attention_params(3, 2, seed + 30);
    const std::vector<double> w = [&] {
      const DenseMatrix m = random_matrix(g.num_edges(), 1, seed + 40);
      return std::vector<double>(m.data().begin(), m.data().end());
    }();
    const AttentionResult r = gat_attention(g, h, p);
    bool near_kink = false;
    for (double x : r.cache.raw) near_kink = near_kink || std::abs(x) < 1e-4;
    if (near_kink) continue;
    auto loss = [&] {
      const AttentionResult q = gat_attention(g, h, p);
      double s = 0.0;
      for (std::size_t e = 0; e < w.size(); ++e) s += w[e] * q.attention.alpha[e];
      return s;
    };
    const AttentionGrads gr = gat_attention_backward(g, h, p, r, w);
    EXPECT_LT(max_rel_err(gr.grad_h, numeric_gradient(loss, h), 1e-6), 1e-4);
    EXPECT_LT(max_rel_err(gr.grad_weight, numeric_gradient(loss, p.weight), 1e-6), 1e-4);
    EXPECT_LT(max_rel_err(gr.grad_attn, numeric_gradient(loss, p.attn), 1e-6), 1e-4);
    ++checked;
  }
  EXPECT_GE(checked, 5);
}

TEST(GatAttention, AggregateWithAttentionMatchesDenseOracle) {
  const Graph g = random_graph(12, 0.3, 17);
  const AttentionResult r = gat_attention(g, random_matrix(12, 3, 18), attention_params(3, 3, 19));
  const DenseMatrix h = random_matrix(12, 5, 20);
  const DenseMatrix oracle = matmul(dense_operator(view_of(g, r.attention)), h);
  EXPECT_LT(max_abs_diff(aggregate(g, r.attention, h), oracle), 1e-12);
}

}  // namespace
}  // namespace tpgnn
