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
#include "tpgnn/decoupled.hpp"
#include "tpgnn/synthetic.hpp"

namespace tpgnn {
namespace {

using testing::bitwise_equal;
using testing::dense_operator;
using testing::max_rel_err;
using testing::numeric_gradient;
using testing::random_graph;
using testing::random_matrix;
using testing::random_undirected_graph;

std::vector<std::vector<VertexId>> contiguous_owned(std::size_t n, std::size_t workers) {
  std::vector<std::vector<VertexId>> out;
  for (const Range r : even_ranges(n, workers)) {
    std::vector<VertexId> ids;
    for (std::size_t v = r.begin; v < r.end; ++v) ids.push_back(static_cast<VertexId>(v));
    out.push_back(std::move(ids));
  }
  return out;
}

TEST(DecoupledConfig, Validation) {
  DecoupledConfig c;
  EXPECT_NO_THROW(c.validate());
  c.gamma = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.gamma = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DecoupledConfig{};
  c.layer_dims = {8, 2};
  EXPECT_THROW(c.validate(), ConfigError);
  c = DecoupledConfig{};
  c.nn_depth = 0;
  c.layer_dims = {8};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Mlp, SingleIdentityLayerIsIdentity) {
  const DenseMatrix x = random_matrix(5, 3, 1);
  const std::vector<LayerParams> params{{identity(3), {}}};
  EXPECT_TRUE(bitwise_equal(mlp_forward(x, params).output, x));
}

TEST(Mlp, TwoLayersComposeUpdates) {
  const DenseMatrix x = random_matrix(6, 4, 2);
  const std::vector<LayerParams> params = init_mlp_params({4, 5, 3}, false, 9);
  const DenseMatrix by_hand = gcn_update(gcn_update(x, params[0], true).output, params[1], false).output;
  EXPECT_TRUE(bitwise_equal(mlp_forward(x, params).output, by_hand));
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    DenseMatrix x = random_matrix(4, 3, seed);
    std::vector<LayerParams> params = init_mlp_params({3, 5, 2}, false, seed);
    const DenseMatrix w = random_matrix(4, 2, seed + 100);
    const MlpResult fwd = mlp_forward(x, params);
    bool near_kink = false;
    for (double v : fwd.cache.pre_activations[0].data()) near_kink = near_kink || std::abs(v) < 1e-4;
    if (near_kink) continue;
    const MlpGrads g = mlp_backward(fwd.cache, params, w);
    auto f = [&] { return testing::weighted_sum(mlp_forward(x, params).output, w); };
    EXPECT_LT(max_rel_err(g.grad_input, numeric_gradient(f, x), 1e-6), 1e-5);
    for (std::size_t l = 0; l < params.size(); ++l) {
      EXPECT_LT(max_rel_err(g.grad_weights[l], numeric_gradient(f, params[l].weight), 1e-6), 1e-5);
    }
  }
}

TEST(Propagate, ZeroRoundsIsIdentity) {
  const Graph g = random_graph(8, 0.3, 1);
  const NormCoefficients c = compute_norm(g, NormMode::SymSelfLoop);
  const DenseMatrix z = random_matrix(8, 3, 2);
  EXPECT_TRUE(bitwise_equal(propagate(z, g, c, 0.7, 0), z));
  EXPECT_TRUE(bitwise_equal(propagate_backward(z, g, c, 0.7, 0), z));
}

TEST(Propagate, MatchesDenseMatrixPower) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Graph g = random_graph(10, 0.3, seed);
    for (NormMode mode : {NormMode::SymSelfLoop, NormMode::GcnDegree}) {
      const NormCoefficients c = compute_norm(g, mode);
      DenseMatrix a = dense_operator(view_of(c));
      for (double& x : a.data()) x *= 0.5;
      const DenseMatrix z0 = random_matrix(10, 4, seed + 1);
      const DenseMatrix oracle = matmul(a, matmul(a, matmul(a, z0)));
      EXPECT_LT(max_abs_diff(propagate(z0, g, c, 0.5, 3), oracle), 1e-11);
    }
  }
}

TEST(Propagate, ContractsUnderSymmetricOperator) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Graph g = random_graph(30, 0.1, seed);
    const NormCoefficients c = compute_norm(g, NormMode::SymSelfLoop);
    const DenseMatrix z0 = random_matrix(30, 5, seed + 7);
    for (std::size_t rounds : {1u, 2u, 5u, 10u}) {
      const double bound = std::pow(0.9, static_cast<double>(rounds)) * frobenius_norm(z0) + 1e-9;
      EXPECT_LE(frobenius_norm(propagate(z0, g, c, 0.9, rounds)), bound);
    }
  }
}

TEST(Propagate, SymmetricBackwardEqualsForwardBitwise) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Graph g = random_graph(15, 0.2, seed);
    const NormCoefficients c = compute_norm(g, NormMode::SymSelfLoop);
    const DenseMatrix z = random_matrix(15, 3, seed);
    EXPECT_TRUE(bitwise_equal(propagate(z, g, c, 0.8, 3), propagate_backward(z, g, c, 0.8, 3)));
  }
}

TEST(Propagate, BackwardMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Graph g = random_graph(6, 0.35, seed);
    const NormCoefficients c = compute_norm(g, NormMode::GcnDegree);
    DenseMatrix z = random_matrix(6, 2, seed);
    const DenseMatrix w = random_matrix(6, 2, seed + 3);
    auto f = [&] { return testing::weighted_sum(propagate(z, g, c, 0.9, 3), w); };
    EXPECT_LT(max_rel_err(propagate_backward(w, g, c, 0.9, 3), numeric_gradient(f, z), 1e-6), 1e-6);
  }
}

TEST(Propagate, BackwardIsExactAdjoint) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const std::size_t n = 5 + seed % 40;
    const Graph g = random_graph(n, 0.15, seed);
    const NormCoefficients c = compute_norm(g, seed % 2 ? NormMode::GcnDegree : NormMode::SymSelfLoop);
    const DenseMatrix x = random_matrix(n, 3, seed + 1);
    const DenseMatrix y = random_matrix(n, 3, seed + 2);
    const std::size_t rounds = seed % 5;
    const double lhs = dot(propagate(x, g, c, 0.9, rounds), y);
    const double rhs = dot(x, propagate_backward(y, g, c, 0.9, rounds));
    EXPECT_NEAR(lhs, rhs, 1e-10);
  }
}

TEST(Propagate, SlicesConcatenateToFullResultBitwise) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Graph g = random_graph(20, 0.2, seed);
    const NormCoefficients c = compute_norm(g, NormMode::SymSelfLoop);
    const DenseMatrix z = random_matrix(20, 7, seed);
    const DenseMatrix full = propagate(z, g, c, 0.9, 4);
    for (std::size_t parts : {2u, 3u, 4u}) {
      std::vector<FeatureSlice> slices;
      const auto ranges = even_ranges(7, parts);
      for (std::size_t i = 0; i < parts; ++i) {
        slices.push_back(propagate(col_slice(z, ranges[i], static_cast<WorkerId>(i)), g, c, 0.9, 4));
      }
      EXPECT_TRUE(bitwise_equal(col_concat(slices), full));
    }
  }
}

TEST(GatPrecompute, SingleWorkerMatchesGatAttention) {
  const Graph g = random_graph(20, 0.2, 3);
  const DenseMatrix h = random_matrix(20, 4, 4);
  const std::vector<LayerParams> params = init_mlp_params({4, 3}, true, 5);
  const EdgeAttention a = precompute_gat_attention(g, h, params[0], contiguous_owned(20, 1));
  EXPECT_EQ(a.alpha, gat_attention(g, h, params[0]).attention.alpha);
}

TEST(GatPrecompute, PartitionedWorkersMatchSingleWorkerExactly) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Graph g = random_graph(20, 0.2, seed);
    const DenseMatrix h = random_matrix(20, 4, seed + 1);
    const std::vector<LayerParams> params = init_mlp_params({4, 3}, true, seed);
    const auto reference = gat_attention(g, h, params[0]).attention.alpha;
    for (std::size_t workers : {2u, 3u, 4u}) {
      EXPECT_EQ(precompute_gat_attention(g, h, params[0], contiguous_owned(20, workers)).alpha, reference);
    }
  }
}

TEST(GatPrecompute, RequiresFullEmbeddingsAndAPartition) {
  const Graph g = random_graph(10, 0.3, 1);
  const DenseMatrix h = random_matrix(10, 4, 2);
  const std::vector<LayerParams> params = init_mlp_params({4, 3}, true, 3);
  EXPECT_THROW(precompute_gat_attention(g, random_matrix(9, 4, 2), params[0], contiguous_owned(10, 2)),
               ContractError);
  EXPECT_THROW(precompute_gat_attention(g, col_slice(h, {0, 2}), params[0], contiguous_owned(10, 2)),
               ContractError);
  auto missing = contiguous_owned(10, 2);
  missing[1].pop_back();
  EXPECT_THROW(precompute_gat_attention(g, h, params[0], missing), ConfigError);
}

TEST(DecoupledPipeline, LogisticRegressionLossDecreases) {
  SyntheticParams sp;
  sp.cluster_size = 10;
  const Dataset ds = generate_synthetic(SyntheticKind::TwoCluster, sp, 1);
  const VertexSplit split = make_split(20, 1);
  DecoupledConfig cfg;
  cfg.nn_depth = 1;
  cfg.prop_rounds = 0;
  cfg.gamma = 1.0;
  cfg.layer_dims = {sp.feature_dim, 2};
  const NormCoefficients c = compute_norm(ds.graph, cfg.norm);
  std::vector<LayerParams> params = init_mlp_params(cfg.layer_dims, false, 1);
  double prev = 0.0;
  for (int step = 0; step < 20; ++step) {
    const ModelStep s = decoupled_forward_backward(cfg, ds.graph, c, ds.features, params, ds.labels, split.train);
    if (step > 0) {
      EXPECT_LT(s.loss, prev);
    }
    prev = s.loss;
    axpy_inplace(params[0].weight, -0.05, s.grad_weights[0]);
  }
}

TEST(DecoupledPipeline, ZeroFeaturesGiveLogClassCount) {
  const Graph g = random_graph(10, 0.3, 1);
  DecoupledConfig cfg;
  cfg.layer_dims = {4, 6, 3};
  const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
  const std::vector<std::uint8_t> train(10, 1);
  const ModelStep s = decoupled_forward_backward(cfg, g, compute_norm(g, cfg.norm), DenseMatrix(10, 4),
                                                 init_mlp_params(cfg.layer_dims, false, 2), labels, train);
  EXPECT_NEAR(s.loss, std::log(3.0), 1e-15);
}

struct PipelineCase {
  DecoupledKind kind;
  std::size_t rounds;
  NormMode norm;
};

TEST(DecoupledPipeline, FullGradientMatchesFiniteDifferences) {
  const std::vector<PipelineCase> cases{{DecoupledKind::DecoupledGCN, 2, NormMode::SymSelfLoop},
                                        {DecoupledKind::DecoupledGCN, 3, NormMode::GcnDegree},
                                        {DecoupledKind::DecoupledGAT, 1, NormMode::SymSelfLoop}};
  for (const PipelineCase& pc : cases) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      const Graph g = random_undirected_graph(6, 0.5, seed);
      DecoupledConfig cfg;
      cfg.kind = pc.kind;
      cfg.prop_rounds = pc.rounds;
      cfg.norm = pc.norm;
      cfg.gamma = 0.9;
      cfg.layer_dims = {3, 4, 2};
      const bool gat = pc.kind == DecoupledKind::DecoupledGAT;
      const NormCoefficients c = compute_norm(g, cfg.norm);
      const DenseMatrix x = random_matrix(6, 3, seed + 10, 2.0);
      const std::vector<int> labels{0, 1, 1, 0, 1, 0};
      const std::vector<std::uint8_t> train{1, 1, 0, 1, 1, 1};
      std::vector<LayerParams> params = init_mlp_params(cfg.layer_dims, gat, seed);
      const ModelStep s = decoupled_forward_backward(cfg, g, c, x, params, labels, train);
      auto loss = [&] { return decoupled_forward_backward(cfg, g, c, x, params, labels, train).loss; };
      for (std::size_t l = 0; l < params.size(); ++l) {
        EXPECT_LT(max_rel_err(s.grad_weights[l], numeric_gradient(loss, params[l].weight), 1e-7), 1e-4)
            << "layer " << l << " seed " << seed;
      }
      if (gat) {
        ASSERT_EQ(s.grad_attn.size(), 4u);
        EXPECT_LT(max_rel_err(s.grad_attn, numeric_gradient(loss, params.back().attn), 1e-7), 1e-4);
      } else {
        EXPECT_TRUE(s.grad_attn.empty());
      }
    }
  }
}

TEST(DecoupledPipeline, GatWithSeveralRoundsFreezesAttention) {
  const Graph g = random_undirected_graph(8, 0.4, 3);
  DecoupledConfig cfg;
  cfg.kind = DecoupledKind::DecoupledGAT;
  cfg.prop_rounds = 2;
  cfg.layer_dims = {3, 2};
  cfg.nn_depth = 1;
  const std::vector<int> labels{0, 1, 1, 0, 1, 0, 0, 1};
  const std::vector<std::uint8_t> train(8, 1);
  const std::vector<LayerParams> params = init_mlp_params(cfg.layer_dims, true, 4);
  const DenseMatrix x = random_matrix(8, 3, 5);
  const ModelStep s = decoupled_forward_backward(cfg, g, compute_norm(g, cfg.norm), x, params, labels, train);
  EXPECT_TRUE(s.grad_attn.empty());
  // With attention held fixed the weight gradient is MLP-backward of the
  // propagated loss gradient through the fixed operator.
  const AttentionResult att = gat_attention(g, mlp_forward(x, params).output,
                                            {identity(2), params[0].attn}, cfg.leaky_slope);
  const DenseMatrix logits = propagate(mlp_forward(x, params).output, g, att.attention, 1.0, 2);
  const LossAndGrad lg = softmax_xent_loss(logits, labels, train);
  const DenseMatrix back = propagate_backward(lg.grad, g, att.attention, 1.0, 2);
  const MlpGrads mg = mlp_backward(mlp_forward(x, params).cache, params, back);
  EXPECT_LT(max_rel_err(s.grad_weights[0], mg.grad_weights[0]), 1e-12);
}

}  // namespace
}  // namespace tpgnn
