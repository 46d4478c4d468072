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

// Closed-form communication and work predictions, and their comparison with
// what the ledger measured.
//
//   one tensor-parallel collective over rows R at width D:
//       sum over u in R of (D - width(owner(u)))
//   data parallel, per layer l: sum over workers of |R_i| * dims[l-1]

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tpgnn/collective.hpp"
#include "tpgnn/engines.hpp"
#include "tpgnn/graph.hpp"
#include "tpgnn/scheduler.hpp"

namespace tpgnn {

struct PredictedRound {
  CollectiveKind kind = CollectiveKind::Gather;
  std::uint64_t scalars = 0;
};

struct AnalyticCost {
  /// Rounds the prediction covers, in issue order: gather/split for the
  /// tensor-parallel engines, fetch/push for data parallel, none otherwise.
  std::vector<PredictedRound> rounds;
  std::uint64_t tp_total = 0;
  std::uint64_t dp_fetch_total = 0;
  std::uint64_t dp_push_total = 0;
  std::vector<std::uint64_t> edge_work;  // per worker, per epoch
  std::vector<std::uint64_t> nn_work;

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& r : rounds) t += r.scalars;
    return t;
  }
};

/// Scalars moved by one gather or split over `rows` at width `dim`.
inline std::uint64_t tp_collective_volume(const VertexOwnership& own, std::span<const VertexId> rows,
                                          std::size_t dim) {
  const auto cols = column_partition(dim, own.num_workers());
  std::uint64_t total = 0;
  for (VertexId u : rows) total += dim - cols[static_cast<std::size_t>(own.owner(u))].size();
  return total;
}

/// Same quantity when the rows are all V vertices under contiguous
/// ownership: sum_i |V_i| * (D - width_i).
inline std::uint64_t tp_collective_volume(std::size_t num_vertices, std::size_t dim, int workers) {
  const auto rows = even_ranges(num_vertices, static_cast<std::size_t>(workers));
  const auto cols = column_partition(dim, workers);
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) total += rows[i].size() * (dim - cols[i].size());
  return total;
}

inline AnalyticCost predict_costs(const EngineConfig& cfg, const Graph& g) {
  AnalyticCost c;
  const std::size_t V = g.num_vertices();
  const int N = cfg.workers;
  const NormCoefficients op = operator_for(cfg, g);
  const std::uint64_t nnz = op.rows.num_entries();
  const auto& dims = cfg.layer_dims;
  const std::size_t L = cfg.num_layers();
  c.edge_work.assign(static_cast<std::size_t>(N), 0);
  c.nn_work.assign(static_cast<std::size_t>(N), 0);

  switch (cfg.engine) {
    case EngineKind::Single: {
      if (cfg.decoupled()) {
        c.edge_work[0] = 2 * cfg.prop_rounds * nnz * dims.back();
        c.nn_work[0] = V * L;
      } else {
        for (std::size_t l = 0; l < L; ++l) c.edge_work[0] += nnz * dims[l] * (l > 0 ? 2 : 1);
        c.nn_work[0] = V * L;
      }
      break;
    }
    case EngineKind::NaiveTP: {
      const auto rows = even_ranges(V, static_cast<std::size_t>(N));
      for (std::size_t l = 0; l < L; ++l) {
        const std::uint64_t vol = tp_collective_volume(V, dims[l], N);
        c.rounds.push_back({CollectiveKind::Split, vol});
        c.rounds.push_back({CollectiveKind::Gather, vol});
      }
      for (std::size_t l = L; l-- > 1;) {
        const std::uint64_t vol = tp_collective_volume(V, dims[l], N);
        c.rounds.push_back({CollectiveKind::Split, vol});
        c.rounds.push_back({CollectiveKind::Gather, vol});
      }
      for (int w = 0; w < N; ++w) {
        for (std::size_t l = 0; l < L; ++l) {
          const std::uint64_t width = column_partition(dims[l], N)[static_cast<std::size_t>(w)].size();
          c.edge_work[static_cast<std::size_t>(w)] += nnz * width * (l > 0 ? 2 : 1);
        }
        c.nn_work[static_cast<std::size_t>(w)] = rows[static_cast<std::size_t>(w)].size() * L;
      }
      break;
    }
    case EngineKind::DecoupledTP: {
      const auto chunks = partition_chunks(op.rows, cfg.chunks);
      const ChunkCommPlan plan = build_comm_plan(chunks, N, V);
      const std::size_t D = dims.back();
      if (cfg.prop_rounds > 0) {
        const auto sources = plan.unique_sources();
        std::vector<VertexId> all(V);
        std::iota(all.begin(), all.end(), VertexId{0});
        const std::uint64_t src_vol = tp_collective_volume(plan.ownership, sources, D);
        const std::uint64_t dst_vol = tp_collective_volume(plan.ownership, all, D);
        c.rounds = {{CollectiveKind::Split, src_vol},
                    {CollectiveKind::Gather, dst_vol},
                    {CollectiveKind::Split, dst_vol},
                    {CollectiveKind::Gather, src_vol}};
      }
      for (int w = 0; w < N; ++w) {
        const std::uint64_t width = column_partition(D, N)[static_cast<std::size_t>(w)].size();
        c.edge_work[static_cast<std::size_t>(w)] = 2 * cfg.prop_rounds * nnz * width;
        c.nn_work[static_cast<std::size_t>(w)] = plan.ownership.owned(w).size() * L;
      }
      break;
    }
    case EngineKind::DataParallel: {
      const auto ranges = even_ranges(V, static_cast<std::size_t>(N));
      const auto remote = remote_set_sizes(op.rows, N);
      std::uint64_t r_total = 0;
      for (std::size_t r : remote) r_total += r;
      for (std::size_t l = 0; l < L; ++l) {
        c.rounds.push_back({CollectiveKind::Fetch, r_total * dims[l]});
      }
      for (std::size_t l = L; l-- > 1;) c.rounds.push_back({CollectiveKind::Push, r_total * dims[l]});
      for (int w = 0; w < N; ++w) {
        const Range mine = ranges[static_cast<std::size_t>(w)];
        const std::uint64_t local_nnz = op.rows.offsets[mine.end] - op.rows.offsets[mine.begin];
        for (std::size_t l = 0; l < L; ++l) {
          c.edge_work[static_cast<std::size_t>(w)] += local_nnz * dims[l] * (l > 0 ? 2 : 1);
        }
        c.nn_work[static_cast<std::size_t>(w)] = mine.size() * L;
      }
      break;
    }
  }
  for (const auto& r : c.rounds) {
    if (r.kind == CollectiveKind::Gather || r.kind == CollectiveKind::Split) c.tp_total += r.scalars;
    if (r.kind == CollectiveKind::Fetch) c.dp_fetch_total += r.scalars;
    if (r.kind == CollectiveKind::Push) c.dp_push_total += r.scalars;
  }
  return c;
}

struct RoundDelta {
  std::size_t index = 0;  // position among the compared rounds
  CollectiveKind kind = CollectiveKind::Gather;
  std::int64_t expected = 0;
  std::int64_t actual = 0;
};

struct CostComparison {
  bool pass = true;
  std::uint64_t predicted_total = 0;
  std::uint64_t measured_total = 0;
  std::vector<RoundDelta> mismatches;
  std::vector<std::string> problems;
  double edge_work_imbalance = 1.0;  // max / min across workers
  double nn_work_imbalance = 1.0;
  double comm_imbalance = 1.0;
};

/// Checks one epoch's ledger against the prediction round by round, plus the
/// per-worker work counters, and reports max/min imbalance ratios.
inline CostComparison compare_measured_vs_predicted(const EpochReport& epoch,
                                                    const AnalyticCost& predicted) {
  CostComparison out;
  std::vector<RoundSummary> measured;
  for (const RoundSummary& r : epoch.ledger.rounds()) {
    const bool compared = r.kind == CollectiveKind::Gather || r.kind == CollectiveKind::Split ||
                          r.kind == CollectiveKind::Fetch || r.kind == CollectiveKind::Push;
    if (compared) measured.push_back(r);
  }
  out.predicted_total = predicted.total();
  for (const auto& r : measured) out.measured_total += r.sent;
  if (measured.size() != predicted.rounds.size()) {
    out.pass = false;
    out.problems.push_back("round count: expected " + std::to_string(predicted.rounds.size()) +
                           ", measured " + std::to_string(measured.size()));
  }
  for (std::size_t i = 0; i < std::max(measured.size(), predicted.rounds.size()); ++i) {
    RoundDelta d;
    d.index = i;
    d.kind = i < predicted.rounds.size() ? predicted.rounds[i].kind : measured[i].kind;
    d.expected = i < predicted.rounds.size() ? static_cast<std::int64_t>(predicted.rounds[i].scalars) : 0;
    d.actual = i < measured.size() ? static_cast<std::int64_t>(measured[i].sent) : 0;
    const bool kind_ok = i < measured.size() && i < predicted.rounds.size() &&
                         measured[i].kind == predicted.rounds[i].kind;
    if (d.expected != d.actual || !kind_ok) {
      out.pass = false;
      out.mismatches.push_back(d);
    }
  }
  if (!predicted.edge_work.empty() && predicted.edge_work != epoch.edge_work) {
    out.pass = false;
    out.problems.push_back("per-worker edge work differs from the prediction");
  }
  if (!predicted.nn_work.empty() && predicted.nn_work != epoch.nn_work) {
    out.pass = false;
    out.problems.push_back("per-worker NN work differs from the prediction");
  }
  out.edge_work_imbalance = imbalance_ratio(epoch.edge_work);
  out.nn_work_imbalance = imbalance_ratio(epoch.nn_work);
  out.comm_imbalance = imbalance_ratio(epoch.comm_sent);
  return out;
}

}  // namespace tpgnn
