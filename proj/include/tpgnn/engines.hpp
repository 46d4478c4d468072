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

// Training engines. All four share model definitions, initialisation and the
// optimiser (plain gradient descent), so their loss curves are comparable
// epoch by epoch:
//
//   SingleWorker  one worker, whole matrices; the reference.
//   DataParallel  worker i owns a contiguous vertex range and fetches remote
//                 in-neighbour rows before every aggregation.
//   NaiveTP       coupled GCN with every layer's aggregation done on column
//                 slices; 4L-2 gather/split rounds per epoch.
//   DecoupledTP   MLP on owned vertices, then L chunked aggregation rounds on
//                 column slices; 4 gather/split rounds per epoch.

#pragma once

#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpgnn/collective.hpp"
#include "tpgnn/decoupled.hpp"
#include "tpgnn/dense.hpp"
#include "tpgnn/graph.hpp"
#include "tpgnn/layers.hpp"
#include "tpgnn/scheduler.hpp"
#include "tpgnn/synthetic.hpp"

namespace tpgnn {

enum class EngineKind { Single, DataParallel, NaiveTP, DecoupledTP };
enum class ModelKind { GCN, DecoupledGCN, DecoupledGAT };

inline const char* to_string(EngineKind k) {
  switch (k) {
    case EngineKind::Single: return "single";
    case EngineKind::DataParallel: return "dp";
    case EngineKind::NaiveTP: return "naive-tp";
    case EngineKind::DecoupledTP: return "decoupled-tp";
  }
  return "?";
}

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::GCN: return "gcn";
    case ModelKind::DecoupledGCN: return "decoupled-gcn";
    case ModelKind::DecoupledGAT: return "decoupled-gat";
  }
  return "?";
}

struct EngineConfig {
  EngineKind engine = EngineKind::Single;
  ModelKind model = ModelKind::GCN;
  int workers = 1;
  std::size_t chunks = 1;
  bool pipelining = false;
  /// Coupled: L + 1 entries (one aggregation per layer). Decoupled: k + 1.
  std::vector<std::size_t> layer_dims{8, 16, 2};
  std::size_t prop_rounds = 2;  // decoupled only
  double gamma = 1.0;           // decoupled only
  std::optional<NormMode> norm;  // default: GcnDegree coupled, SymSelfLoop decoupled
  double leaky_slope = kDefaultLeakySlope;
  double lr = 0.05;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  std::chrono::milliseconds timeout{30000};

  bool decoupled() const { return model != ModelKind::GCN; }
  NormMode norm_mode() const {
    return norm.value_or(decoupled() ? NormMode::SymSelfLoop : NormMode::GcnDegree);
  }
  std::size_t num_layers() const { return layer_dims.empty() ? 0 : layer_dims.size() - 1; }

  DecoupledConfig decoupled_config() const {
    DecoupledConfig c;
    c.nn_depth = num_layers();
    c.prop_rounds = prop_rounds;
    c.gamma = gamma;
    c.layer_dims = layer_dims;
    c.kind = model == ModelKind::DecoupledGAT ? DecoupledKind::DecoupledGAT
                                              : DecoupledKind::DecoupledGCN;
    c.norm = norm_mode();
    c.leaky_slope = leaky_slope;
    return c;
  }

  void validate(const Dataset& ds) const {
    if (workers < 1) throw ConfigError("engine: workers must be >= 1");
    if (engine == EngineKind::Single && workers != 1) {
      throw ConfigError("engine: the single-worker engine requires workers = 1");
    }
    if (layer_dims.size() < 2) throw ConfigError("engine: layer_dims needs at least two entries");
    for (std::size_t d : layer_dims) {
      if (d == 0) throw ConfigError("engine: layer dims must be positive");
    }
    if (layer_dims.front() != ds.features.cols()) {
      throw ConfigError("engine: layer_dims[0] = " + std::to_string(layer_dims.front()) +
                        " but features have " + std::to_string(ds.features.cols()) + " columns");
    }
    if (layer_dims.back() != static_cast<std::size_t>(ds.num_classes)) {
      throw ConfigError("engine: last layer dim " + std::to_string(layer_dims.back()) +
                        " != number of classes " + std::to_string(ds.num_classes));
    }
    const std::size_t V = ds.graph.num_vertices();
    if (V == 0) throw ConfigError("engine: empty graph");
    if ((engine == EngineKind::DataParallel || engine == EngineKind::NaiveTP) && decoupled()) {
      throw ConfigError(std::string("engine: ") + to_string(engine) + " runs the coupled gcn model");
    }
    if (engine == EngineKind::DecoupledTP && !decoupled()) {
      throw ConfigError("engine: decoupled-tp needs model decoupled-gcn or decoupled-gat");
    }
    if (engine == EngineKind::DataParallel && static_cast<std::size_t>(workers) > V) {
      throw ConfigError("engine: more data-parallel workers than vertices");
    }
    if (chunks < 1 || chunks > V) {
      throw ConfigError("engine: chunks must lie in [1, " + std::to_string(V) + "]");
    }
    if (!(lr >= 0.0)) throw ConfigError("engine: lr must be >= 0");
    if (decoupled()) decoupled_config().validate();
  }
};

struct PhaseTimes {
  double nn_ms = 0.0;
  double propagation_ms = 0.0;
  double sync_ms = 0.0;
  double total_ms = 0.0;
};

struct EpochReport {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  /// Per worker: aggregation multiply-adds, i.e. sum over passes of
  /// (edges touched x slice width), forward and backward.
  std::vector<std::uint64_t> edge_work;
  /// Per worker: vertex rows pushed through NN updates, summed over layers.
  std::vector<std::uint64_t> nn_work;
  std::vector<std::uint64_t> comm_sent;
  std::vector<std::uint64_t> comm_received;
  CommLedger ledger;  // this epoch's rounds only
  PhaseTimes times;   // measured on worker 0

  std::size_t gather_split_rounds() const {
    return ledger.count_rounds({CollectiveKind::Gather, CollectiveKind::Split});
  }
};

struct RunResult {
  std::vector<EpochReport> epochs;
  CommLedger ledger;
  std::vector<StageEvent> trace;
  std::vector<LayerParams> params;  // after the last epoch
};

/// Sparsity pattern plus coefficients of the aggregation operator of the
/// configured model. For the attention model the values are placeholders;
/// the pattern is the in-edge CSR.
inline NormCoefficients operator_for(const EngineConfig& cfg, const Graph& g) {
  if (cfg.model == ModelKind::DecoupledGAT) {
    return {cfg.norm_mode(), g.in_csr(), std::vector<double>(g.num_edges(), 0.0)};
  }
  return compute_norm(g, cfg.norm_mode());
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

/// Labels and split masks restricted to a list of vertices.
struct LocalRows {
  std::vector<int> labels;
  std::vector<std::uint8_t> train, val, test;
};

inline LocalRows local_rows(const Dataset& ds, const VertexSplit& split,
                            std::span<const VertexId> ids) {
  LocalRows r;
  for (VertexId v : ids) {
    r.labels.push_back(ds.labels[v]);
    r.train.push_back(split.train[v]);
    r.val.push_back(split.val[v]);
    r.test.push_back(split.test[v]);
  }
  return r;
}

inline std::size_t count_set(std::span<const std::uint8_t> m) {
  return static_cast<std::size_t>(std::count_if(m.begin(), m.end(), [](std::uint8_t x) { return x != 0; }));
}

/// [loss_sum, train_correct, val_correct, test_correct] as a 1 x 4 matrix.
inline DenseMatrix epoch_stats(const DenseMatrix& logits, const LocalRows& rows, double loss_sum) {
  const auto pred = row_argmax(logits);
  DenseMatrix s(1, 4);
  s(0, 0) = loss_sum;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool ok = pred[i] == rows.labels[i];
    if (!ok) continue;
    if (rows.train[i]) s(0, 1) += 1.0;
    if (rows.val[i]) s(0, 2) += 1.0;
    if (rows.test[i]) s(0, 3) += 1.0;
  }
  return s;
}

struct SplitCounts {
  double train = 0, val = 0, test = 0;
};

inline SplitCounts split_counts(const VertexSplit& s) {
  return {static_cast<double>(count_set(s.train)), static_cast<double>(count_set(s.val)),
          static_cast<double>(count_set(s.test))};
}

inline void fill_scores(EpochReport& r, const DenseMatrix& stats, const SplitCounts& n) {
  auto frac = [](double c, double total) { return total > 0 ? c / total : 0.0; };
  r.loss = stats(0, 0) / n.train;
  r.train_acc = frac(stats(0, 1), n.train);
  r.val_acc = frac(stats(0, 2), n.val);
  r.test_acc = frac(stats(0, 3), n.test);
}

inline void sgd_step(std::vector<LayerParams>& params, const std::vector<DenseMatrix>& grads,
                     const std::vector<double>* grad_attn, double lr) {
  for (std::size_t l = 0; l < params.size(); ++l) axpy_inplace(params[l].weight, -lr, grads[l]);
  if (grad_attn && !grad_attn->empty()) {
    auto& a = params.back().attn;
    for (std::size_t i = 0; i < a.size(); ++i) a[i] -= lr * (*grad_attn)[i];
  }
}

inline std::uint64_t nnz_in(const Csr& rows, Range dst) {
  return static_cast<std::uint64_t>(rows.offsets[dst.end] - rows.offsets[dst.begin]);
}

/// Shared bookkeeping of the multi-worker engines: report slots, the worker
/// group, and per-epoch ledger boundaries.
class GroupRun {
 public:
  GroupRun(const EngineConfig& cfg) : cfg_(cfg), group_(cfg.workers, cfg.timeout) {
    reports_.resize(cfg.epochs);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      reports_[e].epoch = e;
      reports_[e].edge_work.assign(static_cast<std::size_t>(cfg.workers), 0);
      reports_[e].nn_work.assign(static_cast<std::size_t>(cfg.workers), 0);
    }
    bounds_.assign(cfg.epochs + 1, 0);
  }

  EpochReport& report(std::size_t epoch) { return reports_[epoch]; }
  void mark_epoch_start(const Communicator& c, std::size_t epoch) {
    if (c.rank() == 0) bounds_[epoch] = c.next_round();
  }
  void mark_end(const Communicator& c) {
    if (c.rank() == 0) bounds_[cfg_.epochs] = c.next_round();
  }
  void set_params(const Communicator& c, const std::vector<LayerParams>& p) {
    if (c.rank() == 0) params_ = p;
  }

  template <typename Program>
  RunResult run(Program&& program, StageTrace* trace = nullptr) {
    group_.run(program);
    RunResult res;
    res.ledger = group_.ledger_snapshot();
    for (std::size_t e = 0; e < cfg_.epochs; ++e) {
      EpochReport& r = reports_[e];
      r.ledger = res.ledger.slice(bounds_[e], bounds_[e + 1]);
      r.comm_sent = r.ledger.sent_by_worker();
      r.comm_received = r.ledger.received_by_worker();
    }
    res.epochs = std::move(reports_);
    if (trace) res.trace = trace->events();
    res.params = std::move(params_);
    return res;
  }

 private:
  const EngineConfig& cfg_;
  WorkerGroup group_;
  std::vector<EpochReport> reports_;
  std::vector<std::uint64_t> bounds_;
  std::vector<LayerParams> params_;
};

/// Coupled GCN forward on whole matrices: a_l = A h_{l-1}, h_l = act(a_l W_l).
struct CoupledCache {
  std::vector<DenseMatrix> agg;
  std::vector<DenseMatrix> pre;
  DenseMatrix logits;
};

inline CoupledCache coupled_forward(AggregationView op, const DenseMatrix& x,
                                    const std::vector<LayerParams>& params) {
  CoupledCache c;
  DenseMatrix h = x;
  for (std::size_t l = 0; l < params.size(); ++l) {
    c.agg.push_back(aggregate(op, h));
    UpdateResult u = gcn_update(c.agg.back(), params[l], l + 1 < params.size());
    c.pre.push_back(std::move(u.pre_activation));
    h = std::move(u.output);
  }
  c.logits = std::move(h);
  return c;
}

inline std::vector<DenseMatrix> coupled_backward(AggregationView op, const CoupledCache& c,
                                                 const std::vector<LayerParams>& params,
                                                 DenseMatrix grad) {
  std::vector<DenseMatrix> gw(params.size());
  for (std::size_t l = params.size(); l-- > 0;) {
    UpdateGrads u = gcn_update_backward(c.agg[l], params[l], c.pre[l], grad, l + 1 < params.size());
    gw[l] = std::move(u.grad_weight);
    if (l > 0) grad = aggregate_backward(op, u.grad_input);
  }
  return gw;
}

}  // namespace detail

inline std::vector<LayerParams> initial_params(const EngineConfig& cfg) {
  return init_mlp_params(cfg.layer_dims, cfg.model == ModelKind::DecoupledGAT, cfg.seed);
}

// ---------------------------------------------------------------------------
// SingleWorker

inline RunResult run_single_worker(const EngineConfig& cfg, const Dataset& ds,
                                   const VertexSplit& vsplit) {
  cfg.validate(ds);
  if (cfg.workers != 1) throw ConfigError("run_single_worker: workers must be 1");
  const Graph& g = ds.graph;
  const NormCoefficients op_store = operator_for(cfg, g);
  const detail::SplitCounts counts = detail::split_counts(vsplit);
  if (counts.train == 0) throw ConfigError("run_single_worker: empty training mask");
  std::vector<VertexId> all(g.num_vertices());
  std::iota(all.begin(), all.end(), VertexId{0});
  const detail::LocalRows rows = detail::local_rows(ds, vsplit, all);
  std::vector<LayerParams> params = initial_params(cfg);
  const std::uint64_t V = g.num_vertices();
  const std::uint64_t nnz = op_store.rows.num_entries();

  RunResult res;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = detail::Clock::now();
    EpochReport r;
    r.epoch = epoch;
    r.comm_sent = r.comm_received = {0};
    r.ledger = CommLedger({}, 1);
    std::uint64_t edge_work = 0;
    std::uint64_t nn_work = 0;
    DenseMatrix logits;
    double loss_sum = 0.0;
    double model_loss = 0.0;
    if (!cfg.decoupled()) {
      const AggregationView op = view_of(op_store);
      const auto c = detail::coupled_forward(op, ds.features, params);
      LossAndGrad lg = softmax_xent_sum(c.logits, ds.labels, vsplit.train, counts.train);
      const auto gw = detail::coupled_backward(op, c, params, std::move(lg.grad));
      for (std::size_t l = 0; l < params.size(); ++l) {
        edge_work += nnz * cfg.layer_dims[l] * (l > 0 ? 2 : 1);
        nn_work += V;
      }
      logits = c.logits;
      loss_sum = lg.loss;
      detail::sgd_step(params, gw, nullptr, cfg.lr);
    } else {
      const DecoupledConfig dc = cfg.decoupled_config();
      ModelStep step = decoupled_forward_backward(dc, g, op_store, ds.features, params, ds.labels,
                                                  vsplit.train);
      const std::uint64_t width = cfg.layer_dims.back();
      edge_work = 2 * cfg.prop_rounds * nnz * width;
      nn_work = V * params.size();
      loss_sum = step.loss * counts.train;
      model_loss = step.loss;
      logits = std::move(step.logits);
      detail::sgd_step(params, step.grad_weights, &step.grad_attn, cfg.lr);
    }
    DenseMatrix stats = detail::epoch_stats(logits, rows, loss_sum);
    detail::fill_scores(r, stats, counts);
    if (cfg.decoupled()) r.loss = model_loss;  // exactly as the model computed it
    r.edge_work = {edge_work};
    r.nn_work = {nn_work};
    r.times.total_ms = detail::ms_since(t0);
    res.epochs.push_back(std::move(r));
  }
  res.ledger = CommLedger({}, 1);
  res.params = std::move(params);
  return res;
}

// ---------------------------------------------------------------------------
// DataParallel

namespace detail {

/// Remote in-neighbours of every worker's contiguous destination range.
inline std::vector<std::vector<VertexId>> remote_sources(const Csr& op, const VertexOwnership& own,
                                                         const std::vector<Range>& ranges) {
  std::vector<std::vector<VertexId>> out(ranges.size());
  for (std::size_t w = 0; w < ranges.size(); ++w) {
    std::vector<std::uint8_t> mark(op.num_rows(), 0);
    for (std::size_t v = ranges[w].begin; v < ranges[w].end; ++v) {
      for (VertexId u : op.row(v)) {
        if (own.owner(u) != static_cast<WorkerId>(w)) mark[u] = 1;
      }
    }
    for (std::size_t u = 0; u < mark.size(); ++u) {
      if (mark[u]) out[w].push_back(static_cast<VertexId>(u));
    }
  }
  return out;
}

}  // namespace detail

/// Sizes |R_i| of the remote in-neighbour sets under contiguous ownership.
inline std::vector<std::size_t> remote_set_sizes(const Csr& op, int workers) {
  const auto own = VertexOwnership::contiguous(op.num_rows(), workers);
  const auto ranges = even_ranges(op.num_rows(), static_cast<std::size_t>(workers));
  std::vector<std::size_t> out;
  for (const auto& r : detail::remote_sources(op, own, ranges)) out.push_back(r.size());
  return out;
}

inline RunResult run_data_parallel(const EngineConfig& cfg, const Dataset& ds,
                                   const VertexSplit& vsplit) {
  cfg.validate(ds);
  if (cfg.decoupled()) throw ConfigError("run_data_parallel: coupled gcn only");
  const Graph& g = ds.graph;
  const NormCoefficients op_store = operator_for(cfg, g);
  const AggregationView op = view_of(op_store);
  const std::size_t V = g.num_vertices();
  const int N = cfg.workers;
  const auto own = VertexOwnership::contiguous(V, N);
  const auto ranges = even_ranges(V, static_cast<std::size_t>(N));
  const auto remote = detail::remote_sources(op_store.rows, own, ranges);
  const detail::SplitCounts counts = detail::split_counts(vsplit);
  if (counts.train == 0) throw ConfigError("run_data_parallel: empty training mask");
  const std::size_t L = cfg.num_layers();

  detail::GroupRun run(cfg);
  auto program = [&](Communicator& comm) {
    const WorkerId me = comm.rank();
    const Range mine = ranges[static_cast<std::size_t>(me)];
    const auto& my_ids = own.owned(me);
    const detail::LocalRows rows = detail::local_rows(ds, vsplit, my_ids);
    std::vector<LayerParams> params = initial_params(cfg);
    const std::uint64_t my_nnz = detail::nnz_in(op_store.rows, mine);

    // Which of my rows each peer needs (ascending), per peer.
    std::vector<std::vector<VertexId>> wanted_from_me(static_cast<std::size_t>(N));
    std::vector<std::vector<VertexId>> wanted_by_me(static_cast<std::size_t>(N));
    for (int p = 0; p < N; ++p) {
      for (VertexId u : remote[static_cast<std::size_t>(p)]) {
        if (own.owner(u) == me) wanted_from_me[static_cast<std::size_t>(p)].push_back(u);
      }
    }
    for (VertexId u : remote[static_cast<std::size_t>(me)]) {
      wanted_by_me[static_cast<std::size_t>(own.owner(u))].push_back(u);
    }

    // Full-height buffer holding my rows plus fetched remote rows.
    auto fetch = [&](const DenseMatrix& h_own) {
      const std::size_t d = h_own.cols();
      DenseMatrix buf(V, d);
      for (std::size_t i = 0; i < my_ids.size(); ++i) {
        auto src = h_own.row(i);
        std::copy(src.begin(), src.end(), buf.row(my_ids[i]).begin());
      }
      const RoundId round = comm.open_round(CollectiveKind::Fetch);
      std::vector<Message> out(static_cast<std::size_t>(N));
      for (int p = 0; p < N; ++p) {
        if (p == me) continue;
        Message& m = out[static_cast<std::size_t>(p)];
        const auto& ids = wanted_from_me[static_cast<std::size_t>(p)];
        m.meta = {ids.size(), d};
        for (VertexId u : ids) {
          auto src = h_own.row(own.local_index(u));
          m.payload.insert(m.payload.end(), src.begin(), src.end());
        }
      }
      auto in = comm.exchange(round, 0, std::move(out));
      for (int p = 0; p < N; ++p) {
        if (p == me) continue;
        const auto& ids = wanted_by_me[static_cast<std::size_t>(p)];
        detail::expect_meta(in[static_cast<std::size_t>(p)], {ids.size(), d}, "fetch", p);
        for (std::size_t i = 0; i < ids.size(); ++i) {
          std::copy_n(in[static_cast<std::size_t>(p)].payload.begin() + static_cast<long>(i * d), d,
                      buf.row(ids[i]).begin());
        }
      }
      return buf;
    };

    // Partial source gradients go to their owners and are summed there in
    // ascending worker order.
    auto push = [&](const DenseMatrix& grad_a_own) {
      const std::size_t d = grad_a_own.cols();
      DenseMatrix go(V, d);
      for (std::size_t i = 0; i < my_ids.size(); ++i) {
        auto src = grad_a_own.row(i);
        std::copy(src.begin(), src.end(), go.row(my_ids[i]).begin());
      }
      DenseMatrix partial(V, d);
      aggregate_backward_rows(op, go, partial, mine);
      const RoundId round = comm.open_round(CollectiveKind::Push);
      std::vector<Message> out(static_cast<std::size_t>(N));
      for (int p = 0; p < N; ++p) {
        if (p == me) continue;
        Message& m = out[static_cast<std::size_t>(p)];
        const auto& ids = wanted_by_me[static_cast<std::size_t>(p)];
        m.meta = {ids.size(), d};
        for (VertexId u : ids) {
          auto src = partial.row(u);
          m.payload.insert(m.payload.end(), src.begin(), src.end());
        }
      }
      auto in = comm.exchange(round, 0, std::move(out));
      DenseMatrix grad_h(my_ids.size(), d);
      std::vector<std::uint8_t> started(my_ids.size(), 0);
      auto add_row = [&](std::size_t local, std::span<const double> src) {
        auto dst = grad_h.row(local);
        if (!started[local]) {
          std::copy(src.begin(), src.end(), dst.begin());
          started[local] = 1;
        } else {
          for (std::size_t k = 0; k < d; ++k) dst[k] += src[k];
        }
      };
      for (int p = 0; p < N; ++p) {
        if (p == me) {
          for (std::size_t i = 0; i < my_ids.size(); ++i) add_row(i, partial.row(my_ids[i]));
          continue;
        }
        const auto& ids = wanted_from_me[static_cast<std::size_t>(p)];
        const Message& m = in[static_cast<std::size_t>(p)];
        detail::expect_meta(m, {ids.size(), d}, "push", p);
        for (std::size_t i = 0; i < ids.size(); ++i) {
          add_row(own.local_index(ids[i]),
                  std::span<const double>(m.payload).subspan(i * d, d));
        }
      }
      return grad_h;
    };

    DenseMatrix x_own = select_rows(ds.features, my_ids);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      run.mark_epoch_start(comm, epoch);
      const auto t0 = detail::Clock::now();
      EpochReport& rep = run.report(epoch);
      std::uint64_t edge_work = 0;
      std::uint64_t nn_work = 0;
      double prop_ms = 0.0;
      double nn_ms = 0.0;

      std::vector<DenseMatrix> agg(L), pre(L);
      DenseMatrix h = x_own;
      for (std::size_t l = 0; l < L; ++l) {
        auto tp = detail::Clock::now();
        const DenseMatrix buf = fetch(h);
        DenseMatrix full(V, h.cols());
        aggregate_rows(op, buf, full, mine);
        agg[l] = select_rows(full, my_ids);
        edge_work += my_nnz * h.cols();
        prop_ms += detail::ms_since(tp);
        tp = detail::Clock::now();
        UpdateResult u = gcn_update(agg[l], params[l], l + 1 < L);
        nn_work += my_ids.size();
        pre[l] = std::move(u.pre_activation);
        h = std::move(u.output);
        nn_ms += detail::ms_since(tp);
      }
      LossAndGrad lg = softmax_xent_sum(h, rows.labels, rows.train, counts.train);
      DenseMatrix stats = detail::epoch_stats(h, rows, lg.loss);

      std::vector<DenseMatrix> grads(L);
      DenseMatrix grad = std::move(lg.grad);
      for (std::size_t l = L; l-- > 0;) {
        UpdateGrads u = gcn_update_backward(agg[l], params[l], pre[l], grad, l + 1 < L);
        grads[l] = std::move(u.grad_weight);
        if (l > 0) {
          grad = push(u.grad_input);
          edge_work += my_nnz * u.grad_input.cols();
        }
      }
      const auto ts = detail::Clock::now();
      grads.push_back(stats);
      std::vector<DenseMatrix> summed = allreduce_sum(comm, grads);
      const DenseMatrix total_stats = summed.back();
      summed.pop_back();
      detail::sgd_step(params, summed, nullptr, cfg.lr);
      rep.edge_work[static_cast<std::size_t>(me)] = edge_work;
      rep.nn_work[static_cast<std::size_t>(me)] = nn_work;
      if (me == 0) {
        detail::fill_scores(rep, total_stats, counts);
        rep.times.sync_ms = detail::ms_since(ts);
        rep.times.propagation_ms = prop_ms;
        rep.times.nn_ms = nn_ms;
        rep.times.total_ms = detail::ms_since(t0);
      }
    }
    run.mark_end(comm);
    run.set_params(comm, params);
  };
  return run.run(program);
}

// ---------------------------------------------------------------------------
// NaiveTP

inline RunResult run_naive_tp(const EngineConfig& cfg, const Dataset& ds, const VertexSplit& vsplit) {
  cfg.validate(ds);
  if (cfg.decoupled()) throw ConfigError("run_naive_tp: coupled gcn only");
  const Graph& g = ds.graph;
  const NormCoefficients op_store = operator_for(cfg, g);
  const std::size_t V = g.num_vertices();
  const int N = cfg.workers;
  const auto own = VertexOwnership::contiguous(V, N);
  std::vector<VertexId> all(V);
  std::iota(all.begin(), all.end(), VertexId{0});
  const detail::SplitCounts counts = detail::split_counts(vsplit);
  if (counts.train == 0) throw ConfigError("run_naive_tp: empty training mask");
  const std::size_t L = cfg.num_layers();
  const std::uint64_t nnz = op_store.rows.num_entries();

  detail::GroupRun run(cfg);
  auto program = [&](Communicator& comm) {
    const WorkerId me = comm.rank();
    const auto& my_ids = own.owned(me);
    const detail::LocalRows rows = detail::local_rows(ds, vsplit, my_ids);
    std::vector<LayerParams> params = initial_params(cfg);
    const DenseMatrix x_own = select_rows(ds.features, my_ids);
    auto width_of = [&](std::size_t d) {
      return column_partition(d, N)[static_cast<std::size_t>(me)].size();
    };

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      run.mark_epoch_start(comm, epoch);
      const auto t0 = detail::Clock::now();
      EpochReport& rep = run.report(epoch);
      std::uint64_t edge_work = 0;
      std::uint64_t nn_work = 0;
      double prop_ms = 0.0;
      double nn_ms = 0.0;

      std::vector<DenseMatrix> agg(L), pre(L);
      DenseMatrix h = x_own;
      for (std::size_t l = 0; l < L; ++l) {
        auto tp = detail::Clock::now();
        const FeatureSlice hs = split(comm, h, all, own);
        const FeatureSlice as = aggregate(g, op_store, hs);
        edge_work += nnz * hs.data.cols();
        agg[l] = gather(comm, as, all, own);
        prop_ms += detail::ms_since(tp);
        tp = detail::Clock::now();
        UpdateResult u = gcn_update(agg[l], params[l], l + 1 < L);
        nn_work += my_ids.size();
        pre[l] = std::move(u.pre_activation);
        h = std::move(u.output);
        nn_ms += detail::ms_since(tp);
      }
      LossAndGrad lg = softmax_xent_sum(h, rows.labels, rows.train, counts.train);
      DenseMatrix stats = detail::epoch_stats(h, rows, lg.loss);

      std::vector<DenseMatrix> grads(L);
      DenseMatrix grad = std::move(lg.grad);
      for (std::size_t l = L; l-- > 0;) {
        UpdateGrads u = gcn_update_backward(agg[l], params[l], pre[l], grad, l + 1 < L);
        grads[l] = std::move(u.grad_weight);
        if (l > 0) {
          const FeatureSlice gs = split(comm, u.grad_input, all, own);
          const FeatureSlice back = aggregate_backward(g, op_store, gs);
          edge_work += nnz * width_of(u.grad_input.cols());
          grad = gather(comm, back, all, own);
        }
      }
      const auto ts = detail::Clock::now();
      grads.push_back(stats);
      std::vector<DenseMatrix> summed = allreduce_sum(comm, grads);
      const DenseMatrix total_stats = summed.back();
      summed.pop_back();
      detail::sgd_step(params, summed, nullptr, cfg.lr);
      rep.edge_work[static_cast<std::size_t>(me)] = edge_work;
      rep.nn_work[static_cast<std::size_t>(me)] = nn_work;
      if (me == 0) {
        detail::fill_scores(rep, total_stats, counts);
        rep.times.sync_ms = detail::ms_since(ts);
        rep.times.propagation_ms = prop_ms;
        rep.times.nn_ms = nn_ms;
        rep.times.total_ms = detail::ms_since(t0);
      }
    }
    run.mark_end(comm);
    run.set_params(comm, params);
  };
  return run.run(program);
}

// ---------------------------------------------------------------------------
// DecoupledTP

inline RunResult run_decoupled_tp(const EngineConfig& cfg, const Dataset& ds,
                                  const VertexSplit& vsplit) {
  cfg.validate(ds);
  if (!cfg.decoupled()) throw ConfigError("run_decoupled_tp: needs a decoupled model");
  const Graph& g = ds.graph;
  const DecoupledConfig dc = cfg.decoupled_config();
  const bool gat = cfg.model == ModelKind::DecoupledGAT;
  const NormCoefficients op_store = operator_for(cfg, g);
  const std::size_t V = g.num_vertices();
  const std::size_t E = g.num_edges();
  const int N = cfg.workers;
  const std::size_t L = cfg.prop_rounds;
  const auto chunks = partition_chunks(op_store.rows, cfg.chunks);
  const ChunkCommPlan plan = build_comm_plan(chunks, N, V);
  const VertexOwnership& own = plan.ownership;
  const detail::SplitCounts counts = detail::split_counts(vsplit);
  if (counts.train == 0) throw ConfigError("run_decoupled_tp: empty training mask");
  const std::uint64_t nnz = op_store.rows.num_entries();
  const std::size_t classes = cfg.layer_dims.back();
  StageTrace trace;

  detail::GroupRun run(cfg);
  auto program = [&](Communicator& comm) {
    const WorkerId me = comm.rank();
    const auto& my_ids = own.owned(me);
    const detail::LocalRows rows = detail::local_rows(ds, vsplit, my_ids);
    std::vector<LayerParams> params = initial_params(cfg);
    const DenseMatrix x_own = select_rows(ds.features, my_ids);
    const Range cols = column_partition(classes, N)[static_cast<std::size_t>(me)];
    std::vector<double> scaled(op_store.values.size());

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      run.mark_epoch_start(comm, epoch);
      const auto t0 = detail::Clock::now();
      EpochReport& rep = run.report(epoch);

      // NN stage on owned vertices.
      auto tp = detail::Clock::now();
      MlpResult mlp = mlp_forward(x_own, params);
      const DenseMatrix& l_hat = mlp.output;
      double nn_ms = detail::ms_since(tp);

      // Attention from per-vertex scores shared across the group.
      tp = detail::Clock::now();
      EdgeAttention att;
      std::vector<double> raw;
      AttentionScores all_scores;
      if (gat && L > 0) {
        const AttentionScores mine = attention_scores(l_hat, params.back().attn);
        std::vector<std::uint64_t> keys(my_ids.begin(), my_ids.end());
        std::vector<double> vals;
        for (std::size_t i = 0; i < my_ids.size(); ++i) {
          vals.push_back(mine.src[i]);
          vals.push_back(mine.dst[i]);
        }
        const std::vector<double> merged = all_share(comm, keys, vals, V, 2);
        all_scores.src.resize(V);
        all_scores.dst.resize(V);
        for (std::size_t v = 0; v < V; ++v) {
          all_scores.src[v] = merged[2 * v];
          all_scores.dst[v] = merged[2 * v + 1];
        }
        att = attention_from_scores(g, all_scores, cfg.leaky_slope, &raw);
      }
      const std::span<const double> base =
          gat ? std::span<const double>(att.alpha) : std::span<const double>(op_store.values);
      for (std::size_t e = 0; e < scaled.size() && e < base.size(); ++e) scaled[e] = base[e] * cfg.gamma;
      const PropagationSetup setup{
          {&op_store.rows, scaled}, chunks, &plan, L, cfg.pipelining, &trace};

      const ChunkedForward fwd = run_chunked_propagation(comm, setup, l_hat);
      LossAndGrad lg = softmax_xent_sum(fwd.owned_out, rows.labels, rows.train, counts.train);
      DenseMatrix stats = detail::epoch_stats(fwd.owned_out, rows, lg.loss);
      const ChunkedBackward bwd = run_chunked_propagation_backward(comm, setup, lg.grad);
      DenseMatrix grad_l_hat = bwd.owned_grad;
      double prop_ms = detail::ms_since(tp);

      std::vector<double> grad_attn;
      if (gat && dc.attention_trainable()) {
        // <dL/dZ[v], Lhat[u]> per in-edge, summed over column slices.
        const Csr& in = g.in_csr();
        DenseMatrix partial(1, E);
        for (std::size_t v = 0; v < V; ++v) {
          auto gv = bwd.grad_slice.row(v);
          for (EdgeIndex e = in.offsets[v]; e < in.offsets[v + 1]; ++e) {
            auto lu = fwd.input_slice.row(in.indices[e]);
            double acc = 0.0;
            for (std::size_t k = 0; k < gv.size(); ++k) acc += gv[k] * lu[k];
            partial(0, e) = acc;
          }
        }
        DenseMatrix grad_alpha = allreduce_sum(comm, partial);
        for (double& x : grad_alpha.data()) x *= cfg.gamma;
        const AttentionScores gs =
            attention_scores_backward(g, att, raw, grad_alpha.data(), cfg.leaky_slope);
        AttentionScores gs_own;
        for (VertexId v : my_ids) {
          gs_own.src.push_back(gs.src[v]);
          gs_own.dst.push_back(gs.dst[v]);
        }
        ProjectionGrads pg = attention_projection_backward(l_hat, params.back().attn, gs_own);
        axpy_inplace(grad_l_hat, 1.0, pg.grad_projected);
        grad_attn = std::move(pg.grad_attn);
      }

      tp = detail::Clock::now();
      MlpGrads mg = mlp_backward(mlp.cache, params, grad_l_hat);
      nn_ms += detail::ms_since(tp);

      const auto ts = detail::Clock::now();
      std::vector<DenseMatrix> grads = std::move(mg.grad_weights);
      const std::size_t k = grads.size();
      if (!grad_attn.empty()) grads.emplace_back(1, grad_attn.size(), grad_attn);
      grads.push_back(stats);
      std::vector<DenseMatrix> summed = allreduce_sum(comm, grads);
      const DenseMatrix total_stats = summed.back();
      std::vector<double> attn_step;
      if (!grad_attn.empty()) {
        auto d = summed[k].data();
        attn_step.assign(d.begin(), d.end());
      }
      summed.resize(k);
      detail::sgd_step(params, summed, &attn_step, cfg.lr);

      rep.edge_work[static_cast<std::size_t>(me)] = 2 * L * nnz * cols.size();
      rep.nn_work[static_cast<std::size_t>(me)] = my_ids.size() * params.size();
      if (me == 0) {
        detail::fill_scores(rep, total_stats, counts);
        rep.times.sync_ms = detail::ms_since(ts);
        rep.times.propagation_ms = prop_ms;
        rep.times.nn_ms = nn_ms;
        rep.times.total_ms = detail::ms_since(t0);
      }
    }
    run.mark_end(comm);
    run.set_params(comm, params);
  };
  return run.run(program, &trace);
}

inline RunResult run_engine(const EngineConfig& cfg, const Dataset& ds, const VertexSplit& vsplit) {
  switch (cfg.engine) {
    case EngineKind::Single: return run_single_worker(cfg, ds, vsplit);
    case EngineKind::DataParallel: return run_data_parallel(cfg, ds, vsplit);
    case EngineKind::NaiveTP: return run_naive_tp(cfg, ds, vsplit);
    case EngineKind::DecoupledTP: return run_decoupled_tp(cfg, ds, vsplit);
  }
  throw ConfigError("unknown engine");
}

}  // namespace tpgnn
