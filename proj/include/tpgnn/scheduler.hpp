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

// Chunk-level scheduling of the propagation stage.
//
// Each worker holds one column slice of the embeddings for every vertex. The
// forward pass pulls source rows into the slice chunk by chunk (split), runs
// the L aggregation rounds chunk by chunk, and hands destination rows back to
// their owners (gather). The backward pass mirrors it on the transpose.
// Communication of a source row happens once, in the first chunk that needs it.

#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <iterator>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpgnn/collective.hpp"
#include "tpgnn/dense.hpp"
#include "tpgnn/graph.hpp"
#include "tpgnn/layers.hpp"

namespace tpgnn {

// ---------------------------------------------------------------------------
// Communication plan

/// Who communicates which source rows, and when.
struct ChunkCommPlan {
  std::size_t num_vertices = 0;
  int num_workers = 0;
  VertexOwnership ownership;
  /// Per chunk: sources not seen in any earlier chunk, ascending.
  std::vector<std::vector<VertexId>> new_sources;
  /// Per chunk: sources whose last consumer is this chunk, ascending.
  std::vector<std::vector<VertexId>> last_use;

  std::size_t num_chunks() const noexcept { return new_sources.size(); }

  std::vector<VertexId> unique_sources() const {
    std::vector<VertexId> out;
    for (const auto& s : new_sources) out.insert(out.end(), s.begin(), s.end());
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Number of source rows each worker is responsible for.
  std::vector<std::size_t> assignment_counts() const {
    std::vector<std::size_t> out(static_cast<std::size_t>(num_workers), 0);
    for (const auto& s : new_sources) {
      for (VertexId v : s) ++out[static_cast<std::size_t>(ownership.owner(v))];
    }
    return out;
  }
};

/// Deduplicates sources across chunks and deals them to workers round-robin
/// with one cursor that carries over from chunk to chunk, so per-worker counts
/// differ by at most one. Vertices that are never a source are dealt after
/// them with the same cursor; they own the destination side only.
inline ChunkCommPlan build_comm_plan(std::span<const Chunk> chunks, int num_workers,
                                     std::size_t num_vertices) {
  if (num_workers < 1) throw ConfigError("build_comm_plan: need at least one worker");
  std::size_t expect = 0;
  for (const Chunk& c : chunks) {
    if (c.dst.begin != expect) throw ConfigError("build_comm_plan: chunks must tile [0, V) in order");
    expect = c.dst.end;
  }
  if (expect != num_vertices) throw ConfigError("build_comm_plan: chunks do not cover every vertex");

  ChunkCommPlan plan;
  plan.num_vertices = num_vertices;
  plan.num_workers = num_workers;
  plan.new_sources.resize(chunks.size());
  plan.last_use.resize(chunks.size());

  std::vector<std::uint8_t> seen(num_vertices, 0);
  std::vector<std::size_t> last(num_vertices, chunks.size());
  std::vector<std::vector<VertexId>> lists(static_cast<std::size_t>(num_workers));
  std::size_t cursor = 0;
  for (std::size_t j = 0; j < chunks.size(); ++j) {
    for (VertexId u : chunks[j].src_set) {
      last[u] = j;
      if (seen[u]) continue;
      seen[u] = 1;
      plan.new_sources[j].push_back(u);
      lists[cursor++ % static_cast<std::size_t>(num_workers)].push_back(u);
    }
  }
  for (std::size_t v = 0; v < num_vertices; ++v) {
    if (!seen[v]) lists[cursor++ % static_cast<std::size_t>(num_workers)].push_back(static_cast<VertexId>(v));
    if (last[v] < chunks.size()) plan.last_use[last[v]].push_back(static_cast<VertexId>(v));
  }
  plan.ownership = VertexOwnership::from_lists(num_vertices, std::move(lists));
  return plan;
}

// ---------------------------------------------------------------------------
// Trace

enum class StageKind { CommSplit, Aggregate, CommGather };
enum class PassKind { Forward, Backward };

inline const char* to_string(StageKind s) {
  switch (s) {
    case StageKind::CommSplit: return "split";
    case StageKind::Aggregate: return "aggregate";
    case StageKind::CommGather: return "gather";
  }
  return "?";
}
inline const char* to_string(PassKind p) { return p == PassKind::Forward ? "forward" : "backward"; }

struct StageEvent {
  WorkerId worker = 0;
  PassKind pass = PassKind::Forward;
  StageKind stage = StageKind::Aggregate;
  std::size_t chunk = 0;
  std::size_t round = 1;       // propagation round, 1-based
  std::int64_t begin_ns = 0;
  std::int64_t end_ns = 0;
  std::size_t rows = 0;        // rows moved or produced by this stage
  std::size_t src_rows = 0;    // |src_set(chunk)|
};

/// Thread-safe event sink shared by all workers of one run.
class StageTrace {
 public:
  using Clock = std::chrono::steady_clock;

  StageTrace() : origin_(Clock::now()) {}

  std::int64_t now_ns() const {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - origin_).count();
  }

  void record(const StageEvent& e) {
    std::lock_guard lock(mu_);
    events_.push_back(e);
  }

  /// Events ordered by (worker, begin time).
  std::vector<StageEvent> events() const {
    std::lock_guard lock(mu_);
    std::vector<StageEvent> out = events_;
    std::stable_sort(out.begin(), out.end(), [](const StageEvent& a, const StageEvent& b) {
      if (a.worker != b.worker) return a.worker < b.worker;
      return a.begin_ns < b.begin_ns;
    });
    return out;
  }

  void clear() {
    std::lock_guard lock(mu_);
    events_.clear();
  }

 private:
  Clock::time_point origin_;
  mutable std::mutex mu_;
  std::vector<StageEvent> events_;
};

inline nlohmann::json to_json(const StageEvent& e) {
  return {{"worker", e.worker},     {"pass", to_string(e.pass)}, {"stage", to_string(e.stage)},
          {"chunk", e.chunk},       {"round", e.round},          {"begin_ns", e.begin_ns},
          {"end_ns", e.end_ns},     {"rows", e.rows},            {"src_rows", e.src_rows}};
}

inline std::string to_json_lines(std::span<const StageEvent> events) {
  std::string out;
  for (const StageEvent& e : events) {
    out += to_json(e).dump();
    out += '\n';
  }
  return out;
}

/// Largest number of source rows simultaneously resident on one worker.
/// Chunk j of round r holds |src_set(j)| rows from the start of its first
/// stage (its split in round 1, its aggregation otherwise) to the end of its
/// aggregation.
inline std::size_t peak_resident_rows(std::span<const StageEvent> events) {
  struct Interval {
    std::int64_t begin = 0;
    std::int64_t end = 0;
    std::size_t rows = 0;
    bool has_agg = false;
  };
  struct Key {
    WorkerId w;
    PassKind p;
    std::size_t round;
    std::size_t chunk;
    bool operator<(const Key& o) const {
      return std::tie(w, p, round, chunk) < std::tie(o.w, o.p, o.round, o.chunk);
    }
  };
  std::map<Key, Interval> spans;
  for (const StageEvent& e : events) {
    if (e.stage == StageKind::CommGather) continue;
    auto [it, fresh] = spans.try_emplace({e.worker, e.pass, e.round, e.chunk});
    Interval& iv = it->second;
    if (fresh) iv.begin = std::numeric_limits<std::int64_t>::max();
    iv.begin = std::min(iv.begin, e.begin_ns);
    iv.rows = e.src_rows;
    if (e.stage == StageKind::Aggregate) {
      iv.end = e.end_ns;
      iv.has_agg = true;
    }
  }
  // Sweep per (worker, pass); releases sort before acquires at equal times.
  std::size_t peak = 0;
  std::map<std::pair<WorkerId, int>, std::vector<std::tuple<std::int64_t, int, std::size_t>>> sweeps;
  for (const auto& [k, iv] : spans) {
    if (!iv.has_agg) continue;
    auto& pts = sweeps[{k.w, static_cast<int>(k.p)}];
    pts.emplace_back(iv.begin, 1, iv.rows);
    pts.emplace_back(iv.end, 0, iv.rows);
  }
  for (auto& [id, pts] : sweeps) {
    std::sort(pts.begin(), pts.end());
    std::size_t live = 0;
    for (const auto& [t, acquire, rows] : pts) {
      if (acquire) {
        live += rows;
        peak = std::max(peak, live);
      } else {
        live -= rows;
      }
    }
  }
  return peak;
}

/// True when some split of chunk j+1 ran while the aggregation of chunk j was
/// still in progress on the same worker.
inline bool has_split_compute_overlap(std::span<const StageEvent> events) {
  for (const StageEvent& a : events) {
    if (a.stage != StageKind::Aggregate) continue;
    for (const StageEvent& s : events) {
      if (s.stage != StageKind::CommSplit || s.worker != a.worker || s.pass != a.pass) continue;
      if (s.chunk != a.chunk + 1) continue;
      if (s.begin_ns < a.end_ns && a.begin_ns < s.end_ns) return true;
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Chunked propagation on one worker

/// What every worker needs to run the propagation stage. `op` carries the
/// already gamma-scaled coefficients.
struct PropagationSetup {
  AggregationView op;
  std::span<const Chunk> chunks;
  const ChunkCommPlan* plan = nullptr;
  std::size_t rounds = 1;
  bool pipelining = false;
  StageTrace* trace = nullptr;
};

struct ChunkedForward {
  DenseMatrix owned_out;    // Z_L for this worker's vertices, ascending id, full width
  DenseMatrix input_slice;  // this worker's columns of Z_0 for every source row
  Range cols;
};

struct ChunkedBackward {
  DenseMatrix owned_grad;   // dL/dZ_0 for this worker's vertices, ascending id, full width
  DenseMatrix grad_slice;   // this worker's columns of dL/dZ_L for every destination row
  Range cols;
};

namespace detail {

/// Rows of `owned` (indexed by local ownership position) for the vertices of
/// `rows` owned by `me`, in `rows` order.
inline DenseMatrix owned_rows_of(const DenseMatrix& owned, std::span<const VertexId> rows,
                                 const VertexOwnership& own, WorkerId me) {
  std::vector<VertexId> mine;
  for (VertexId v : rows) {
    if (own.owner(v) == me) mine.push_back(v);
  }
  DenseMatrix out(mine.size(), owned.cols());
  for (std::size_t i = 0; i < mine.size(); ++i) {
    auto src = owned.row(own.local_index(mine[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

inline void scatter_owned(DenseMatrix& owned, const DenseMatrix& got, std::span<const VertexId> rows,
                          const VertexOwnership& own, WorkerId me) {
  std::size_t i = 0;
  for (VertexId v : rows) {
    if (own.owner(v) != me) continue;
    auto src = got.row(i++);
    std::copy(src.begin(), src.end(), owned.row(own.local_index(v)).begin());
  }
}

inline FeatureSlice slice_rows(const DenseMatrix& buf, std::span<const VertexId> rows, WorkerId me,
                               Range cols, std::size_t dim) {
  return {me, cols, dim, select_rows(buf, rows)};
}

inline std::vector<VertexId> range_ids(Range r) {
  std::vector<VertexId> out(r.size());
  std::iota(out.begin(), out.end(), static_cast<VertexId>(r.begin));
  return out;
}

/// Progress counters shared by the communication and compute threads of one
/// worker. Waits fail fast when the other side has died.
class Handoff {
 public:
  void advance(std::size_t& counter, std::size_t value) {
    {
      std::lock_guard lock(mu_);
      counter = value;
    }
    cv_.notify_all();
  }
  void wait_at_least(const std::size_t& counter, std::size_t value) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return failed_ || counter >= value; });
    if (failed_) throw ProtocolError("chunk pipeline: peer stage failed");
  }
  void fail() {
    {
      std::lock_guard lock(mu_);
      failed_ = true;
    }
    cv_.notify_all();
  }

  std::size_t splits = 0;
  std::size_t first_round = 0;
  std::size_t last_round = 0;

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  bool failed_ = false;
};

/// Runs `comm_program` on a second thread while `compute_program` runs on
/// this one; rethrows the first failure after both stopped.
template <typename CommFn, typename ComputeFn>
void run_overlapped(Handoff& h, CommFn&& comm_program, ComputeFn&& compute_program) {
  std::exception_ptr comm_err;
  std::thread comm([&] {
    try {
      comm_program();
    } catch (...) {
      comm_err = std::current_exception();
      h.fail();
    }
  });
  std::exception_ptr compute_err;
  try {
    compute_program();
  } catch (...) {
    compute_err = std::current_exception();
    h.fail();
  }
  comm.join();
  if (comm_err) std::rethrow_exception(comm_err);
  if (compute_err) std::rethrow_exception(compute_err);
}

}  // namespace detail

/// Forward propagation Z_L = op^L Z_0 with chunked split/aggregate/gather.
/// `owned_in` holds full-width Z_0 rows of this worker's vertices (ascending id).
inline ChunkedForward run_chunked_propagation(Communicator& comm, const PropagationSetup& s,
                                              const DenseMatrix& owned_in) {
  const ChunkCommPlan& plan = *s.plan;
  const VertexOwnership& own = plan.ownership;
  const WorkerId me = comm.rank();
  const std::size_t dim = owned_in.cols();
  const Range cols = column_partition(dim, comm.size())[static_cast<std::size_t>(me)];
  const std::size_t n = s.chunks.size();
  const std::size_t V = plan.num_vertices;
  if (owned_in.rows() != own.owned(me).size()) throw ShapeError("chunked propagation: owned rows");
  if (plan.num_chunks() != n) throw ConfigError("chunked propagation: plan/chunk mismatch");

  ChunkedForward out{DenseMatrix(owned_in.rows(), dim), DenseMatrix(V, cols.size()), cols};
  if (s.rounds == 0) {
    out.owned_out = owned_in;
    return out;
  }
  DenseMatrix buf[2] = {DenseMatrix(V, cols.size()), DenseMatrix(V, cols.size())};
  auto input_of = [&](std::size_t r) -> const DenseMatrix& {
    return r == 1 ? out.input_slice : buf[r % 2];
  };
  auto output_of = [&](std::size_t r) -> DenseMatrix& { return buf[(r + 1) % 2]; };
  const DenseMatrix& final_buf = output_of(s.rounds);

  const RoundId split_round = comm.open_round(CollectiveKind::Split);
  const RoundId gather_round = comm.open_round(CollectiveKind::Gather);

  auto stamp = [&](StageKind k, std::size_t j, std::size_t r, std::int64_t t0, std::size_t rows) {
    if (!s.trace) return;
    s.trace->record({me, PassKind::Forward, k, j, r, t0, s.trace->now_ns(), rows,
                     s.chunks[j].src_set.size()});
  };
  auto t_now = [&] { return s.trace ? s.trace->now_ns() : 0; };

  auto do_split = [&](std::size_t j) {
    const std::int64_t t0 = t_now();
    const auto& rows = plan.new_sources[j];
    const DenseMatrix mine = detail::owned_rows_of(owned_in, rows, own, me);
    const FeatureSlice got = split_part(comm, split_round, static_cast<int>(j), mine, rows, own);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto src = got.data.row(i);
      std::copy(src.begin(), src.end(), out.input_slice.row(rows[i]).begin());
    }
    stamp(StageKind::CommSplit, j, 1, t0, rows.size());
  };
  auto do_aggregate = [&](std::size_t j, std::size_t r) {
    const std::int64_t t0 = t_now();
    aggregate_rows(s.op, input_of(r), output_of(r), s.chunks[j].dst);
    stamp(StageKind::Aggregate, j, r, t0, s.chunks[j].dst.size());
  };
  auto do_gather = [&](std::size_t j) {
    const std::int64_t t0 = t_now();
    const auto rows = detail::range_ids(s.chunks[j].dst);
    const FeatureSlice local = detail::slice_rows(final_buf, rows, me, cols, dim);
    const DenseMatrix full = gather_part(comm, gather_round, static_cast<int>(j), local, rows, own);
    detail::scatter_owned(out.owned_out, full, rows, own, me);
    stamp(StageKind::CommGather, j, s.rounds, t0, rows.size());
  };

  if (!s.pipelining) {
    if (s.rounds == 1) {
      for (std::size_t j = 0; j < n; ++j) {
        do_split(j);
        do_aggregate(j, 1);
        do_gather(j);
      }
    } else {
      for (std::size_t j = 0; j < n; ++j) {
        do_split(j);
        do_aggregate(j, 1);
      }
      for (std::size_t r = 2; r <= s.rounds; ++r) {
        for (std::size_t j = 0; j < n; ++j) do_aggregate(j, r);
      }
      for (std::size_t j = 0; j < n; ++j) do_gather(j);
    }
    return out;
  }

  detail::Handoff h;
  auto gated_split = [&](std::size_t j) {
    if (j >= 2) h.wait_at_least(h.first_round, j - 1);
    do_split(j);
    h.advance(h.splits, j + 1);
  };
  auto gated_gather = [&](std::size_t j) {
    h.wait_at_least(h.last_round, j + 1);
    do_gather(j);
  };
  detail::run_overlapped(
      h,
      [&] {
        if (s.rounds == 1) {
          gated_split(0);
          for (std::size_t j = 0; j < n; ++j) {
            if (j + 1 < n) gated_split(j + 1);
            gated_gather(j);
          }
        } else {
          for (std::size_t j = 0; j < n; ++j) gated_split(j);
          for (std::size_t j = 0; j < n; ++j) gated_gather(j);
        }
      },
      [&] {
        for (std::size_t r = 1; r <= s.rounds; ++r) {
          for (std::size_t j = 0; j < n; ++j) {
            if (r == 1) h.wait_at_least(h.splits, j + 1);
            do_aggregate(j, r);
            if (r == 1) h.advance(h.first_round, j + 1);
            if (r == s.rounds) h.advance(h.last_round, j + 1);
          }
        }
      });
  return out;
}

/// Backward of run_chunked_propagation: dL/dZ_0 = (op^T)^L dL/dZ_L. Chunk j
/// scatters along the out-edges of its sources; a source's gradient is final
/// once its last consuming chunk of the last round has run, and is gathered
/// right then.
inline ChunkedBackward run_chunked_propagation_backward(Communicator& comm,
                                                        const PropagationSetup& s,
                                                        const DenseMatrix& owned_grad_out) {
  const ChunkCommPlan& plan = *s.plan;
  const VertexOwnership& own = plan.ownership;
  const WorkerId me = comm.rank();
  const std::size_t dim = owned_grad_out.cols();
  const Range cols = column_partition(dim, comm.size())[static_cast<std::size_t>(me)];
  const std::size_t n = s.chunks.size();
  const std::size_t V = plan.num_vertices;
  if (owned_grad_out.rows() != own.owned(me).size()) {
    throw ShapeError("chunked propagation backward: owned rows");
  }
  if (plan.num_chunks() != n) throw ConfigError("chunked propagation backward: plan/chunk mismatch");

  ChunkedBackward out{DenseMatrix(owned_grad_out.rows(), dim), DenseMatrix(V, cols.size()), cols};
  if (s.rounds == 0) {
    out.owned_grad = owned_grad_out;
    return out;
  }
  DenseMatrix buf[2] = {DenseMatrix(V, cols.size()), DenseMatrix(V, cols.size())};
  auto input_of = [&](std::size_t r) -> const DenseMatrix& {
    return r == 1 ? out.grad_slice : buf[r % 2];
  };
  auto output_of = [&](std::size_t r) -> DenseMatrix& { return buf[(r + 1) % 2]; };
  const DenseMatrix& final_buf = output_of(s.rounds);

  const RoundId split_round = comm.open_round(CollectiveKind::Split);
  const RoundId gather_round = comm.open_round(CollectiveKind::Gather);

  auto stamp = [&](StageKind k, std::size_t j, std::size_t r, std::int64_t t0, std::size_t rows) {
    if (!s.trace) return;
    s.trace->record({me, PassKind::Backward, k, j, r, t0, s.trace->now_ns(), rows,
                     s.chunks[j].src_set.size()});
  };
  auto t_now = [&] { return s.trace ? s.trace->now_ns() : 0; };

  auto do_split = [&](std::size_t j) {
    const std::int64_t t0 = t_now();
    const auto rows = detail::range_ids(s.chunks[j].dst);
    const DenseMatrix mine = detail::owned_rows_of(owned_grad_out, rows, own, me);
    const FeatureSlice got = split_part(comm, split_round, static_cast<int>(j), mine, rows, own);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto src = got.data.row(i);
      std::copy(src.begin(), src.end(), out.grad_slice.row(rows[i]).begin());
    }
    stamp(StageKind::CommSplit, j, 1, t0, rows.size());
  };
  auto do_aggregate = [&](std::size_t j, std::size_t r) {
    const std::int64_t t0 = t_now();
    if (j == 0) {
      auto d = output_of(r).data();
      std::fill(d.begin(), d.end(), 0.0);
    }
    aggregate_backward_rows(s.op, input_of(r), output_of(r), s.chunks[j].dst);
    stamp(StageKind::Aggregate, j, r, t0, s.chunks[j].dst.size());
  };
  auto do_gather = [&](std::size_t j) {
    const std::int64_t t0 = t_now();
    const auto& rows = plan.last_use[j];
    const FeatureSlice local = detail::slice_rows(final_buf, rows, me, cols, dim);
    const DenseMatrix full = gather_part(comm, gather_round, static_cast<int>(j), local, rows, own);
    detail::scatter_owned(out.owned_grad, full, rows, own, me);
    stamp(StageKind::CommGather, j, s.rounds, t0, rows.size());
  };

  if (!s.pipelining) {
    if (s.rounds == 1) {
      for (std::size_t j = 0; j < n; ++j) {
        do_split(j);
        do_aggregate(j, 1);
        do_gather(j);
      }
    } else {
      for (std::size_t j = 0; j < n; ++j) {
        do_split(j);
        do_aggregate(j, 1);
      }
      for (std::size_t r = 2; r <= s.rounds; ++r) {
        for (std::size_t j = 0; j < n; ++j) do_aggregate(j, r);
      }
      for (std::size_t j = 0; j < n; ++j) do_gather(j);
    }
    return out;
  }

  detail::Handoff h;
  auto gated_split = [&](std::size_t j) {
    if (j >= 2) h.wait_at_least(h.first_round, j - 1);
    do_split(j);
    h.advance(h.splits, j + 1);
  };
  auto gated_gather = [&](std::size_t j) {
    h.wait_at_least(h.last_round, j + 1);
    do_gather(j);
  };
  detail::run_overlapped(
      h,
      [&] {
        if (s.rounds == 1) {
          gated_split(0);
          for (std::size_t j = 0; j < n; ++j) {
            if (j + 1 < n) gated_split(j + 1);
            gated_gather(j);
          }
        } else {
          for (std::size_t j = 0; j < n; ++j) gated_split(j);
          for (std::size_t j = 0; j < n; ++j) gated_gather(j);
        }
      },
      [&] {
        for (std::size_t r = 1; r <= s.rounds; ++r) {
          for (std::size_t j = 0; j < n; ++j) {
            if (r == 1) h.wait_at_least(h.splits, j + 1);
            do_aggregate(j, r);
            if (r == 1) h.advance(h.first_round, j + 1);
            if (r == s.rounds) h.advance(h.last_round, j + 1);
          }
        }
      });
  return out;
}

// ---------------------------------------------------------------------------
// Whole-group convenience wrappers

struct DistributedPropagation {
  DenseMatrix result;  // full V x D, reassembled from the owners
  CommLedger ledger;
  std::vector<StageEvent> trace;
  ChunkCommPlan plan;
};

namespace detail {

template <typename Body>
DistributedPropagation run_distributed(AggregationView op, double gamma, const DenseMatrix& full,
                                       int workers, std::size_t num_chunks, std::size_t rounds,
                                       bool pipelining, Body body) {
  if (full.rows() != op.num_vertices()) throw ShapeError("distributed propagation: row mismatch");
  const auto chunks = partition_chunks(*op.rows, num_chunks);
  DistributedPropagation res;
  res.plan = build_comm_plan(chunks, workers, op.num_vertices());
  std::vector<double> scaled(op.values.begin(), op.values.end());
  for (double& v : scaled) v *= gamma;
  StageTrace trace;
  const PropagationSetup setup{{op.rows, scaled}, chunks, &res.plan, rounds, pipelining, &trace};
  res.result = DenseMatrix(full.rows(), full.cols());
  std::mutex mu;
  WorkerGroup group(workers);
  group.run([&](Communicator& comm) {
    const auto& mine = res.plan.ownership.owned(comm.rank());
    const DenseMatrix owned = body(comm, setup, select_rows(full, mine));
    std::lock_guard lock(mu);
    for (std::size_t i = 0; i < mine.size(); ++i) {
      auto src = owned.row(i);
      std::copy(src.begin(), src.end(), res.result.row(mine[i]).begin());
    }
  });
  res.ledger = group.ledger_snapshot();
  res.trace = trace.events();
  return res;
}

}  // namespace detail

/// Runs the chunked forward propagation on `workers` in-process workers, each
/// starting from its owned rows of `z0`, and reassembles Z_L.
inline DistributedPropagation propagate_distributed(AggregationView op, double gamma,
                                                    const DenseMatrix& z0, int workers,
                                                    std::size_t num_chunks, std::size_t rounds,
                                                    bool pipelining) {
  return detail::run_distributed(op, gamma, z0, workers, num_chunks, rounds, pipelining,
                                 [](Communicator& c, const PropagationSetup& s, DenseMatrix owned) {
                                   return run_chunked_propagation(c, s, owned).owned_out;
                                 });
}

inline DistributedPropagation propagate_backward_distributed(AggregationView op, double gamma,
                                                             const DenseMatrix& grad_zl, int workers,
                                                             std::size_t num_chunks,
                                                             std::size_t rounds, bool pipelining) {
  return detail::run_distributed(op, gamma, grad_zl, workers, num_chunks, rounds, pipelining,
                                 [](Communicator& c, const PropagationSetup& s, DenseMatrix owned) {
                                   return run_chunked_propagation_backward(c, s, owned).owned_grad;
                                 });
}

}  // namespace tpgnn
