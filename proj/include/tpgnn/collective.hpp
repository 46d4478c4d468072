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

// In-process worker group. N workers run the same program on their own
// threads and talk only through per-pair bounded FIFO mailboxes. Every
// collective is an exchange: each worker posts one message to every peer and
// then receives one from every peer in ascending worker order. All merges and
// sums run in worker-id (or key) order, so results never depend on thread
// interleaving.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "tpgnn/common.hpp"
#include "tpgnn/dense.hpp"

namespace tpgnn {

enum class CollectiveKind { Gather, Split, AllShare, AllReduce, Fetch, Push, Barrier };

inline const char* to_string(CollectiveKind k) {
  switch (k) {
    case CollectiveKind::Gather: return "gather";
    case CollectiveKind::Split: return "split";
    case CollectiveKind::AllShare: return "all_share";
    case CollectiveKind::AllReduce: return "allreduce";
    case CollectiveKind::Fetch: return "fetch";
    case CollectiveKind::Push: return "push";
    case CollectiveKind::Barrier: return "barrier";
  }
  return "?";
}

/// One worker's view of one exchange. A logical round may consist of several
/// parts (chunk-level pieces of one split or gather).
struct CommRecord {
  std::uint64_t round = 0;
  CollectiveKind kind = CollectiveKind::Barrier;
  int part = 0;
  WorkerId worker = 0;
  std::uint64_t sent = 0;      // scalars
  std::uint64_t received = 0;  // scalars

  friend bool operator==(const CommRecord&, const CommRecord&) = default;
};

struct RoundSummary {
  std::uint64_t round = 0;
  CollectiveKind kind = CollectiveKind::Barrier;
  int parts = 0;
  std::uint64_t sent = 0;
  std::uint64_t received = 0;
  std::vector<std::uint64_t> sent_by_worker;
  std::vector<std::uint64_t> received_by_worker;
};

/// Append-only record of every exchange, sorted by (round, part, worker).
class CommLedger {
 public:
  CommLedger() = default;
  CommLedger(std::vector<CommRecord> records, int num_workers)
      : records_(std::move(records)), num_workers_(num_workers) {
    std::sort(records_.begin(), records_.end(), [](const CommRecord& a, const CommRecord& b) {
      if (a.round != b.round) return a.round < b.round;
      if (a.part != b.part) return a.part < b.part;
      return a.worker < b.worker;
    });
  }

  const std::vector<CommRecord>& records() const noexcept { return records_; }
  int num_workers() const noexcept { return num_workers_; }
  bool empty() const noexcept { return records_.empty(); }

  std::vector<RoundSummary> rounds() const {
    std::vector<RoundSummary> out;
    int last_part = -1;
    for (const CommRecord& r : records_) {
      if (out.empty() || out.back().round != r.round) {
        RoundSummary s;
        s.round = r.round;
        s.kind = r.kind;
        s.sent_by_worker.assign(static_cast<std::size_t>(num_workers_), 0);
        s.received_by_worker.assign(static_cast<std::size_t>(num_workers_), 0);
        out.push_back(std::move(s));
        last_part = -1;
      }
      RoundSummary& s = out.back();
      if (r.part != last_part) {
        ++s.parts;
        last_part = r.part;
      }
      s.sent += r.sent;
      s.received += r.received;
      s.sent_by_worker[static_cast<std::size_t>(r.worker)] += r.sent;
      s.received_by_worker[static_cast<std::size_t>(r.worker)] += r.received;
    }
    return out;
  }

  /// Records whose round lies in [first, last).
  CommLedger slice(std::uint64_t first, std::uint64_t last) const {
    std::vector<CommRecord> out;
    for (const CommRecord& r : records_) {
      if (r.round >= first && r.round < last) out.push_back(r);
    }
    return CommLedger(std::move(out), num_workers_);
  }

  std::size_t count_rounds(std::initializer_list<CollectiveKind> kinds) const {
    std::size_t n = 0;
    for (const RoundSummary& s : rounds()) {
      if (std::find(kinds.begin(), kinds.end(), s.kind) != kinds.end()) ++n;
    }
    return n;
  }

  std::uint64_t total_sent(std::initializer_list<CollectiveKind> kinds) const {
    std::uint64_t n = 0;
    for (const CommRecord& r : records_) {
      if (std::find(kinds.begin(), kinds.end(), r.kind) != kinds.end()) n += r.sent;
    }
    return n;
  }

  std::vector<std::uint64_t> sent_by_worker() const {
    std::vector<std::uint64_t> out(static_cast<std::size_t>(num_workers_), 0);
    for (const CommRecord& r : records_) out[static_cast<std::size_t>(r.worker)] += r.sent;
    return out;
  }
  std::vector<std::uint64_t> received_by_worker() const {
    std::vector<std::uint64_t> out(static_cast<std::size_t>(num_workers_), 0);
    for (const CommRecord& r : records_) out[static_cast<std::size_t>(r.worker)] += r.received;
    return out;
  }

  friend bool operator==(const CommLedger&, const CommLedger&) = default;

 private:
  std::vector<CommRecord> records_;
  int num_workers_ = 0;
};

struct Message {
  std::uint64_t round = 0;
  int part = 0;
  CollectiveKind kind = CollectiveKind::Barrier;
  std::vector<std::uint64_t> meta;  // shape/key metadata, not counted as traffic
  std::vector<double> payload;
};

/// Handle naming one logical collective round.
struct RoundId {
  std::uint64_t id = 0;
  CollectiveKind kind = CollectiveKind::Barrier;
};

class WorkerGroup;

namespace detail {

struct GroupState;

/// Inbound queues of one worker, one FIFO per sender.
struct Mailbox {
  std::mutex mu;
  std::condition_variable cv;
  std::vector<std::deque<Message>> from;
};

struct GroupState {
  int size = 0;
  std::size_t capacity = 8;
  std::chrono::milliseconds timeout{30000};
  std::atomic<bool> aborted{false};
  std::vector<std::unique_ptr<Mailbox>> boxes;

  void abort() {
    aborted = true;
    for (auto& b : boxes) {
      std::lock_guard lock(b->mu);
      b->cv.notify_all();
    }
  }
};

}  // namespace detail

/// A worker's endpoint into its group. Not shared between workers; within a
/// worker at most one thread may use it at a time.
class Communicator {
 public:
  Communicator(detail::GroupState* state, WorkerId rank) : state_(state), rank_(rank) {}

  WorkerId rank() const noexcept { return rank_; }
  int size() const noexcept { return state_->size; }

  /// Starts a new logical round. Every worker must open rounds in the same order.
  RoundId open_round(CollectiveKind kind) { return {next_round_++, kind}; }
  std::uint64_t next_round() const noexcept { return next_round_; }

  /// Sends outgoing[p] to every p != rank and returns the messages received,
  /// indexed by sender. incoming[rank] is outgoing[rank], untouched and uncounted.
  std::vector<Message> exchange(RoundId round, int part, std::vector<Message> outgoing) {
    const int n = size();
    if (static_cast<int>(outgoing.size()) != n) {
      throw ContractError("exchange: need one outgoing message per worker");
    }
    CommRecord rec{round.id, round.kind, part, rank_, 0, 0};
    for (int p = 0; p < n; ++p) {
      outgoing[static_cast<std::size_t>(p)].round = round.id;
      outgoing[static_cast<std::size_t>(p)].part = part;
      outgoing[static_cast<std::size_t>(p)].kind = round.kind;
    }
    for (int step = 1; step < n; ++step) {
      const int p = (rank_ + step) % n;
      rec.sent += outgoing[static_cast<std::size_t>(p)].payload.size();
      post(p, std::move(outgoing[static_cast<std::size_t>(p)]));
    }
    std::vector<Message> incoming(static_cast<std::size_t>(n));
    incoming[static_cast<std::size_t>(rank_)] = std::move(outgoing[static_cast<std::size_t>(rank_)]);
    for (int p = 0; p < n; ++p) {
      if (p == rank_) continue;
      Message m = receive(p);
      if (m.round != round.id || m.part != part || m.kind != round.kind) {
        throw ProtocolError("worker " + std::to_string(rank_) + " expected " +
                            to_string(round.kind) + " round " + std::to_string(round.id) +
                            " part " + std::to_string(part) + " from worker " +
                            std::to_string(p) + ", got " + to_string(m.kind) + " round " +
                            std::to_string(m.round) + " part " + std::to_string(m.part));
      }
      rec.received += m.payload.size();
      incoming[static_cast<std::size_t>(p)] = std::move(m);
    }
    {
      std::lock_guard lock(ledger_mu_);
      ledger_.push_back(rec);
    }
    return incoming;
  }

  void barrier() {
    const RoundId r = open_round(CollectiveKind::Barrier);
    exchange(r, 0, std::vector<Message>(static_cast<std::size_t>(size())));
  }

  std::vector<CommRecord> ledger_records() const {
    std::lock_guard lock(ledger_mu_);
    return ledger_;
  }

 private:
  using Clock = std::chrono::steady_clock;

  void post(int to, Message m) {
    detail::Mailbox& box = *state_->boxes[static_cast<std::size_t>(to)];
    std::unique_lock lock(box.mu);
    auto& q = box.from[static_cast<std::size_t>(rank_)];
    const auto deadline = Clock::now() + state_->timeout;
    if (!box.cv.wait_until(lock, deadline,
                           [&] { return state_->aborted || q.size() < state_->capacity; })) {
      throw ProtocolError("worker " + std::to_string(rank_) + " timed out sending to worker " +
                          std::to_string(to));
    }
    if (state_->aborted) throw ProtocolError("worker group aborted");
    q.push_back(std::move(m));
    box.cv.notify_all();
  }

  Message receive(int from) {
    detail::Mailbox& box = *state_->boxes[static_cast<std::size_t>(rank_)];
    std::unique_lock lock(box.mu);
    auto& q = box.from[static_cast<std::size_t>(from)];
    const auto deadline = Clock::now() + state_->timeout;
    if (!box.cv.wait_until(lock, deadline, [&] { return state_->aborted || !q.empty(); })) {
      throw ProtocolError("worker " + std::to_string(rank_) + " timed out waiting for worker " +
                          std::to_string(from) + " (round " + std::to_string(next_round_ - 1) +
                          ")");
    }
    if (state_->aborted) throw ProtocolError("worker group aborted");
    Message m = std::move(q.front());
    q.pop_front();
    box.cv.notify_all();
    return m;
  }

  detail::GroupState* state_;
  WorkerId rank_;
  std::uint64_t next_round_ = 0;
  mutable std::mutex ledger_mu_;
  std::vector<CommRecord> ledger_;
};

/// N workers plus their mailboxes. run() launches one thread per worker and
/// joins them; the first failure aborts every peer and is rethrown.
class WorkerGroup {
 public:
  explicit WorkerGroup(int num_workers,
                       std::chrono::milliseconds timeout = std::chrono::milliseconds(30000)) {
    if (num_workers < 1) throw ConfigError("WorkerGroup: need at least one worker");
    state_ = std::make_unique<detail::GroupState>();
    state_->size = num_workers;
    state_->timeout = timeout;
    for (int i = 0; i < num_workers; ++i) {
      auto box = std::make_unique<detail::Mailbox>();
      box->from.resize(static_cast<std::size_t>(num_workers));
      state_->boxes.push_back(std::move(box));
    }
    for (int i = 0; i < num_workers; ++i) {
      comms_.push_back(std::make_unique<Communicator>(state_.get(), i));
    }
  }

  int size() const noexcept { return state_->size; }

  void run(const std::function<void(Communicator&)>& program) {
    if (broken_) throw ProtocolError("WorkerGroup: unusable after an aborted run");
    std::mutex err_mu;
    std::exception_ptr first;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(size()));
    for (int i = 0; i < size(); ++i) {
      threads.emplace_back([&, i] {
        try {
          program(*comms_[static_cast<std::size_t>(i)]);
        } catch (...) {
          {
            std::lock_guard lock(err_mu);
            if (!first) first = std::current_exception();
          }
          state_->abort();
        }
      });
    }
    for (auto& t : threads) t.join();
    if (first) {
      broken_ = true;
      std::rethrow_exception(first);
    }
  }

  /// Merged copy of every worker's records. Consistent when taken between rounds.
  CommLedger ledger_snapshot() const {
    std::vector<CommRecord> all;
    for (const auto& c : comms_) {
      auto part = c->ledger_records();
      all.insert(all.end(), part.begin(), part.end());
    }
    return CommLedger(std::move(all), size());
  }

 private:
  std::unique_ptr<detail::GroupState> state_;
  std::vector<std::unique_ptr<Communicator>> comms_;
  bool broken_ = false;
};

// ---------------------------------------------------------------------------
// Ownership

/// Assignment of every vertex to exactly one worker.
class VertexOwnership {
 public:
  VertexOwnership() = default;

  /// Ceil/floor contiguous ranges by vertex id.
  static VertexOwnership contiguous(std::size_t num_vertices, int num_workers) {
    std::vector<std::vector<VertexId>> lists(static_cast<std::size_t>(num_workers));
    const auto ranges = even_ranges(num_vertices, static_cast<std::size_t>(num_workers));
    for (std::size_t w = 0; w < ranges.size(); ++w) {
      for (std::size_t v = ranges[w].begin; v < ranges[w].end; ++v) {
        lists[w].push_back(static_cast<VertexId>(v));
      }
    }
    return from_lists(num_vertices, std::move(lists));
  }

  static VertexOwnership from_lists(std::size_t num_vertices,
                                    std::vector<std::vector<VertexId>> lists) {
    VertexOwnership o;
    o.owner_.assign(num_vertices, -1);
    o.local_.assign(num_vertices, 0);
    for (std::size_t w = 0; w < lists.size(); ++w) {
      std::sort(lists[w].begin(), lists[w].end());
      for (std::size_t i = 0; i < lists[w].size(); ++i) {
        const VertexId v = lists[w][i];
        if (v >= num_vertices) throw ConfigError("VertexOwnership: vertex id out of range");
        if (o.owner_[v] != -1) {
          throw ConfigError("VertexOwnership: vertex " + std::to_string(v) + " owned twice");
        }
        o.owner_[v] = static_cast<WorkerId>(w);
        o.local_[v] = i;
      }
    }
    for (std::size_t v = 0; v < num_vertices; ++v) {
      if (o.owner_[v] == -1) {
        throw ConfigError("VertexOwnership: vertex " + std::to_string(v) + " has no owner");
      }
    }
    o.lists_ = std::move(lists);
    return o;
  }

  std::size_t num_vertices() const noexcept { return owner_.size(); }
  int num_workers() const noexcept { return static_cast<int>(lists_.size()); }
  WorkerId owner(VertexId v) const { return owner_[v]; }
  /// Position of v within its owner's ascending list.
  std::size_t local_index(VertexId v) const { return local_[v]; }
  const std::vector<VertexId>& owned(WorkerId w) const { return lists_[static_cast<std::size_t>(w)]; }

 private:
  std::vector<WorkerId> owner_;
  std::vector<std::size_t> local_;
  std::vector<std::vector<VertexId>> lists_;
};

/// Column ranges per worker: the ceil/floor rule over D.
inline std::vector<Range> column_partition(std::size_t dim, int num_workers) {
  return even_ranges(dim, static_cast<std::size_t>(num_workers));
}

// ---------------------------------------------------------------------------
// Collectives

namespace detail {

inline std::vector<std::vector<std::size_t>> positions_by_owner(std::span<const VertexId> rows,
                                                                const VertexOwnership& own) {
  std::vector<std::vector<std::size_t>> pos(static_cast<std::size_t>(own.num_workers()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    pos[static_cast<std::size_t>(own.owner(rows[i]))].push_back(i);
  }
  return pos;
}

inline void expect_meta(const Message& m, std::initializer_list<std::uint64_t> want,
                        const char* op, int from) {
  if (!std::equal(m.meta.begin(), m.meta.end(), want.begin(), want.end())) {
    throw CollectiveError(std::string(op) + ": worker " + std::to_string(from) +
                          " disagrees on the shape of this round");
  }
}

}  // namespace detail

/// Dimension-partitioned -> vertex-partitioned. `local` holds this worker's
/// column slice for every vertex in `rows` (same order). Returns the full-width
/// rows for the vertices of `rows` this worker owns, in `rows` order, with
/// columns concatenated in ascending worker order.
inline DenseMatrix gather_part(Communicator& comm, RoundId round, int part,
                               const FeatureSlice& local, std::span<const VertexId> rows,
                               const VertexOwnership& own) {
  const int n = comm.size();
  const WorkerId me = comm.rank();
  const auto cols = column_partition(local.parent_cols, n);
  if (local.rows() != rows.size() || local.cols != cols[static_cast<std::size_t>(me)] ||
      local.data.cols() != local.cols.size()) {
    throw ShapeError("gather: local slice does not match rows/column partition");
  }
  const auto pos = detail::positions_by_owner(rows, own);
  std::vector<Message> out(static_cast<std::size_t>(n));
  for (int p = 0; p < n; ++p) {
    const auto& mine = pos[static_cast<std::size_t>(p)];
    Message& m = out[static_cast<std::size_t>(p)];
    m.meta = {rows.size(), mine.size(), local.cols.size(), local.parent_cols};
    m.payload.reserve(mine.size() * local.cols.size());
    for (std::size_t i : mine) {
      auto r = local.data.row(i);
      m.payload.insert(m.payload.end(), r.begin(), r.end());
    }
  }
  auto in = comm.exchange(round, part, std::move(out));
  const auto& my_rows = pos[static_cast<std::size_t>(me)];
  DenseMatrix full(my_rows.size(), local.parent_cols);
  for (int q = 0; q < n; ++q) {
    const Range c = cols[static_cast<std::size_t>(q)];
    const Message& m = in[static_cast<std::size_t>(q)];
    detail::expect_meta(m, {rows.size(), my_rows.size(), c.size(), local.parent_cols}, "gather", q);
    for (std::size_t i = 0; i < my_rows.size(); ++i) {
      std::copy_n(m.payload.begin() + static_cast<long>(i * c.size()), c.size(),
                  full.row(i).begin() + static_cast<long>(c.begin));
    }
  }
  return full;
}

inline DenseMatrix gather(Communicator& comm, const FeatureSlice& local,
                          std::span<const VertexId> rows, const VertexOwnership& own) {
  return gather_part(comm, comm.open_round(CollectiveKind::Gather), 0, local, rows, own);
}

/// Vertex-partitioned -> dimension-partitioned; the inverse of gather.
/// `owned_full` holds the full-width rows of the vertices of `rows` this worker
/// owns, in `rows` order. Returns this worker's column slice for all of `rows`.
inline FeatureSlice split_part(Communicator& comm, RoundId round, int part,
                               const DenseMatrix& owned_full, std::span<const VertexId> rows,
                               const VertexOwnership& own) {
  const int n = comm.size();
  const WorkerId me = comm.rank();
  const std::size_t dim = owned_full.cols();
  const auto cols = column_partition(dim, n);
  const auto pos = detail::positions_by_owner(rows, own);
  const auto& my_rows = pos[static_cast<std::size_t>(me)];
  if (owned_full.rows() != my_rows.size()) {
    throw ShapeError("split: expected " + std::to_string(my_rows.size()) + " owned rows, got " +
                     std::to_string(owned_full.rows()));
  }
  std::vector<Message> out(static_cast<std::size_t>(n));
  for (int p = 0; p < n; ++p) {
    const Range c = cols[static_cast<std::size_t>(p)];
    Message& m = out[static_cast<std::size_t>(p)];
    m.meta = {rows.size(), my_rows.size(), c.size(), dim};
    m.payload.reserve(my_rows.size() * c.size());
    for (std::size_t i = 0; i < my_rows.size(); ++i) {
      auto r = owned_full.row(i).subspan(c.begin, c.size());
      m.payload.insert(m.payload.end(), r.begin(), r.end());
    }
  }
  auto in = comm.exchange(round, part, std::move(out));
  const Range mine = cols[static_cast<std::size_t>(me)];
  FeatureSlice slice{me, mine, dim, DenseMatrix(rows.size(), mine.size())};
  for (int q = 0; q < n; ++q) {
    const auto& theirs = pos[static_cast<std::size_t>(q)];
    const Message& m = in[static_cast<std::size_t>(q)];
    detail::expect_meta(m, {rows.size(), theirs.size(), mine.size(), dim}, "split", q);
    for (std::size_t i = 0; i < theirs.size(); ++i) {
      std::copy_n(m.payload.begin() + static_cast<long>(i * mine.size()), mine.size(),
                  slice.data.row(theirs[i]).begin());
    }
  }
  return slice;
}

inline FeatureSlice split(Communicator& comm, const DenseMatrix& owned_full,
                          std::span<const VertexId> rows, const VertexOwnership& own) {
  return split_part(comm, comm.open_round(CollectiveKind::Split), 0, owned_full, rows, own);
}

/// Merges per-worker values keyed by id into one array replicated on every
/// worker. Each key carries `width` scalars. Keys must be disjoint across
/// workers and together cover [0, num_keys).
inline std::vector<double> all_share(Communicator& comm, std::span<const std::uint64_t> keys,
                                     std::span<const double> values, std::size_t num_keys,
                                     std::size_t width = 1) {
  if (values.size() != keys.size() * width) throw ShapeError("all_share: values/keys length");
  const int n = comm.size();
  const RoundId round = comm.open_round(CollectiveKind::AllShare);
  std::vector<Message> out(static_cast<std::size_t>(n));
  for (int p = 0; p < n; ++p) {
    Message& m = out[static_cast<std::size_t>(p)];
    m.meta.assign(keys.begin(), keys.end());
    m.meta.push_back(num_keys);
    m.meta.push_back(width);
    m.payload.assign(values.begin(), values.end());
  }
  auto in = comm.exchange(round, 0, std::move(out));
  std::vector<double> merged(num_keys * width, 0.0);
  std::vector<std::uint8_t> seen(num_keys, 0);
  for (int q = 0; q < n; ++q) {
    const Message& m = in[static_cast<std::size_t>(q)];
    if (m.meta.size() < 2 || m.meta[m.meta.size() - 2] != num_keys || m.meta.back() != width) {
      throw CollectiveError("all_share: worker " + std::to_string(q) + " disagrees on key space");
    }
    const std::size_t count = m.meta.size() - 2;
    if (m.payload.size() != count * width) throw CollectiveError("all_share: payload length");
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint64_t k = m.meta[i];
      if (k >= num_keys) throw ProtocolError("all_share: key " + std::to_string(k) + " out of range");
      if (seen[k]) {
        throw ProtocolError("all_share: key " + std::to_string(k) + " contributed twice");
      }
      seen[k] = 1;
      std::copy_n(m.payload.begin() + static_cast<long>(i * width), width,
                  merged.begin() + static_cast<long>(k * width));
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw ProtocolError("all_share: key set is not exhaustive");
  }
  return merged;
}

/// Element-wise sum of every worker's matrices, accumulated in ascending
/// worker order, returned identically on every worker. One round for the
/// whole list.
inline std::vector<DenseMatrix> allreduce_sum(Communicator& comm,
                                              const std::vector<DenseMatrix>& parts) {
  const int n = comm.size();
  const RoundId round = comm.open_round(CollectiveKind::AllReduce);
  std::vector<std::uint64_t> meta;
  std::vector<double> flat;
  for (const auto& m : parts) {
    meta.push_back(m.rows());
    meta.push_back(m.cols());
    flat.insert(flat.end(), m.data().begin(), m.data().end());
  }
  std::vector<Message> out(static_cast<std::size_t>(n));
  for (auto& m : out) {
    m.meta = meta;
    m.payload = flat;
  }
  auto in = comm.exchange(round, 0, std::move(out));
  for (int q = 0; q < n; ++q) {
    if (in[static_cast<std::size_t>(q)].meta != meta) {
      throw CollectiveError("allreduce_sum: worker " + std::to_string(q) + " has other shapes");
    }
  }
  std::vector<double> acc = std::move(in[0].payload);
  for (int q = 1; q < n; ++q) {
    const auto& p = in[static_cast<std::size_t>(q)].payload;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p[i];
  }
  std::vector<DenseMatrix> result;
  std::size_t at = 0;
  for (const auto& m : parts) {
    std::vector<double> d(acc.begin() + static_cast<long>(at),
                          acc.begin() + static_cast<long>(at + m.size()));
    at += m.size();
    result.emplace_back(m.rows(), m.cols(), std::move(d));
  }
  return result;
}

inline DenseMatrix allreduce_sum(Communicator& comm, const DenseMatrix& part) {
  return std::move(allreduce_sum(comm, std::vector<DenseMatrix>{part}).front());
}

}  // namespace tpgnn
