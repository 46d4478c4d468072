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

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "test_util.hpp"
#include "tpgnn/decoupled.hpp"
#include "tpgnn/scheduler.hpp"

namespace tpgnn {
namespace {

using testing::bitwise_equal;
using testing::random_graph;
using testing::random_matrix;

double max_abs(const DenseMatrix& a, const DenseMatrix& b) { return max_abs_diff(a, b); }

TEST(CommPlan, SingleChunkAssignsEverySourceOnce) {
  const Graph g = random_graph(25, 0.15, 3);
  const auto chunks = partition_chunks(g, 1);
  const ChunkCommPlan plan = build_comm_plan(chunks, 3, 25);
  EXPECT_EQ(plan.new_sources[0], chunks[0].src_set);
  EXPECT_EQ(plan.last_use[0], chunks[0].src_set);
}

TEST(CommPlan, SharedSourceOnlyInFirstChunk) {
  // Vertex 5 feeds vertex 1 (chunk 0) and vertex 8 (chunk 1).
  const Graph g = Graph::from_edges(10, {{5, 1}, {5, 8}, {2, 8}});
  const auto chunks = partition_chunks(g, 2);
  const ChunkCommPlan plan = build_comm_plan(chunks, 2, 10);
  EXPECT_EQ(plan.new_sources[0], (std::vector<VertexId>{5}));
  EXPECT_EQ(plan.new_sources[1], (std::vector<VertexId>{2}));
  EXPECT_TRUE(plan.last_use[0].empty());
  EXPECT_EQ(plan.last_use[1], (std::vector<VertexId>{2, 5}));
}

TEST(CommPlan, DedupUnionBalanceAndLastUseAgainstBruteForce) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const std::size_t V = 5 + seed % 40;
    const Graph g = random_graph(V, 0.12, seed);
    for (std::size_t n : {1u, 2u, 3u, 5u}) {
      if (n > V) continue;
      for (int N : {1, 2, 3, 4}) {
        const auto chunks = partition_chunks(g, n);
        const ChunkCommPlan plan = build_comm_plan(chunks, N, V);
        std::set<VertexId> expected_union;
        std::map<VertexId, std::size_t> last;
        for (const Chunk& c : chunks) {
          for (VertexId u : c.src_set) {
            expected_union.insert(u);
            last[u] = c.id;
          }
        }
        std::multiset<VertexId> assigned;
        for (const auto& s : plan.new_sources) assigned.insert(s.begin(), s.end());
        // Each vertex appears at most once, and all sources are covered.
        EXPECT_EQ(assigned.size(), expected_union.size());
        EXPECT_EQ(std::set<VertexId>(assigned.begin(), assigned.end()), expected_union);
        // First-appearance rule.
        for (std::size_t j = 0; j < chunks.size(); ++j) {
          for (VertexId u : plan.new_sources[j]) {
            for (std::size_t i = 0; i < j; ++i) {
              EXPECT_FALSE(std::binary_search(chunks[i].src_set.begin(), chunks[i].src_set.end(), u));
            }
          }
          for (VertexId u : plan.last_use[j]) EXPECT_EQ(last.at(u), j);
        }
        const auto counts = plan.assignment_counts();
        const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
        EXPECT_LE(*hi - *lo, 1u);
        EXPECT_LE(*hi - *lo, static_cast<std::size_t>(N));
        // Ownership covers every vertex and differs by at most one per worker.
        std::size_t total = 0;
        std::size_t mn = V;
        std::size_t mx = 0;
        for (int w = 0; w < N; ++w) {
          total += plan.ownership.owned(w).size();
          mn = std::min(mn, plan.ownership.owned(w).size());
          mx = std::max(mx, plan.ownership.owned(w).size());
        }
        EXPECT_EQ(total, V);
        EXPECT_LE(mx - mn, 1u);
      }
    }
  }
}

TEST(CommPlan, RejectsChunksThatDoNotTile) {
  const Graph g = random_graph(10, 0.2, 1);
  auto chunks = partition_chunks(g, 3);
  EXPECT_THROW(build_comm_plan(std::span<const Chunk>(chunks).subspan(1), 2, 10), ConfigError);
  EXPECT_THROW(build_comm_plan(chunks, 0, 10), ConfigError);
}

TEST(ChunkedPropagation, SingleChunkEqualsWholeGraphBitwise) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const Graph g = random_graph(30, 0.1, seed);
    const NormCoefficients c = compute_norm(g, NormMode::SymSelfLoop);
    const DenseMatrix z = random_matrix(30, 6, seed);
    for (int N : {1, 2, 3}) {
      const auto d = propagate_distributed(view_of(c), 0.9, z, N, 1, 3, false);
      EXPECT_TRUE(bitwise_equal(d.result, propagate(z, view_of(c), 0.9, 3)));
    }
  }
}

TEST(ChunkedPropagation, NeutralToChunkingPipeliningAndWorkers) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Graph g = random_graph(40, 0.08, seed);
    const NormCoefficients c = compute_norm(g, seed % 2 ? NormMode::GcnDegree : NormMode::SymSelfLoop);
    const DenseMatrix z = random_matrix(40, 7, seed + 3);
    for (std::size_t rounds : {0u, 1u, 2u, 3u}) {
      const DenseMatrix ref = propagate(z, view_of(c), 0.8, rounds);
      const DenseMatrix ref_back = propagate_backward(z, view_of(c), 0.8, rounds);
      for (int N : {1, 2, 4}) {
        for (std::size_t n : {1u, 2u, 5u}) {
          for (bool pipe : {false, true}) {
            const auto f = propagate_distributed(view_of(c), 0.8, z, N, n, rounds, pipe);
            EXPECT_LE(max_abs(f.result, ref), 1e-12);
            EXPECT_TRUE(bitwise_equal(f.result, ref)) << "N=" << N << " n=" << n << " pipe=" << pipe;
            const auto b = propagate_backward_distributed(view_of(c), 0.8, z, N, n, rounds, pipe);
            EXPECT_TRUE(bitwise_equal(b.result, ref_back)) << "N=" << N << " n=" << n << " pipe=" << pipe;
          }
        }
      }
    }
  }
}

TEST(ChunkedPropagation, OneSplitAndOneGatherRoundPerPass) {
  const Graph g = random_graph(30, 0.1, 2);
  const NormCoefficients c = compute_norm(g, NormMode::SymSelfLoop);
  const DenseMatrix z = random_matrix(30, 8, 1);
  for (bool pipe : {false, true}) {
    const auto d = propagate_distributed(view_of(c), 1.0, z, 4, 5, 2, pipe);
    const auto rounds = d.ledger.rounds();
    ASSERT_EQ(rounds.size(), 2u);
    EXPECT_EQ(rounds[0].kind, CollectiveKind::Split);
    EXPECT_EQ(rounds[1].kind, CollectiveKind::Gather);
    EXPECT_EQ(rounds[0].parts, 5);
    EXPECT_EQ(rounds[1].parts, 5);
  }
}

TEST(ChunkedPropagation, DedupSourceTrafficEqualsUniqueSourcesTimesWidth) {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const Graph g = random_graph(45, 0.07, seed);
    const NormCoefficients c = compute_norm(g, NormMode::GcnDegree);
    const std::size_t D = 6 + seed % 5;
    const DenseMatrix z = random_matrix(45, D, seed);
    for (int N : {2, 3, 4}) {
      for (std::size_t n : {1u, 3u, 7u}) {
        const auto d = propagate_distributed(view_of(c), 1.0, z, N, n, 2, seed % 2 == 0);
        const auto unique = d.plan.unique_sources();
        const auto cols = column_partition(D, N);
        const auto split = d.ledger.rounds()[0];
        ASSERT_EQ(split.kind, CollectiveKind::Split);
        std::uint64_t expected_total = 0;
        for (int w = 0; w < N; ++w) {
          const std::size_t width = cols[static_cast<std::size_t>(w)].size();
          std::size_t own_sources = 0;
          for (VertexId u : unique) own_sources += d.plan.ownership.owner(u) == w;
          // Every worker ends with exactly |U| rows of its slice, never more.
          EXPECT_EQ(split.received_by_worker[static_cast<std::size_t>(w)] + own_sources * width,
                    unique.size() * width);
        }
        for (VertexId u : unique) {
          expected_total += D - cols[static_cast<std::size_t>(d.plan.ownership.owner(u))].size();
        }
        EXPECT_EQ(split.sent, expected_total);
      }
    }
  }
}

TEST(ChunkedPropagation, SameAscendingChunkOrderOnEveryWorker) {
  const Graph g = random_graph(60, 0.05, 5);
  const NormCoefficients c = compute_norm(g, NormMode::SymSelfLoop);
  const auto d = propagate_distributed(view_of(c), 1.0, random_matrix(60, 8, 2), 3, 4, 2, true);
  std::map<WorkerId, std::vector<std::pair<std::size_t, std::size_t>>> aggs;
  for (const StageEvent& e : d.trace) {
    if (e.stage == StageKind::Aggregate) aggs[e.worker].emplace_back(e.round, e.chunk);
  }
  ASSERT_EQ(aggs.size(), 3u);
  std::vector<std::pair<std::size_t, std::size_t>> expected;
  for (std::size_t r = 1; r <= 2; ++r) {
    for (std::size_t j = 0; j < 4; ++j) expected.emplace_back(r, j);
  }
  for (const auto& [w, seq] : aggs) EXPECT_EQ(seq, expected) << "worker " << w;
}

TEST(ChunkedPropagation, PipeliningOverlapsSplitWithAggregation) {
  SCOPED_TRACE("overlap needs real concurrency between the two stages");
  const Graph g = random_graph(1500, 0.01, 11);
  const NormCoefficients c = compute_norm(g, NormMode::SymSelfLoop);
  const DenseMatrix z = random_matrix(1500, 64, 3);
  bool overlapped = false;
  for (int attempt = 0; attempt < 5 && !overlapped; ++attempt) {
    const auto d = propagate_distributed(view_of(c), 1.0, z, 2, 4, 1, true);
    overlapped = has_split_compute_overlap(d.trace);
  }
  EXPECT_TRUE(overlapped);
  const auto serial = propagate_distributed(view_of(c), 1.0, z, 2, 4, 1, false);
  EXPECT_FALSE(has_split_compute_overlap(serial.trace));
}

std::size_t max_src(const std::vector<Chunk>& chunks) {
  std::size_t m = 0;
  for (const Chunk& c : chunks) m = std::max(m, c.src_set.size());
  return m;
}

std::size_t max_adjacent_src(const std::vector<Chunk>& chunks) {
  std::size_t m = max_src(chunks);
  for (std::size_t j = 0; j + 1 < chunks.size(); ++j) {
    m = std::max(m, chunks[j].src_set.size() + chunks[j + 1].src_set.size());
  }
  return m;
}

TEST(PeakResidentRows, SingleChunkEqualsUniqueSources) {
  const Graph g = random_graph(40, 0.1, 8);
  const NormCoefficients c = compute_norm(g, NormMode::GcnDegree);
  const auto d = propagate_distributed(view_of(c), 1.0, random_matrix(40, 4, 1), 2, 1, 2, false);
  EXPECT_EQ(peak_resident_rows(d.trace), d.plan.unique_sources().size());
}

TEST(PeakResidentRows, PathGraphOneDestinationPerChunk) {
  const Graph g = testing::path_graph(12);
  const NormCoefficients c = compute_norm(g, NormMode::GcnDegree);
  const auto d = propagate_distributed(view_of(c), 1.0, random_matrix(12, 2, 1), 1, 12, 3, false);
  EXPECT_LE(peak_resident_rows(d.trace), 2u);
}

TEST(PeakResidentRows, BoundsWithAndWithoutPipelining) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const Graph g = random_graph(80, 0.04, seed);
    const NormCoefficients c = compute_norm(g, NormMode::SymSelfLoop);
    const DenseMatrix z = random_matrix(80, 8, seed);
    for (std::size_t n : {2u, 4u, 7u}) {
      const auto chunks = partition_chunks(c, n);
      for (std::size_t rounds : {1u, 3u}) {
        const auto off = propagate_distributed(view_of(c), 1.0, z, 2, n, rounds, false);
        EXPECT_LE(peak_resident_rows(off.trace), max_src(chunks));
        const auto on = propagate_distributed(view_of(c), 1.0, z, 2, n, rounds, true);
        EXPECT_LE(peak_resident_rows(on.trace), max_adjacent_src(chunks));
      }
    }
  }
}

TEST(PeakResidentRows, SweepReleasesBeforeAcquiresOnTies) {
  std::vector<StageEvent> ev;
  ev.push_back({0, PassKind::Forward, StageKind::Aggregate, 0, 1, 0, 10, 1, 5});
  ev.push_back({0, PassKind::Forward, StageKind::Aggregate, 1, 1, 10, 20, 1, 7});
  EXPECT_EQ(peak_resident_rows(ev), 7u);
  ev.push_back({0, PassKind::Forward, StageKind::CommSplit, 2, 1, 15, 16, 1, 4});
  ev.push_back({0, PassKind::Forward, StageKind::Aggregate, 2, 1, 20, 30, 1, 4});
  EXPECT_EQ(peak_resident_rows(ev), 11u);
}

TEST(Trace, JsonLinesRoundTrip) {
  const Graph g = random_graph(20, 0.1, 1);
  const NormCoefficients c = compute_norm(g, NormMode::SymSelfLoop);
  const auto d = propagate_distributed(view_of(c), 1.0, random_matrix(20, 4, 1), 2, 3, 1, true);
  const std::string text = to_json_lines(d.trace);
  std::istringstream in(text);
  std::string line;
  std::size_t count = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("worker"));
    EXPECT_TRUE(j.contains("stage"));
    EXPECT_TRUE(j.contains("chunk"));
    EXPECT_LE(j.at("begin_ns").get<std::int64_t>(), j.at("end_ns").get<std::int64_t>());
    ++count;
  }
  EXPECT_EQ(count, d.trace.size());
  // 2 workers x 3 chunks x (split + aggregate + gather).
  EXPECT_EQ(count, 18u);
}

}  // namespace
}  // namespace tpgnn
