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

// Experiment configuration (flat key=value files) and the runner behind the
// benchmark CLI. Outputs, all deterministic for a fixed seed except the
// timestamps in trace.jsonl:
//
//   metrics.csv   one row per epoch: loss, accuracies, per-worker max/min of
//                 edge work, NN work and scalars sent/received
//   ledger.json   every collective round per epoch, the analytic prediction
//                 and the measured-vs-predicted comparison
//   trace.jsonl   chunk stage events (decoupled-tp only)

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpgnn/cost.hpp"
#include "tpgnn/engines.hpp"
#include "tpgnn/synthetic.hpp"

namespace tpgnn {

enum class DatasetSource { TwoCluster, PowerLaw, EdgeList };

struct ExperimentConfig {
  DatasetSource dataset = DatasetSource::TwoCluster;
  SyntheticParams synthetic;
  std::string edge_list_path;
  std::size_t edge_list_vertices = 0;  // 0: renumber ids found in the file
  std::string features_path;           // lines "id f1 f2 ..."
  std::string labels_path;             // lines "id label"
  EngineConfig engine;
  std::string out_dir = "out";
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream ss(value);
  T out{};
  std::string rest;
  if (!(ss >> out) || (ss >> rest)) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + value + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "off" || value == "no") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + value + "'");
}

inline std::vector<std::size_t> parse_dims(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::string tok;
  std::istringstream ss(value);
  while (std::getline(ss, tok, ',')) out.push_back(parse_number<std::size_t>(key, trim(tok)));
  if (out.empty()) throw ConfigError("config: '" + key + "' is empty");
  return out;
}

}  // namespace detail

inline EngineKind parse_engine_kind(const std::string& s) {
  if (s == "single") return EngineKind::Single;
  if (s == "dp") return EngineKind::DataParallel;
  if (s == "naive-tp") return EngineKind::NaiveTP;
  if (s == "decoupled-tp") return EngineKind::DecoupledTP;
  throw ConfigError("unknown engine '" + s + "' (single, dp, naive-tp, decoupled-tp)");
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "gcn") return ModelKind::GCN;
  if (s == "decoupled-gcn") return ModelKind::DecoupledGCN;
  if (s == "decoupled-gat") return ModelKind::DecoupledGAT;
  throw ConfigError("unknown model '" + s + "' (gcn, decoupled-gcn, decoupled-gat)");
}

/// Applies one key=value setting. Unknown keys are errors.
inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_number;
  EngineConfig& e = c.engine;
  SyntheticParams& p = c.synthetic;
  if (key == "dataset") {
    if (value == "two_cluster") c.dataset = DatasetSource::TwoCluster;
    else if (value == "power_law") c.dataset = DatasetSource::PowerLaw;
    else if (value == "edge_list") c.dataset = DatasetSource::EdgeList;
    else throw ConfigError("config: dataset must be two_cluster, power_law or edge_list");
  } else if (key == "two_cluster.size") {
    p.cluster_size = parse_number<std::size_t>(key, value);
  } else if (key == "two_cluster.p_in") {
    p.p_in = parse_number<double>(key, value);
  } else if (key == "two_cluster.p_out") {
    p.p_out = parse_number<double>(key, value);
  } else if (key == "power_law.vertices") {
    p.vertices = parse_number<std::size_t>(key, value);
  } else if (key == "power_law.exponent") {
    p.exponent = parse_number<double>(key, value);
  } else if (key == "power_law.avg_degree") {
    p.avg_degree = parse_number<double>(key, value);
  } else if (key == "power_law.classes") {
    p.classes = parse_number<int>(key, value);
  } else if (key == "feature_dim") {
    p.feature_dim = parse_number<std::size_t>(key, value);
  } else if (key == "signal") {
    p.signal = parse_number<double>(key, value);
  } else if (key == "noise") {
    p.noise = parse_number<double>(key, value);
  } else if (key == "edge_list.path") {
    c.edge_list_path = value;
  } else if (key == "edge_list.num_vertices") {
    c.edge_list_vertices = parse_number<std::size_t>(key, value);
  } else if (key == "features.path") {
    c.features_path = value;
  } else if (key == "labels.path") {
    c.labels_path = value;
  } else if (key == "engine") {
    e.engine = parse_engine_kind(value);
  } else if (key == "model") {
    e.model = parse_model_kind(value);
  } else if (key == "workers") {
    e.workers = parse_number<int>(key, value);
  } else if (key == "chunks") {
    e.chunks = parse_number<std::size_t>(key, value);
  } else if (key == "pipelining") {
    e.pipelining = detail::parse_bool(key, value);
  } else if (key == "layer_dims") {
    e.layer_dims = detail::parse_dims(key, value);
  } else if (key == "prop_rounds") {
    e.prop_rounds = parse_number<std::size_t>(key, value);
  } else if (key == "gamma") {
    e.gamma = parse_number<double>(key, value);
  } else if (key == "norm") {
    if (value == "gcn") e.norm = NormMode::GcnDegree;
    else if (value == "sym") e.norm = NormMode::SymSelfLoop;
    else throw ConfigError("config: norm must be gcn or sym");
  } else if (key == "leaky_slope") {
    e.leaky_slope = parse_number<double>(key, value);
  } else if (key == "lr") {
    e.lr = parse_number<double>(key, value);
  } else if (key == "epochs") {
    e.epochs = parse_number<std::size_t>(key, value);
  } else if (key == "seed") {
    e.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "timeout_ms") {
    e.timeout = std::chrono::milliseconds(parse_number<long long>(key, value));
  } else if (key == "out") {
    c.out_dir = value;
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

inline ExperimentConfig parse_experiment_config(std::istream& in) {
  ExperimentConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value, got '" + t + "'", lineno);
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    try {
      apply_setting(c, key, value);
    } catch (const ConfigError& err) {
      throw ParseError(err.what(), lineno);
    }
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_experiment_config(in);
}

namespace detail {

/// Reads "id v1 v2 ..." lines into a map keyed by the file id.
inline std::map<std::uint64_t, std::vector<double>> read_keyed_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::map<std::uint64_t, std::vector<double>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ss(t);
    long long id = -1;
    if (!(ss >> id) || id < 0) throw ParseError("expected a vertex id", lineno);
    std::vector<double> vals;
    double x = 0;
    while (ss >> x) vals.push_back(x);
    if (!ss.eof()) throw ParseError("malformed number", lineno);
    out[static_cast<std::uint64_t>(id)] = std::move(vals);
  }
  return out;
}

}  // namespace detail

/// Graph, features and labels for the configured source. Edge-list inputs
/// need a labels file; without a features file, features are Gaussian noise.
inline Dataset load_dataset(const ExperimentConfig& c) {
  if (c.dataset == DatasetSource::TwoCluster) {
    return generate_synthetic(SyntheticKind::TwoCluster, c.synthetic, c.engine.seed);
  }
  if (c.dataset == DatasetSource::PowerLaw) {
    return generate_synthetic(SyntheticKind::PowerLaw, c.synthetic, c.engine.seed);
  }
  if (c.edge_list_path.empty()) throw ConfigError("config: edge_list.path is required");
  if (c.labels_path.empty()) throw ConfigError("config: labels.path is required for edge lists");
  Dataset ds;
  std::vector<std::uint64_t> file_ids;
  if (c.edge_list_vertices > 0) {
    ds.graph = load_edge_list(c.edge_list_path, c.edge_list_vertices);
    file_ids.resize(c.edge_list_vertices);
    std::iota(file_ids.begin(), file_ids.end(), std::uint64_t{0});
  } else {
    RemappedGraph r = load_edge_list_remapped(c.edge_list_path);
    ds.graph = std::move(r.graph);
    file_ids = std::move(r.original_ids);
  }
  const std::size_t V = ds.graph.num_vertices();
  const auto labels = detail::read_keyed_rows(c.labels_path);
  ds.labels.resize(V);
  for (std::size_t v = 0; v < V; ++v) {
    auto it = labels.find(file_ids[v]);
    if (it == labels.end() || it->second.size() != 1) {
      throw ConfigError("labels: missing or malformed label for vertex " + std::to_string(file_ids[v]));
    }
    ds.labels[v] = static_cast<int>(it->second[0]);
    if (ds.labels[v] < 0) throw ConfigError("labels: negative label");
    ds.num_classes = std::max(ds.num_classes, ds.labels[v] + 1);
  }
  if (!c.features_path.empty()) {
    const auto feats = detail::read_keyed_rows(c.features_path);
    std::size_t dim = 0;
    for (std::size_t v = 0; v < V; ++v) {
      auto it = feats.find(file_ids[v]);
      if (it == feats.end()) {
        throw ConfigError("features: missing row for vertex " + std::to_string(file_ids[v]));
      }
      if (v == 0) {
        dim = it->second.size();
        ds.features = DenseMatrix(V, dim);
      }
      if (it->second.size() != dim || dim == 0) throw ConfigError("features: ragged rows");
      std::copy(it->second.begin(), it->second.end(), ds.features.row(v).begin());
    }
  } else {
    std::mt19937_64 rng(c.engine.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    ds.features = DenseMatrix(V, c.synthetic.feature_dim);
    for (double& x : ds.features.data()) x = gauss(rng);
  }
  return ds;
}

struct ExperimentOutcome {
  RunResult run;
  AnalyticCost predicted;
  std::vector<CostComparison> comparisons;  // one per epoch
};

inline nlohmann::json to_json(const RoundSummary& r) {
  return {{"round", r.round},          {"kind", to_string(r.kind)},
          {"parts", r.parts},          {"sent", r.sent},
          {"received", r.received},    {"sent_by_worker", r.sent_by_worker},
          {"received_by_worker", r.received_by_worker}};
}

inline nlohmann::json to_json(const AnalyticCost& c) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : c.rounds) rounds.push_back({{"kind", to_string(r.kind)}, {"scalars", r.scalars}});
  return {{"rounds", rounds},
          {"total", c.total()},
          {"tp_total", c.tp_total},
          {"dp_fetch_total", c.dp_fetch_total},
          {"dp_push_total", c.dp_push_total},
          {"edge_work", c.edge_work},
          {"nn_work", c.nn_work}};
}

inline nlohmann::json to_json(const CostComparison& c) {
  nlohmann::json mism = nlohmann::json::array();
  for (const auto& d : c.mismatches) {
    mism.push_back({{"index", d.index},
                    {"kind", to_string(d.kind)},
                    {"expected", d.expected},
                    {"actual", d.actual}});
  }
  auto ratio = [](double r) { return std::isfinite(r) ? nlohmann::json(r) : nlohmann::json("inf"); };
  return {{"pass", c.pass},
          {"predicted_total", c.predicted_total},
          {"measured_total", c.measured_total},
          {"mismatches", mism},
          {"problems", c.problems},
          {"edge_work_imbalance", ratio(c.edge_work_imbalance)},
          {"nn_work_imbalance", ratio(c.nn_work_imbalance)},
          {"comm_imbalance", ratio(c.comm_imbalance)}};
}

inline std::string metrics_csv(const RunResult& run) {
  std::string out =
      "epoch,loss,train_acc,val_acc,test_acc,edge_work_max,edge_work_min,nn_work_max,"
      "nn_work_min,comm_sent_max,comm_sent_min,comm_recv_max,comm_recv_min,gather_split_rounds\n";
  auto mx = [](const std::vector<std::uint64_t>& v) {
    return v.empty() ? std::uint64_t{0} : *std::max_element(v.begin(), v.end());
  };
  auto mn = [](const std::vector<std::uint64_t>& v) {
    return v.empty() ? std::uint64_t{0} : *std::min_element(v.begin(), v.end());
  };
  char buf[512];
  for (const EpochReport& r : run.epochs) {
    std::snprintf(buf, sizeof buf,
                  "%zu,%.17g,%.17g,%.17g,%.17g,%llu,%llu,%llu,%llu,%llu,%llu,%llu,%llu,%zu\n",
                  r.epoch, r.loss, r.train_acc, r.val_acc, r.test_acc,
                  static_cast<unsigned long long>(mx(r.edge_work)),
                  static_cast<unsigned long long>(mn(r.edge_work)),
                  static_cast<unsigned long long>(mx(r.nn_work)),
                  static_cast<unsigned long long>(mn(r.nn_work)),
                  static_cast<unsigned long long>(mx(r.comm_sent)),
                  static_cast<unsigned long long>(mn(r.comm_sent)),
                  static_cast<unsigned long long>(mx(r.comm_received)),
                  static_cast<unsigned long long>(mn(r.comm_received)), r.gather_split_rounds());
    out += buf;
  }
  return out;
}

inline nlohmann::json ledger_json(const ExperimentConfig& c, const ExperimentOutcome& o) {
  nlohmann::json epochs = nlohmann::json::array();
  for (std::size_t i = 0; i < o.run.epochs.size(); ++i) {
    const EpochReport& r = o.run.epochs[i];
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& s : r.ledger.rounds()) rounds.push_back(to_json(s));
    epochs.push_back({{"epoch", r.epoch},
                      {"gather_split_rounds", r.gather_split_rounds()},
                      {"rounds", rounds},
                      {"comparison", to_json(o.comparisons[i])}});
  }
  return {{"engine", to_string(c.engine.engine)},
          {"model", to_string(c.engine.model)},
          {"workers", c.engine.workers},
          {"chunks", c.engine.chunks},
          {"predicted", to_json(o.predicted)},
          {"epochs", epochs}};
}

/// Loads data, runs the configured engine and writes the three report files
/// into `c.out_dir`.
inline ExperimentOutcome run_experiment(const ExperimentConfig& c) {
  const Dataset ds = load_dataset(c);
  const VertexSplit split = make_split(ds.graph.num_vertices(), c.engine.seed);
  ExperimentOutcome o;
  o.run = run_engine(c.engine, ds, split);
  o.predicted = predict_costs(c.engine, ds.graph);
  for (const EpochReport& r : o.run.epochs) {
    o.comparisons.push_back(compare_measured_vs_predicted(r, o.predicted));
  }

  std::error_code ec;
  std::filesystem::create_directories(c.out_dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + c.out_dir + "': " + ec.message());
  auto write = [&](const std::string& name, const std::string& body) {
    const std::string path = (std::filesystem::path(c.out_dir) / name).string();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write '" + path + "'");
    f << body;
    if (!f) throw ConfigError("write failed for '" + path + "'");
  };
  write("metrics.csv", metrics_csv(o.run));
  write("ledger.json", ledger_json(c, o).dump(2) + "\n");
  write("trace.jsonl", to_json_lines(o.run.trace));
  return o;
}

}  // namespace tpgnn
