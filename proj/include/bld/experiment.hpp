#pragma once

// Multi-seed experiment runner: configuration, dataset preparation, the
// per-run driver shared by the CLI, and a bounded worker pool.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "bld/batch.hpp"
#include "bld/data.hpp"
#include "bld/minibatch.hpp"
#include "bld/network.hpp"
#include "bld/objective.hpp"
#include "bld/report.hpp"
#include "bld/run.hpp"

namespace bld {

enum class Algorithm { B2LD, LBFGS, BLInG, IG };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::B2LD: return "B2LD";
    case Algorithm::LBFGS: return "LBFGS";
    case Algorithm::BLInG: return "BLInG";
    case Algorithm::IG: return "IG";
  }
  return "unknown";
}

inline Algorithm algorithm_from_string(std::string_view s) {
  std::string lower;
  for (char c : s) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "b2ld") return Algorithm::B2LD;
  if (lower == "lbfgs") return Algorithm::LBFGS;
  if (lower == "bling") return Algorithm::BLInG;
  if (lower == "ig") return Algorithm::IG;
  throw ConfigError("unknown algorithm '" + std::string(s) + "' (expected B2LD, LBFGS, BLInG or IG)");
}

inline bool is_minibatch(Algorithm a) { return a == Algorithm::BLInG || a == Algorithm::IG; }

struct SynthSpec {
  std::string teacher = "[2x20]";  // hidden layers of the teacher network
  std::size_t input_dim = 10;
  std::size_t output_dim = 1;
  std::size_t samples = 2000;
  double noise_sd = 0.05;
  std::uint64_t seed = 1;
  double gain = 4.0;
};

struct DatasetSpec {
  std::string name;
  std::optional<SynthSpec> synth;  // when set, `path` is ignored
  std::string path;
  std::vector<std::size_t> target_columns;
  std::optional<char> delimiter = ',';  // nullopt: runs of blanks
  bool has_header = false;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
  bool normalize = true;
};

/// Tunables of the four algorithms. Unset alpha0 values take the defaults
/// of BlingParams::for_bling / for_ig.
struct AlgorithmSettings {
  ArmijoParams armijo;
  std::optional<double> sigma0;
  LbfgsParams lbfgs;  // inner solver of B2LD; its memory also serves the baseline
  BlockOrder block_order = BlockOrder::Backward;
  B2ldOptions b2ld;
  BlingParams bling;
  std::optional<double> bling_alpha0;
  BlingParams ig;
  std::optional<double> ig_alpha0;
  std::size_t batch_size = 128;
  bool shuffle_partition = false;
  MinibatchOrder minibatch_order = MinibatchOrder::Incremental;
};

struct ExperimentConfig {
  std::vector<DatasetSpec> datasets;
  std::vector<std::string> architectures = {"[1x50]"};
  std::vector<Algorithm> algorithms = {Algorithm::B2LD, Algorithm::LBFGS};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::optional<double> rho;  // unset: 1e-3 / n
  double init_gain = 1.0;     // see init_weights
  AlgorithmSettings settings;
  StoppingCriteria batch_stop;
  StoppingCriteria minibatch_stop = StoppingCriteria::minibatch_default();
  std::vector<std::pair<std::string, std::string>> comparisons;  // empty: derived from algorithms
  std::optional<std::pair<std::string, std::string>> depth_pair;
  std::string output = "bld-report";
  std::size_t workers = 0;  // 0: BLD_WORKERS, else hardware concurrency

  void validate() const {
    if (datasets.empty()) throw ConfigError("config: no datasets");
    if (architectures.empty()) throw ConfigError("config: no architectures");
    if (algorithms.empty()) throw ConfigError("config: no algorithms");
    if (seeds.empty()) throw ConfigError("config: no seeds");
    if (!(init_gain > 0.0)) throw ConfigError("config: init_gain must be positive");
    for (const auto& a : architectures)
      if (a.find('-') == std::string::npos) parse_hidden_layers(a); else parse_architecture(a);
    for (const auto& d : datasets) {
      if (d.name.empty()) throw ConfigError("config: dataset without a name");
      if (!d.synth && d.path.empty()) throw ConfigError("config: dataset '" + d.name + "' has no path");
      if (!d.synth && d.target_columns.empty())
        throw ConfigError("config: dataset '" + d.name + "' has no target columns");
    }
  }
};

// ---------------------------------------------------------------- config file

namespace detail {

using Json = nlohmann::json;

inline void reject_unknown(const Json& j, std::initializer_list<std::string_view> known,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
void read_opt(const Json& j, const char* key, std::optional<T>& out, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  T v{};
  read(j, key, v, where);
  out = v;
}

inline void read_stop(const Json& j, StoppingCriteria& s, const std::string& where) {
  reject_unknown(j, {"grad_norm_tol", "f_tol", "time_limit_seconds", "check_cadence",
                     "max_iterations", "max_epochs"}, where);
  read(j, "grad_norm_tol", s.grad_norm_tol, where);
  read(j, "f_tol", s.f_tol, where);
  read(j, "time_limit_seconds", s.time_limit_seconds, where);
  read(j, "check_cadence", s.check_cadence, where);
  read(j, "max_iterations", s.max_iterations, where);
  read(j, "max_epochs", s.max_epochs, where);
}

inline void read_step(const Json& j, BlingParams& p, std::optional<double>& alpha0,
                      const std::string& where) {
  reject_unknown(j, {"alpha0", "eps_dim", "clamp_lo", "clamp_hi"}, where);
  read_opt(j, "alpha0", alpha0, where);
  read(j, "eps_dim", p.eps_dim, where);
  read(j, "clamp_lo", p.clamp_lo, where);
  read(j, "clamp_hi", p.clamp_hi, where);
}

inline std::optional<char> read_delimiter(const Json& j, const std::string& where) {
  if (!j.contains("delimiter")) return ',';
  std::string d;
  read(j, "delimiter", d, where);
  if (d == "whitespace" || d == " ") return std::nullopt;
  if (d == "tab" || d == "\t") return '\t';
  if (d.size() != 1) throw ConfigError(where + ".delimiter: expected one character or \"whitespace\"");
  return d[0];
}

}  // namespace detail

/// Parses the JSON experiment description (schema in README.md). Unknown
/// keys are rejected.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::read;
  ExperimentConfig c;
  detail::reject_unknown(j, {"datasets", "architectures", "algorithms", "seeds", "rho", "init_gain", "armijo",
                             "b2ld", "bling", "ig", "minibatch", "batch_stopping",
                             "minibatch_stopping", "comparisons", "depth_ratio", "output",
                             "workers"},
                         "config");
  if (!j.contains("datasets") || !j.at("datasets").is_array())
    throw ConfigError("config: 'datasets' must be an array");
  for (std::size_t i = 0; i < j.at("datasets").size(); ++i) {
    const auto& dj = j.at("datasets")[i];
    const std::string where = "datasets[" + std::to_string(i) + "]";
    detail::reject_unknown(dj, {"name", "synth", "path", "target_columns", "delimiter", "header",
                                "test_fraction", "split_seed", "normalize"},
                           where);
    DatasetSpec d;
    read(dj, "name", d.name, where);
    if (dj.contains("synth")) {
      const auto& sj = dj.at("synth");
      detail::reject_unknown(sj, {"teacher", "input_dim", "output_dim", "samples", "noise_sd",
                                  "seed", "gain"},
                             where + ".synth");
      SynthSpec s;
      read(sj, "teacher", s.teacher, where + ".synth");
      read(sj, "input_dim", s.input_dim, where + ".synth");
      read(sj, "output_dim", s.output_dim, where + ".synth");
      read(sj, "samples", s.samples, where + ".synth");
      read(sj, "noise_sd", s.noise_sd, where + ".synth");
      read(sj, "seed", s.seed, where + ".synth");
      read(sj, "gain", s.gain, where + ".synth");
      d.synth = s;
    }
    read(dj, "path", d.path, where);
    read(dj, "target_columns", d.target_columns, where);
    d.delimiter = detail::read_delimiter(dj, where);
    read(dj, "header", d.has_header, where);
    read(dj, "test_fraction", d.test_fraction, where);
    read(dj, "split_seed", d.split_seed, where);
    read(dj, "normalize", d.normalize, where);
    c.datasets.push_back(std::move(d));
  }
  read(j, "architectures", c.architectures, "config");
  if (j.contains("algorithms")) {
    std::vector<std::string> names;
    read(j, "algorithms", names, "config");
    c.algorithms.clear();
    for (const auto& n : names) c.algorithms.push_back(algorithm_from_string(n));
  }
  read(j, "seeds", c.seeds, "config");
  detail::read_opt(j, "rho", c.rho, "config");
  read(j, "init_gain", c.init_gain, "config");

  auto& s = c.settings;
  if (j.contains("armijo")) {
    const auto& aj = j.at("armijo");
    detail::reject_unknown(aj, {"initial_step", "gamma", "shrink", "max_halvings"}, "armijo");
    read(aj, "initial_step", s.armijo.initial_step, "armijo");
    read(aj, "gamma", s.armijo.gamma, "armijo");
    read(aj, "shrink", s.armijo.shrink, "armijo");
    read(aj, "max_halvings", s.armijo.max_halvings, "armijo");
  }
  if (j.contains("b2ld")) {
    const auto& bj = j.at("b2ld");
    detail::reject_unknown(bj, {"memory", "grad_tol", "max_iters", "accuracy_shrink", "sigma0",
                                "block_order", "closed_form_last_layer"},
                           "b2ld");
    read(bj, "memory", s.lbfgs.memory, "b2ld");
    read(bj, "grad_tol", s.lbfgs.grad_tol, "b2ld");
    read(bj, "max_iters", s.lbfgs.max_iters, "b2ld");
    read(bj, "accuracy_shrink", s.lbfgs.accuracy_shrink, "b2ld");
    detail::read_opt(bj, "sigma0", s.sigma0, "b2ld");
    std::string order = std::string(to_string(s.block_order));
    read(bj, "block_order", order, "b2ld");
    s.block_order = block_order_from_string(order);
    read(bj, "closed_form_last_layer", s.b2ld.closed_form_last_layer, "b2ld");
  }
  if (j.contains("bling")) detail::read_step(j.at("bling"), s.bling, s.bling_alpha0, "bling");
  if (j.contains("ig")) detail::read_step(j.at("ig"), s.ig, s.ig_alpha0, "ig");
  if (j.contains("minibatch")) {
    const auto& mj = j.at("minibatch");
    detail::reject_unknown(mj, {"batch_size", "shuffle", "order"}, "minibatch");
    read(mj, "batch_size", s.batch_size, "minibatch");
    read(mj, "shuffle", s.shuffle_partition, "minibatch");
    std::string order = std::string(to_string(s.minibatch_order));
    read(mj, "order", order, "minibatch");
    s.minibatch_order = minibatch_order_from_string(order);
  }
  if (j.contains("batch_stopping")) detail::read_stop(j.at("batch_stopping"), c.batch_stop, "batch_stopping");
  if (j.contains("minibatch_stopping"))
    detail::read_stop(j.at("minibatch_stopping"), c.minibatch_stop, "minibatch_stopping");
  if (j.contains("comparisons")) {
    std::vector<std::vector<std::string>> pairs;
    read(j, "comparisons", pairs, "config");
    for (const auto& p : pairs) {
      if (p.size() != 2) throw ConfigError("comparisons: each entry must name two algorithms");
      c.comparisons.emplace_back(to_string(algorithm_from_string(p[0])),
                                 to_string(algorithm_from_string(p[1])));
    }
  }
  if (j.contains("depth_ratio")) {
    const auto& dj = j.at("depth_ratio");
    detail::reject_unknown(dj, {"deep", "shallow"}, "depth_ratio");
    std::string deep, shallow;
    read(dj, "deep", deep, "depth_ratio");
    read(dj, "shallow", shallow, "depth_ratio");
    c.depth_pair = {{deep, shallow}};
  }
  read(j, "output", c.output, "config");
  read(j, "workers", c.workers, "config");
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  ExperimentConfig c = parse_config(j);
  // Dataset paths are relative to the config file.
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  for (auto& d : c.datasets)
    if (!d.path.empty() && std::filesystem::path(d.path).is_relative())
      d.path = (base / d.path).string();
  return c;
}

// ---------------------------------------------------------------- datasets

struct PreparedDataset {
  std::string name;
  Dataset train;
  Dataset test;
  std::optional<NormalizationModel> normalization;
};

inline PreparedDataset prepare_dataset(const DatasetSpec& spec) {
  Dataset all;
  if (spec.synth) {
    const auto& s = *spec.synth;
    Architecture teacher{s.input_dim, parse_hidden_layers(s.teacher)};
    teacher.widths.push_back(s.output_dim);
    all = synth_teacher_dataset(teacher, s.samples, s.noise_sd, s.seed, s.gain);
  } else {
    all = load_delimited(spec.path, spec.target_columns, spec.delimiter, spec.has_header);
  }
  auto [train, test] = train_test_split(all, spec.test_fraction, spec.split_seed);
  PreparedDataset p{spec.name, std::move(train), std::move(test), std::nullopt};
  if (spec.normalize) {
    auto n = fit_apply_normalization(p.train, p.test);
    p.train = std::move(n.train);
    p.test = std::move(n.test);
    p.normalization = std::move(n.model);
  }
  return p;
}

// ---------------------------------------------------------------- one run

/// Architecture from a hidden-layer spec ("[10x50]") completed with the
/// dataset's widths, or from a full spec ("10-[10x50]-1") checked against them.
inline Architecture architecture_for(const std::string& spec, const Dataset& data) {
  Architecture a;
  if (spec.find('-') != std::string::npos) {
    a = parse_architecture(spec);
    if (a.input_dim != data.input_dim() || a.output_dim() != data.output_dim())
      throw ConfigError("architecture " + a.to_string() + " does not fit data with " +
                        std::to_string(data.input_dim()) + " inputs and " +
                        std::to_string(data.output_dim()) + " outputs");
  } else {
    a = Architecture{data.input_dim(), parse_hidden_layers(spec)};
    a.widths.push_back(data.output_dim());
  }
  a.validate();
  return a;
}

/// Seeds of the pieces of a run that draw random numbers, all derived from
/// the run's seed.
struct RunSeeds {
  std::uint64_t init, blocks, partition, minibatches;
  static RunSeeds from(std::uint64_t seed) {
    return {seed, derive_seed(seed, 11), derive_seed(seed, 12), derive_seed(seed, 13)};
  }
};

inline OptimizerRun run_algorithm(Algorithm alg, const NetworkWeights& w0, const Dataset& train,
                                  const ObjectiveConfig& cfg, const AlgorithmSettings& s,
                                  const StoppingCriteria& batch_stop,
                                  const StoppingCriteria& minibatch_stop, std::uint64_t seed) {
  const RunSeeds seeds = RunSeeds::from(seed);
  OptimizerRun run;
  switch (alg) {
    case Algorithm::B2LD: {
      AcceptanceParams acc{s.armijo};
      acc.sigma0 = s.sigma0.value_or(s.armijo.gamma / s.armijo.initial_step);
      run = b2ld_run(w0, train, cfg, BlockSelectionRule{s.block_order, seeds.blocks}, acc, s.lbfgs,
                     batch_stop, s.b2ld);
      break;
    }
    case Algorithm::LBFGS:
      run = lbfgs_baseline_run(w0, train, cfg, s.lbfgs, batch_stop, s.armijo);
      break;
    case Algorithm::BLInG:
    case Algorithm::IG: {
      const bool bling = alg == Algorithm::BLInG;
      BlingParams p = bling ? s.bling : s.ig;
      const std::optional<double>& alpha0 = bling ? s.bling_alpha0 : s.ig_alpha0;
      p.alpha0 = alpha0.value_or(bling ? BlingParams::for_bling(w0.layers()).alpha0
                                       : BlingParams::for_ig().alpha0);
      const PartitionSpec part{s.batch_size, s.shuffle_partition, seeds.partition};
      const MinibatchSelectionRule rule{s.minibatch_order, seeds.minibatches};
      run = bling ? bling_run(w0, train, cfg, part, rule, p, minibatch_stop)
                  : ig_run(w0, train, cfg, part, rule, p, minibatch_stop);
      break;
    }
  }
  run.seed = seed;
  return run;
}

// ---------------------------------------------------------------- experiment

inline std::size_t worker_count(std::size_t configured) {
  if (const char* env = std::getenv("BLD_WORKERS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return v;
  }
  if (configured > 0) return configured;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs `tasks` indices on up to `workers` threads.
inline void parallel_for(std::size_t tasks, std::size_t workers,
                         const std::function<void(std::size_t)>& body) {
  workers = std::max<std::size_t>(1, std::min(workers, tasks));
  if (workers == 1) {
    for (std::size_t i = 0; i < tasks; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < tasks; i = next++) body(i);
    });
  for (auto& th : pool) th.join();
}

using ProgressFn = std::function<void(const ReportRow&)>;

/// Every (dataset, architecture, algorithm, seed) tuple yields one row, in
/// that nesting order. Runs sharing (dataset, architecture, seed) start from
/// the same weights. A run that throws becomes a row with the error text.
inline ExperimentReport run_experiment(const ExperimentConfig& config,
                                       const ProgressFn& progress = {}) {
  config.validate();
  std::vector<PreparedDataset> data;
  for (const auto& spec : config.datasets) data.push_back(prepare_dataset(spec));

  struct Task {
    std::size_t dataset, arch, algorithm, seed;
  };
  std::vector<Task> tasks;
  for (std::size_t d = 0; d < data.size(); ++d)
    for (std::size_t a = 0; a < config.architectures.size(); ++a)
      for (std::size_t g = 0; g < config.algorithms.size(); ++g)
        for (std::size_t s = 0; s < config.seeds.size(); ++s) tasks.push_back({d, a, g, s});

  ExperimentReport report;
  report.rows.resize(tasks.size());
  std::mutex progress_mutex;
  parallel_for(tasks.size(), worker_count(config.workers), [&](std::size_t i) {
    const Task& t = tasks[i];
    const PreparedDataset& ds = data[t.dataset];
    const Algorithm alg = config.algorithms[t.algorithm];
    const std::uint64_t seed = config.seeds[t.seed];
    ReportRow& row = report.rows[i];
    row.dataset = ds.name;
    row.architecture = config.architectures[t.arch];
    row.algorithm = to_string(alg);
    row.seed = seed;
    try {
      const Architecture arch = architecture_for(config.architectures[t.arch], ds.train);
      const NetworkWeights w0 = init_weights(arch, RunSeeds::from(seed).init, config.init_gain);
      row.init_digest = w0.digest();
      const ObjectiveConfig cfg = config.rho ? ObjectiveConfig{*config.rho, ds.train.size()}
                                             : ObjectiveConfig::with_default_rho(
                                                   arch.variable_count(), ds.train.size());
      const OptimizerRun run = run_algorithm(alg, w0, ds.train, cfg, config.settings,
                                             config.batch_stop, config.minibatch_stop, seed);
      row.final_objective = run.final_objective;
      row.gradient_norm = run.final_gradient_norm;
      row.train_mse = mean_squared_error(run.weights, ds.train);
      row.test_mse = ds.test.size() ? mean_squared_error(run.weights, ds.test)
                                    : std::numeric_limits<double>::quiet_NaN();
      row.iterations = run.iterations;
      row.cycles = run.cycles;
      row.fallbacks = run.fallbacks;
      row.stop_reason = std::string(to_string(run.stop));
      row.elapsed_seconds = run.elapsed_seconds;
      row.updates_per_layer = run.updates_per_layer;
    } catch (const std::exception& e) {
      row.stop_reason = "failed";
      row.error = e.what();
    }
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress(row);
    }
  });

  report.comparisons = config.comparisons;
  if (report.comparisons.empty()) {
    auto has = [&](Algorithm a) {
      return std::find(config.algorithms.begin(), config.algorithms.end(), a) != config.algorithms.end();
    };
    if (has(Algorithm::B2LD) && has(Algorithm::LBFGS)) report.comparisons.emplace_back("B2LD", "LBFGS");
    if (has(Algorithm::BLInG) && has(Algorithm::IG)) report.comparisons.emplace_back("BLInG", "IG");
  }
  report.depth_pair = config.depth_pair;
  return report;
}

}  // namespace bld
