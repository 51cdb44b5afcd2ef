// bld: train, benchmark, gradcheck and synth subcommands.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "bld/data.hpp"
#include "bld/experiment.hpp"
#include "bld/gradcheck.hpp"
#include "bld/report.hpp"

namespace {

std::vector<std::size_t> parse_columns(const std::string& text) {
  std::vector<std::size_t> cols;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != item.size() || v == 0)
      throw bld::ConfigError("bad target column list '" + text + "' (expected e.g. 3 or 11,12)");
    cols.push_back(v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cols;
}

std::optional<char> parse_delimiter(const std::string& d) {
  if (d == "whitespace" || d == "space") return std::nullopt;
  if (d == "tab" || d == "\\t") return '\t';
  if (d.size() != 1) throw bld::ConfigError("delimiter must be one character, 'tab' or 'whitespace'");
  return d[0];
}

struct TrainArgs {
  std::string data, snapshot, targets = "", delimiter = ",", arch = "[1x50]", algorithm = "B2LD";
  bool header = false, no_normalize = false;
  std::uint64_t seed = 1, split_seed = 0;
  double test_fraction = 0.2, init_gain = 1.0;
  std::optional<double> rho, grad_tol, f_tol, time_limit, eps0, alpha0;
  std::optional<std::size_t> max_iterations, max_epochs, batch_size;
  std::string block_order = "backward", report;
};

int run_train(const TrainArgs& a) {
  bld::PreparedDataset ds;
  if (!a.snapshot.empty()) {
    bld::Snapshot s = bld::load_snapshot(a.snapshot);
    auto [train, test] = bld::train_test_split(s.data, a.test_fraction, a.split_seed);
    ds = {a.snapshot, std::move(train), std::move(test), s.normalization};
    if (!s.normalization && !a.no_normalize) {
      auto n = bld::fit_apply_normalization(ds.train, ds.test);
      ds.train = std::move(n.train);
      ds.test = std::move(n.test);
      ds.normalization = n.model;
    }
  } else {
    if (a.data.empty()) throw bld::ConfigError("train: give --data or --snapshot");
    bld::DatasetSpec spec;
    spec.name = a.data;
    spec.path = a.data;
    if (a.targets.empty()) throw bld::ConfigError("train: --targets is required with --data");
    spec.target_columns = parse_columns(a.targets);
    spec.delimiter = parse_delimiter(a.delimiter);
    spec.has_header = a.header;
    spec.test_fraction = a.test_fraction;
    spec.split_seed = a.split_seed;
    spec.normalize = !a.no_normalize;
    ds = bld::prepare_dataset(spec);
  }

  const bld::Algorithm alg = bld::algorithm_from_string(a.algorithm);
  const bld::Architecture arch = bld::architecture_for(a.arch, ds.train);
  const bld::NetworkWeights w0 = bld::init_weights(arch, bld::RunSeeds::from(a.seed).init, a.init_gain);
  const bld::ObjectiveConfig cfg = a.rho ? bld::ObjectiveConfig{*a.rho, ds.train.size()}
                                         : bld::ObjectiveConfig::with_default_rho(
                                               arch.variable_count(), ds.train.size());
  bld::StoppingCriteria batch_stop;
  bld::StoppingCriteria mini_stop = bld::StoppingCriteria::minibatch_default();
  for (auto* s : {&batch_stop, &mini_stop}) {
    if (a.grad_tol) s->grad_norm_tol = *a.grad_tol;
    if (a.f_tol) s->f_tol = *a.f_tol;
    if (a.time_limit) s->time_limit_seconds = *a.time_limit;
    if (a.max_iterations) s->max_iterations = *a.max_iterations;
    if (a.max_epochs) s->max_epochs = *a.max_epochs;
  }
  bld::AlgorithmSettings settings;
  settings.block_order = bld::block_order_from_string(a.block_order);
  if (a.eps0) settings.lbfgs.grad_tol = *a.eps0;
  if (a.alpha0) settings.bling_alpha0 = settings.ig_alpha0 = *a.alpha0;
  if (a.batch_size) settings.batch_size = *a.batch_size;

  const bld::OptimizerRun run =
      bld::run_algorithm(alg, w0, ds.train, cfg, settings, batch_stop, mini_stop, a.seed);

  bld::ReportRow row;
  row.dataset = ds.name;
  row.architecture = a.arch;
  row.algorithm = bld::to_string(alg);
  row.seed = a.seed;
  row.init_digest = w0.digest();
  row.final_objective = run.final_objective;
  row.gradient_norm = run.final_gradient_norm;
  row.train_mse = bld::mean_squared_error(run.weights, ds.train);
  if (ds.test.size()) row.test_mse = bld::mean_squared_error(run.weights, ds.test);
  row.iterations = run.iterations;
  row.cycles = run.cycles;
  row.fallbacks = run.fallbacks;
  row.stop_reason = std::string(bld::to_string(run.stop));
  row.elapsed_seconds = run.elapsed_seconds;
  row.updates_per_layer = run.updates_per_layer;

  std::cout << "architecture    " << arch.to_string() << " (" << arch.variable_count() << " weights)\n"
            << "algorithm       " << row.algorithm << "\n"
            << "objective       " << bld::format_double(row.final_objective) << "\n"
            << "gradient norm   " << bld::format_double(row.gradient_norm) << "\n"
            << "train mse       " << bld::format_double(row.train_mse) << "\n"
            << "test mse        " << bld::format_double(row.test_mse) << "\n"
            << "iterations      " << row.iterations << "\n"
            << "stop            " << row.stop_reason << "\n"
            << "seconds         " << row.elapsed_seconds << "\n"
            << "updates/layer  ";
  for (auto u : row.updates_per_layer) std::cout << ' ' << u;
  std::cout << '\n';
  if (!a.report.empty()) {
    std::ofstream out(a.report);
    if (!out) throw bld::DataError("cannot write '" + a.report + "'");
    bld::write_report_csv(out, {row});
  }
  return 0;
}

int run_benchmark(const std::string& config_path, const std::string& out_dir,
                  std::optional<std::size_t> workers, bool quiet) {
  bld::ExperimentConfig config = bld::load_config(config_path);
  if (workers) config.workers = *workers;
  const std::string dir = out_dir.empty() ? config.output : out_dir;
  std::size_t done = 0;
  const std::size_t total = config.datasets.size() * config.architectures.size() *
                            config.algorithms.size() * config.seeds.size();
  const bld::ExperimentReport report = bld::run_experiment(config, [&](const bld::ReportRow& r) {
    ++done;
    if (quiet) return;
    std::fprintf(stderr, "[%zu/%zu] %s %s %s seed=%llu f=%s %s%s\n", done, total, r.dataset.c_str(),
                 r.architecture.c_str(), r.algorithm.c_str(), static_cast<unsigned long long>(r.seed),
                 bld::format_double(r.final_objective).c_str(), r.stop_reason.c_str(),
                 r.error.empty() ? "" : (" error: " + r.error).c_str());
  });
  const bld::ReportFiles files = bld::emit_report(report, dir);
  std::cout << "wrote " << files.table.string() << " and " << files.summary.string() << "\n";
  return 0;
}

int run_gradcheck(std::uint64_t seed, std::size_t cases, double tolerance, bool verbose) {
  bld::GradcheckOptions opt;
  opt.tolerance = tolerance;
  std::size_t failed = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < cases; ++i) {
    const bld::GradcheckCase c = bld::random_gradcheck_case(bld::derive_seed(seed, i), 4, 8, 64, opt);
    double case_worst = c.full_error;
    for (double e : c.block_errors) case_worst = std::max(case_worst, e);
    worst = std::max(worst, case_worst);
    if (!c.passed) ++failed;
    if (verbose || !c.passed)
      std::printf("case %zu %s P=%zu rho=%g max_rel_err=%.3e %s\n", i, c.arch.to_string().c_str(),
                  c.samples, c.rho, case_worst, c.passed ? "ok" : "FAIL");
  }
  std::printf("gradcheck: %zu/%zu cases within %.1e (worst %.3e)\n", cases - failed, cases, tolerance,
              worst);
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-wise block decomposition training for feedforward networks"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train one network on one dataset");
  train->add_option("--data", ta.data, "Delimited text file");
  train->add_option("--snapshot", ta.snapshot, "Dataset snapshot written by `synth --format snapshot`");
  train->add_option("--targets", ta.targets, "1-based target columns, e.g. 3 or 11,12");
  train->add_option("--delimiter", ta.delimiter, "Field delimiter: one character, 'tab' or 'whitespace'");
  train->add_flag("--header", ta.header, "First non-blank line is a header");
  train->add_option("--arch", ta.arch, "Hidden layers '[10x50]' or full 'd-[LxN]-m'");
  train->add_option("--algorithm", ta.algorithm, "B2LD, LBFGS, BLInG or IG");
  train->add_option("--seed", ta.seed, "Seed for initial weights and run randomness");
  train->add_option("--split-seed", ta.split_seed, "Seed of the train/test shuffle");
  train->add_option("--test-fraction", ta.test_fraction, "Fraction of rows held out");
  train->add_flag("--no-normalize", ta.no_normalize, "Skip min-max scaling");
  train->add_option("--init-gain", ta.init_gain, "Multiplier of the 1/sqrt(fan-in) init bound");
  train->add_option("--rho", ta.rho, "Regularization weight (default 1e-3 / #weights)");
  train->add_option("--grad-tol", ta.grad_tol, "Stop when the gradient norm falls below this");
  train->add_option("--f-tol", ta.f_tol, "Relative decrease tolerance");
  train->add_option("--time-limit", ta.time_limit, "Wall-clock limit in seconds (0 = none)");
  train->add_option("--max-iterations", ta.max_iterations, "LBFGS iterations or minibatch steps");
  train->add_option("--max-epochs", ta.max_epochs, "Epoch cap for BLInG / IG");
  train->add_option("--eps0", ta.eps0, "Initial inner accuracy of B2LD");
  train->add_option("--alpha0", ta.alpha0, "Initial stepsize of BLInG / IG");
  train->add_option("--batch-size", ta.batch_size, "Minibatch size");
  train->add_option("--block-order", ta.block_order, "forward, backward or random");
  train->add_option("--report", ta.report, "Write the run as a one-row CSV report");

  std::string config_path, out_dir;
  std::optional<std::size_t> workers;
  bool quiet = false;
  auto* bench = app.add_subcommand("benchmark", "Run a multi-seed experiment from a JSON config");
  bench->add_option("config", config_path, "Experiment config file")->required();
  bench->add_option("--out", out_dir, "Output directory (overrides the config)");
  bench->add_option("--workers", workers, "Worker threads (BLD_WORKERS also works)");
  bench->add_flag("--quiet", quiet, "No per-run progress lines");

  std::uint64_t gc_seed = 1;
  std::size_t gc_cases = 1;
  double gc_tol = 1e-5;
  bool gc_verbose = false;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of backprop gradients");
  gc->add_option("--seed", gc_seed, "Seed of the random instances");
  gc->add_option("--cases", gc_cases, "Number of random instances");
  gc->add_option("--tolerance", gc_tol, "Largest accepted relative error");
  gc->add_flag("-v,--verbose", gc_verbose, "Print every case");

  std::string teacher = "10-[2x20]-1", synth_out, format = "csv";
  std::size_t samples = 2000;
  double noise = 0.05, gain = 4.0;
  std::uint64_t synth_seed = 1;
  bool synth_header = false;
  auto* synth = app.add_subcommand("synth", "Write a teacher-network dataset");
  synth->add_option("--teacher", teacher, "Teacher architecture 'd-[...]-m'");
  synth->add_option("--samples", samples, "Number of rows");
  synth->add_option("--noise", noise, "Standard deviation of the target noise");
  synth->add_option("--gain", gain, "Teacher weight gain");
  synth->add_option("--seed", synth_seed, "Seed");
  synth->add_option("--format", format, "csv or snapshot")->check(CLI::IsMember({"csv", "snapshot"}));
  synth->add_flag("--header", synth_header, "Write a header line (csv only)");
  synth->add_option("-o,--out", synth_out, "Output path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return run_train(ta);
    if (*bench) return run_benchmark(config_path, out_dir, workers, quiet);
    if (*gc) return run_gradcheck(gc_seed, gc_cases, gc_tol, gc_verbose);
    if (*synth) {
      const bld::Dataset d =
          bld::synth_teacher_dataset(bld::parse_architecture(teacher), samples, noise, synth_seed, gain);
      if (format == "snapshot")
        bld::save_snapshot(synth_out, d);
      else
        bld::save_delimited(synth_out, d, ',', synth_header);
      std::cout << "wrote " << d.size() << " rows (" << d.input_dim() << " features, "
                << d.output_dim() << " targets) to " << synth_out << "\n";
      return 0;
    }
  } catch (const bld::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
