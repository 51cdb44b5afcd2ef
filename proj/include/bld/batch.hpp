#pragma once

// Batch block layer decomposition. Each iteration updates one weight block
// with the others frozen. A trial block from LBFGS is committed only if it is
// no worse than the Armijo steepest-descent point (cond1) and decreases f by
// at least sigma0 * ||displacement||^2 (cond2); otherwise the Armijo point is
// committed. Blocks are visited cyclically.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "bld/dataset.hpp"
#include "bld/network.hpp"
#include "bld/objective.hpp"
#include "bld/rng.hpp"
#include "bld/run.hpp"
#include "bld/solvers.hpp"

namespace bld {

enum class BlockOrder { Forward, Backward, RandomWithoutReplacement };

inline std::string_view to_string(BlockOrder o) {
  switch (o) {
    case BlockOrder::Forward: return "forward";
    case BlockOrder::Backward: return "backward";
    case BlockOrder::RandomWithoutReplacement: return "random";
  }
  return "unknown";
}

inline BlockOrder block_order_from_string(std::string_view s) {
  if (s == "forward") return BlockOrder::Forward;
  if (s == "backward") return BlockOrder::Backward;
  if (s == "random") return BlockOrder::RandomWithoutReplacement;
  throw ConfigError("unknown block order '" + std::string(s) + "'");
}

struct BlockSelectionRule {
  BlockOrder order = BlockOrder::Backward;
  std::uint64_t seed = 0;  // RandomWithoutReplacement only
};

/// Emits block indices cycle by cycle; every cycle visits each block once.
class BlockSelector {
 public:
  BlockSelector(BlockSelectionRule rule, std::size_t layers)
      : rule_(rule), layers_(layers), rng_(rule.seed) {
    if (layers == 0) throw PreconditionError("BlockSelector: no layers");
  }

  std::size_t next() {
    if (pos_ == cycle_.size()) start_cycle();
    return cycle_[pos_++];
  }

  /// Position within the current cycle; 0 when a new cycle is about to start.
  std::size_t position() const { return pos_ == cycle_.size() ? 0 : pos_; }
  std::size_t cycles_started() const { return cycles_; }

 private:
  void start_cycle() {
    cycle_.resize(layers_);
    std::iota(cycle_.begin(), cycle_.end(), std::size_t{0});
    switch (rule_.order) {
      case BlockOrder::Forward: break;
      case BlockOrder::Backward: std::reverse(cycle_.begin(), cycle_.end()); break;
      case BlockOrder::RandomWithoutReplacement: rng_.shuffle(std::span<std::size_t>(cycle_)); break;
    }
    pos_ = 0;
    ++cycles_;
  }

  BlockSelectionRule rule_;
  std::size_t layers_;
  SeededRng rng_;
  std::vector<std::size_t> cycle_;
  std::size_t pos_ = 0;
  std::size_t cycles_ = 0;
};

/// Forcing function sigma(t) = sigma0 * t^2 with sigma0 <= gamma / a.
struct AcceptanceParams {
  ArmijoParams armijo;
  double sigma0 = armijo.gamma / armijo.initial_step;

  void validate() const {
    armijo.validate();
    if (!(sigma0 > 0.0)) throw PreconditionError("acceptance: sigma0 must be positive");
    if (sigma0 > armijo.gamma / armijo.initial_step)
      throw PreconditionError("acceptance: sigma0 must not exceed gamma / a");
  }
};

inline double forcing(double displacement_norm, const AcceptanceParams& p) {
  return p.sigma0 * displacement_norm * displacement_norm;
}

/// cond1: f_trial <= f_armijo_point; cond2: f_trial - f_current <= -sigma(||disp||).
inline bool accept_trial(double f_current, double f_trial, double f_armijo_point,
                         double displacement_norm, const AcceptanceParams& params) {
  const bool cond1 = f_trial <= f_armijo_point;
  const bool cond2 = f_trial - f_current <= -forcing(displacement_norm, params);
  return cond1 && cond2;
}

struct B2ldOptions {
  /// Solve the output block in closed form instead of by LBFGS.
  bool closed_form_last_layer = false;
};

inline OptimizerRun b2ld_run(NetworkWeights weights, const Dataset& data,
                             const ObjectiveConfig& cfg, BlockSelectionRule rule,
                             const AcceptanceParams& acceptance, const LbfgsParams& lbfgs,
                             const StoppingCriteria& stop, const B2ldOptions& options = {}) {
  acceptance.validate();
  lbfgs.validate();
  data.validate();
  const Stopwatch clock;
  const std::size_t layers = weights.layers();
  const Matrix& targets = data.targets;

  OptimizerRun run;
  run.updates_per_layer.assign(layers, 0);

  ForwardCache cache = forward(weights, data.features);
  double f = evaluate(weights, cache, targets, cfg).total;
  run.trajectory.push_back(f);

  NetworkWeights scratch = weights;
  ForwardCache trial_cache = cache;
  // Evaluates f with block k replaced; scratch/trial_cache mirror weights/cache below k.
  auto eval_block = [&](std::size_t k, const Matrix& value) {
    scratch.set_block(k, value);
    forward_partial(scratch, trial_cache, k);
    return evaluate(scratch, trial_cache, targets, cfg).total;
  };

  std::vector<double> last_decrease(layers, std::numeric_limits<double>::infinity());
  double accuracy = lbfgs.grad_tol;
  std::size_t since_clock_check = 0;
  BlockSelector selector(rule, layers);
  bool done = false;

  auto out_of_time = [&] { return stop.has_time_limit() && clock.seconds() >= stop.time_limit_seconds; };

  while (!done) {
    const Gradient full = full_gradient(weights, targets, cfg, cache);
    if (gradient_norm(full) <= stop.grad_norm_tol) {
      run.stop = StopReason::GradientNorm;
      break;
    }

    bool cycle_converged = true;
    bool fresh = true;  // `full` still describes the current weights
    for (std::size_t visit = 0; visit < layers; ++visit) {
      const std::size_t k = selector.next();
      Matrix grad = fresh ? full[k] : block_gradient(weights, targets, cfg, k, cache);
      const double gnorm = frobenius_norm(grad);

      if (gnorm <= stop.grad_norm_tol || last_decrease[k] <= stop.f_tol) {
        if (last_decrease[k] <= stop.f_tol) last_decrease[k] = std::numeric_limits<double>::infinity();
        continue;
      }

      scratch = weights;
      trial_cache = cache;
      const Matrix current = weights.block(k);
      Matrix direction = grad;
      direction *= -1.0;

      auto armijo_point = [&](double step) {
        Matrix p = current;
        p.axpy(step, direction);
        return p;
      };
      LinesearchResult ls;
      try {
        ls = armijo_linesearch([&](double step) { return eval_block(k, armijo_point(step)); }, f,
                               -gnorm * gnorm, acceptance.armijo);
      } catch (const LinesearchError&) {
        // No representable descent along -grad; nothing to gain from this block now.
        continue;
      }

      Matrix trial;
      double f_trial;
      std::size_t inner_iterations = 0;
      if (options.closed_form_last_layer && k + 1 == layers) {
        trial = llsq_last_layer(cache.layer_input(k), targets, cfg.rho, cfg.sample_count);
        f_trial = eval_block(k, trial);
      } else {
        BlockObjective objective = [&](const Matrix& value, Matrix& g) {
          const double v = eval_block(k, value);
          g = block_gradient(scratch, targets, cfg, k, trial_cache);
          return v;
        };
        LbfgsParams inner = lbfgs;
        inner.grad_tol = accuracy;
        BlockSolveResult solved = lbfgs_minimize_block(objective, current, inner, acceptance.armijo);
        trial = std::move(solved.block);
        f_trial = solved.value;
        inner_iterations = solved.iterations;
      }

      const double displacement = frobenius_norm(trial - current);
      const bool accepted = accept_trial(f, f_trial, ls.value, displacement, acceptance);
      weights.set_block(k, accepted ? std::move(trial) : armijo_point(ls.step));
      forward_partial(weights, cache, k);
      fresh = false;
      if (!accepted) ++run.fallbacks;

      const double f_new = evaluate(weights, cache, targets, cfg).total;
      const double decrease = (f - f_new) / std::max(f, 1.0);
      last_decrease[k] = decrease;
      if (decrease > stop.f_tol) cycle_converged = false;
      f = f_new;
      run.trajectory.push_back(f);
      ++run.updates_per_layer[k];
      run.iterations += inner_iterations;
      since_clock_check += inner_iterations;

      if (stop.max_iterations && run.iterations >= stop.max_iterations) {
        run.stop = StopReason::IterationLimit;
        done = true;
        break;
      }
      if (since_clock_check >= stop.check_cadence) {
        since_clock_check = 0;
        if (out_of_time()) {
          run.stop = StopReason::TimeLimit;
          done = true;
          break;
        }
      }
    }
    if (done) break;
    ++run.cycles;
    if (cycle_converged) {
      run.stop = StopReason::RelativeDecrease;
      break;
    }
    if (out_of_time()) {
      run.stop = StopReason::TimeLimit;
      break;
    }
    accuracy *= lbfgs.accuracy_shrink;
  }

  run.final_objective = f;
  run.final_gradient_norm = gradient_norm(full_gradient(weights, targets, cfg, cache));
  run.weights = std::move(weights);
  run.elapsed_seconds = clock.seconds();
  return run;
}

/// LBFGS on all blocks at once, under the same stopping criteria.
inline OptimizerRun lbfgs_baseline_run(const NetworkWeights& weights0, const Dataset& data,
                                       const ObjectiveConfig& cfg, const LbfgsParams& lbfgs,
                                       const StoppingCriteria& stop,
                                       const ArmijoParams& armijo = {}) {
  lbfgs.validate();
  data.validate();
  const Stopwatch clock;
  NetworkWeights work = weights0;
  auto fg = [&](std::span<const double> x, std::span<double> g) {
    work.assign_flat(x);
    const ForwardCache cache = forward(work, data.features);
    const double v = evaluate(work, cache, data.targets, cfg).total;
    std::size_t off = 0;
    for (const Matrix& b : full_gradient(work, data.targets, cfg, cache)) {
      std::copy(b.values().begin(), b.values().end(), g.begin() + static_cast<std::ptrdiff_t>(off));
      off += b.size();
    }
    return v;
  };
  Lbfgs<decltype(fg)> solver(fg, weights0.flatten(), lbfgs.memory, armijo);

  OptimizerRun run;
  run.trajectory.push_back(solver.value());
  std::size_t since_clock_check = 0;
  while (true) {
    if (solver.gradient_norm() <= stop.grad_norm_tol) {
      run.stop = StopReason::GradientNorm;
      break;
    }
    if (stop.max_iterations && solver.iterations() >= stop.max_iterations) {
      run.stop = StopReason::IterationLimit;
      break;
    }
    const double before = solver.value();
    if (!solver.step()) {
      run.stop = StopReason::NoProgress;
      break;
    }
    run.trajectory.push_back(solver.value());
    if ((before - solver.value()) / std::max(before, 1.0) <= stop.f_tol) {
      run.stop = StopReason::RelativeDecrease;
      break;
    }
    if (++since_clock_check >= stop.check_cadence) {
      since_clock_check = 0;
      if (stop.has_time_limit() && clock.seconds() >= stop.time_limit_seconds) {
        run.stop = StopReason::TimeLimit;
        break;
      }
    }
  }

  NetworkWeights final_weights = weights0;
  final_weights.assign_flat(solver.x());
  run.iterations = solver.iterations();
  run.updates_per_layer.assign(final_weights.layers(), run.iterations);
  run.final_objective = solver.value();
  run.final_gradient_norm = solver.gradient_norm();
  run.weights = std::move(final_weights);
  run.elapsed_seconds = clock.seconds();
  return run;
}

}  // namespace bld
