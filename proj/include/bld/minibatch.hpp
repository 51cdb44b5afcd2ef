#pragma once

// Minibatch drivers. BLInG takes one clamped steepest-descent step per layer
// per minibatch, in backward order, reusing the forward cache between layer
// updates. IG takes a single clamped step on all layers per minibatch.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "bld/dataset.hpp"
#include "bld/network.hpp"
#include "bld/objective.hpp"
#include "bld/rng.hpp"
#include "bld/run.hpp"

namespace bld {

/// Disjoint, exhaustive, nonempty index sets over {0..P-1}.
struct Partition {
  std::vector<std::vector<std::size_t>> batches;
  std::size_t count() const { return batches.size(); }
};

/// Optionally shuffles 0..P-1, then cuts it into ceil(P / batch_size) chunks.
inline Partition make_partition(std::size_t samples, std::size_t batch_size, std::uint64_t seed,
                                bool shuffle) {
  if (batch_size == 0 || batch_size > samples)
    throw PreconditionError("make_partition: batch size " + std::to_string(batch_size) +
                            " not in [1, " + std::to_string(samples) + "]");
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    SeededRng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
  }
  Partition p;
  for (std::size_t start = 0; start < samples; start += batch_size) {
    const std::size_t end = std::min(samples, start + batch_size);
    p.batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return p;
}

enum class MinibatchOrder { Incremental, Stochastic, RandomWithoutReplacement };

inline std::string_view to_string(MinibatchOrder o) {
  switch (o) {
    case MinibatchOrder::Incremental: return "incremental";
    case MinibatchOrder::Stochastic: return "stochastic";
    case MinibatchOrder::RandomWithoutReplacement: return "random";
  }
  return "unknown";
}

inline MinibatchOrder minibatch_order_from_string(std::string_view s) {
  if (s == "incremental") return MinibatchOrder::Incremental;
  if (s == "stochastic") return MinibatchOrder::Stochastic;
  if (s == "random") return MinibatchOrder::RandomWithoutReplacement;
  throw ConfigError("unknown minibatch order '" + std::string(s) + "'");
}

struct MinibatchSelectionRule {
  MinibatchOrder order = MinibatchOrder::Incremental;
  std::uint64_t seed = 0;
};

/// Produces the sequence of minibatch indices for each epoch.
class MinibatchSchedule {
 public:
  MinibatchSchedule(MinibatchSelectionRule rule, std::size_t batches)
      : rule_(rule), batches_(batches), rng_(rule.seed) {}

  std::vector<std::size_t> next_epoch() {
    std::vector<std::size_t> order(batches_);
    switch (rule_.order) {
      case MinibatchOrder::Incremental:
        std::iota(order.begin(), order.end(), std::size_t{0});
        break;
      case MinibatchOrder::RandomWithoutReplacement:
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng_.shuffle(std::span<std::size_t>(order));
        break;
      case MinibatchOrder::Stochastic:
        for (auto& h : order) h = static_cast<std::size_t>(rng_.index(batches_));
        break;
    }
    return order;
  }

 private:
  MinibatchSelectionRule rule_;
  std::size_t batches_;
  SeededRng rng_;
};

struct PartitionSpec {
  std::size_t batch_size = 128;
  bool shuffle = false;
  std::uint64_t seed = 0;
};

struct BlingParams {
  double alpha0 = 0.5;
  double eps_dim = 5e-3;   // alpha <- alpha * (1 - eps_dim * alpha)
  double clamp_lo = 1e-3;  // direction norms are clamped to [clamp_lo, clamp_hi]
  double clamp_hi = 1e6;
  std::vector<std::size_t> working_set;  // blocks updated per minibatch, in order; empty = all, backward

  /// Grid-searched defaults: alpha0 = 0.5 / max(1, L - 2) for BLInG.
  static BlingParams for_bling(std::size_t layers) {
    BlingParams p;
    p.alpha0 = 0.5 / std::max(1.0, static_cast<double>(layers) - 2.0);
    return p;
  }
  /// alpha0 = 0.5 for IG.
  static BlingParams for_ig() { return BlingParams{}; }

  void validate() const {
    if (!(alpha0 > 0.0)) throw PreconditionError("bling: alpha0 must be positive");
    if (!(eps_dim >= 0.0 && eps_dim < 1.0)) throw PreconditionError("bling: eps_dim must be in [0,1)");
    if (!(clamp_lo > 0.0 && clamp_lo <= clamp_hi))
      throw PreconditionError("bling: need 0 < clamp_lo <= clamp_hi");
  }
};

inline double stepsize_update(double alpha, double eps_dim) {
  return alpha * (1.0 - eps_dim * alpha);
}

/// max(lo, min(hi, norm)): the divisor applied to the stepsize.
inline double clamped_scale(double direction_norm, double lo, double hi) {
  return std::max(lo, std::min(hi, direction_norm));
}

namespace detail {

template <typename UpdateFn>
OptimizerRun minibatch_loop(NetworkWeights weights, const Dataset& data, const ObjectiveConfig& cfg,
                            const PartitionSpec& spec, MinibatchSelectionRule rule,
                            const BlingParams& params, const StoppingCriteria& stop,
                            UpdateFn&& update_on_batch) {
  params.validate();
  data.validate();
  const Stopwatch clock;
  if (!stop.has_time_limit() && stop.max_epochs == 0 && stop.max_iterations == 0)
    throw PreconditionError("minibatch run: needs a time limit, an epoch cap or a step cap");
  const Partition partition = make_partition(
      data.size(), std::min(spec.batch_size, data.size()), spec.seed, spec.shuffle);
  std::vector<Batch> batches;
  batches.reserve(partition.count());
  for (const auto& idx : partition.batches) batches.push_back(gather_batch(data, idx));

  OptimizerRun run;
  run.updates_per_layer.assign(weights.layers(), 0);
  run.trajectory.push_back(objective_value(weights, data, cfg).total);
  MinibatchSchedule schedule(rule, batches.size());
  double alpha = params.alpha0;
  bool done = false;
  while (!done) {
    for (std::size_t h : schedule.next_epoch()) {
      update_on_batch(weights, batches[h], alpha, run.updates_per_layer);
      alpha = stepsize_update(alpha, params.eps_dim);
      ++run.iterations;
      if (stop.max_iterations && run.iterations >= stop.max_iterations) {
        run.stop = StopReason::IterationLimit;
        done = true;
        break;
      }
      if (stop.has_time_limit() && clock.seconds() >= stop.time_limit_seconds) {
        run.stop = StopReason::TimeLimit;
        done = true;
        break;
      }
    }
    if (!done) ++run.cycles;
    run.trajectory.push_back(objective_value(weights, data, cfg).total);
    if (!done && stop.max_epochs && run.cycles >= stop.max_epochs) {
      run.stop = StopReason::EpochLimit;
      done = true;
    }
  }
  run.final_objective = run.trajectory.back();
  run.final_gradient_norm = gradient_norm(full_gradient(weights, data, cfg));
  run.weights = std::move(weights);
  run.elapsed_seconds = clock.seconds();
  return run;
}

}  // namespace detail

/// Block Layer Incremental Gradient.
inline OptimizerRun bling_run(NetworkWeights weights, const Dataset& data, const ObjectiveConfig& cfg,
                              const PartitionSpec& spec, MinibatchSelectionRule rule,
                              const BlingParams& params, const StoppingCriteria& stop) {
  std::vector<std::size_t> blocks = params.working_set;
  if (blocks.empty()) {
    blocks.resize(weights.layers());
    std::iota(blocks.rbegin(), blocks.rend(), std::size_t{0});
  }
  for (std::size_t k : blocks)
    if (k >= weights.layers()) throw PreconditionError("bling: working set block out of range");

  auto update = [&](NetworkWeights& w, const Batch& batch, double alpha,
                    std::vector<std::size_t>& counts) {
    ForwardCache cache = forward(w, batch.inputs);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::size_t k = blocks[i];
      const Matrix g = block_gradient(w, batch.targets, cfg, k, cache);
      const double step = alpha / clamped_scale(frobenius_norm(g), params.clamp_lo, params.clamp_hi);
      w.step_block(k, -step, g);
      ++counts[k];
      if (i + 1 < blocks.size()) forward_partial(w, cache, k);
    }
  };
  return detail::minibatch_loop(std::move(weights), data, cfg, spec, rule, params, stop, update);
}

/// Incremental Gradient: all blocks move together along -grad f_h.
inline OptimizerRun ig_run(NetworkWeights weights, const Dataset& data, const ObjectiveConfig& cfg,
                           const PartitionSpec& spec, MinibatchSelectionRule rule,
                           const BlingParams& params, const StoppingCriteria& stop) {
  auto update = [&](NetworkWeights& w, const Batch& batch, double alpha,
                    std::vector<std::size_t>& counts) {
    const ForwardCache cache = forward(w, batch.inputs);
    const Gradient g = full_gradient(w, batch.targets, cfg, cache);
    const double step = alpha / clamped_scale(gradient_norm(g), params.clamp_lo, params.clamp_hi);
    for (std::size_t k = 0; k < w.layers(); ++k) {
      w.step_block(k, -step, g[k]);
      ++counts[k];
    }
  };
  return detail::minibatch_loop(std::move(weights), data, cfg, spec, rule, params, stop, update);
}

}  // namespace bld
