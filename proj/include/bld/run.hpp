#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "bld/errors.hpp"
#include "bld/network.hpp"

namespace bld {

/// Any satisfied criterion ends a run. Zero caps and a non-positive time
/// limit mean "no limit".
struct StoppingCriteria {
  double grad_norm_tol = 1e-3;
  double f_tol = 1e-4;  // (f_k - f_{k+1}) / max(f_k, 1)
  double time_limit_seconds = 150.0;
  std::size_t check_cadence = 30;   // LBFGS iterations between clock reads
  std::size_t max_iterations = 0;   // LBFGS iterations (batch) or minibatch steps
  std::size_t max_epochs = 0;       // minibatch drivers only

  bool has_time_limit() const { return time_limit_seconds > 0.0; }

  /// Defaults for the minibatch drivers: 60 s wall clock.
  static StoppingCriteria minibatch_default() {
    StoppingCriteria s;
    s.time_limit_seconds = 60.0;
    return s;
  }
};

enum class StopReason {
  GradientNorm,
  RelativeDecrease,
  TimeLimit,
  IterationLimit,
  EpochLimit,
  NoProgress,  // no Armijo step exists along the search direction
  Failed,
};

inline std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::GradientNorm: return "grad_norm";
    case StopReason::RelativeDecrease: return "f_tol";
    case StopReason::TimeLimit: return "time_limit";
    case StopReason::IterationLimit: return "iteration_limit";
    case StopReason::EpochLimit: return "epoch_limit";
    case StopReason::NoProgress: return "no_progress";
    case StopReason::Failed: return "failed";
  }
  return "unknown";
}

inline StopReason stop_reason_from_string(std::string_view s) {
  for (auto r : {StopReason::GradientNorm, StopReason::RelativeDecrease, StopReason::TimeLimit,
                 StopReason::IterationLimit, StopReason::EpochLimit, StopReason::NoProgress,
                 StopReason::Failed})
    if (to_string(r) == s) return r;
  throw ConfigError("unknown stop reason '" + std::string(s) + "'");
}

/// One optimization trajectory.
struct OptimizerRun {
  NetworkWeights weights;
  std::vector<double> trajectory;  // objective after every committed update, start first
  double final_objective = 0.0;
  double final_gradient_norm = 0.0;
  double elapsed_seconds = 0.0;
  std::vector<std::size_t> updates_per_layer;
  StopReason stop = StopReason::Failed;
  std::uint64_t seed = 0;
  std::size_t iterations = 0;  // LBFGS iterations, or minibatch steps
  std::size_t cycles = 0;      // block cycles, or epochs
  std::size_t fallbacks = 0;   // Armijo points committed in place of a rejected trial
};

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace bld
