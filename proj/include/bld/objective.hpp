#pragma once

// Regularized mean squared error
//
//   f(w) = (1/P) sum_p ||y~_p(w) - y_p||^2 + rho ||w||^2
//
// and its gradient by backpropagation. A minibatch B_h contributes
//
//   f_h(w) = (1/P) sum_{p in B_h} ||y~_p(w) - y_p||^2 + rho (|B_h|/P) ||w||^2
//
// so that the f_h of any partition sum to f. Every routine here works on a
// batch of rows; the full objective is the batch holding all P samples.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "bld/dataset.hpp"
#include "bld/network.hpp"
#include "bld/tensor.hpp"

namespace bld {

struct ObjectiveConfig {
  double rho = 0.0;
  std::size_t sample_count = 1;  // P, the size of the full training set

  /// rho = 1e-3 / n with n the number of weights.
  static ObjectiveConfig with_default_rho(std::size_t variable_count, std::size_t samples) {
    return {1e-3 / static_cast<double>(variable_count), samples};
  }
};

struct ObjectiveValue {
  double total = 0.0;
  double data_term = 0.0;    // (1/P) * sum of squared residuals over the batch
  double regularizer = 0.0;  // rho * (|B|/P) * ||w||^2
};

/// Per-layer error signals of one backward pass.
struct BackpropState {
  Matrix residual;                 // e = outputs - targets
  std::vector<Matrix> deltas;      // deltas[k] is empty for k below `lowest_delta`
  std::size_t lowest_delta = std::numeric_limits<std::size_t>::max();
  std::size_t lowest_layer_read = std::numeric_limits<std::size_t>::max();
};

using Gradient = std::vector<Matrix>;

inline double squared_norm(const Gradient& g) {
  double s = 0.0;
  for (const auto& b : g) s += squared_norm(b);
  return s;
}

inline double gradient_norm(const Gradient& g) { return std::sqrt(squared_norm(g)); }

namespace detail {

inline double regularizer_weight(const ObjectiveConfig& cfg, std::size_t batch_rows) {
  if (cfg.sample_count == 0) throw PreconditionError("ObjectiveConfig: sample_count is zero");
  return cfg.rho * (static_cast<double>(batch_rows) / static_cast<double>(cfg.sample_count));
}

inline void require_current(const NetworkWeights& w, const ForwardCache& cache) {
  if (cache.layers() != w.layers())
    throw StaleCacheError(0, "cache and weights have different depths");
  for (std::size_t j = 0; j < w.layers(); ++j)
    if (cache.stamp(j) != w.stamp(j))
      throw StaleCacheError(j, "block changed since the cache was computed");
}

inline void require_targets(const ForwardCache& cache, const Matrix& targets) {
  const Matrix& out = cache.outputs();
  if (!out.same_shape(targets))
    throw ShapeError("objective targets", out.rows(), out.cols(), targets.rows(), targets.cols());
}

}  // namespace detail

/// Objective on the cached batch. The cache must match the current weights.
inline ObjectiveValue evaluate(const NetworkWeights& w, const ForwardCache& cache,
                               const Matrix& targets, const ObjectiveConfig& cfg) {
  detail::require_current(w, cache);
  detail::require_targets(cache, targets);
  const Matrix& out = cache.outputs();
  double sse = 0.0;
  auto o = out.values();
  auto t = targets.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double e = o[i] - t[i];
    sse += e * e;
  }
  ObjectiveValue v;
  v.data_term = sse / static_cast<double>(cfg.sample_count);
  v.regularizer = detail::regularizer_weight(cfg, cache.batch_size()) * w.squared_norm();
  v.total = v.data_term + v.regularizer;
  return v;
}

inline ObjectiveValue objective_value(const NetworkWeights& w, const Dataset& data,
                                      const ObjectiveConfig& cfg) {
  if (data.size() == 0) throw PreconditionError("objective_value: empty dataset");
  return evaluate(w, forward(w, data.features), data.targets, cfg);
}

/// Unregularized mean squared error over the rows of `data`.
inline double mean_squared_error(const NetworkWeights& w, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  ObjectiveConfig cfg{0.0, data.size()};
  return objective_value(w, data, cfg).data_term;
}

/// Propagates the residual backward from the output layer down to `down_to`.
/// Only layers >= down_to are read from the cache.
inline void backpropagate(const NetworkWeights& w, const ForwardCache& cache,
                          const Matrix& targets, std::size_t down_to, BackpropState& state) {
  detail::require_current(w, cache);
  detail::require_targets(cache, targets);
  const std::size_t layers = w.layers();
  if (down_to >= layers)
    throw PreconditionError("backpropagate: layer " + std::to_string(down_to) + " out of range");

  state.residual = cache.outputs() - targets;
  state.deltas.assign(layers, Matrix{});
  state.deltas[layers - 1] = state.residual;
  state.lowest_delta = layers - 1;
  state.lowest_layer_read = layers - 1;
  const Activation act = cache.hidden_activation();
  for (std::size_t k = layers - 1; k-- > down_to;) {
    // delta_k = (delta_{k+1} w_{k+1}^T) .* g'(a_k), with g'(a_k) read off z_{k+1}.
    Matrix d = matmul_nt(state.deltas[k + 1], w.block(k + 1));
    const Matrix& z = cache.layer_input(k + 1);
    auto dv = d.values();
    auto zv = z.values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= activation_slope_from_output(act, zv[i]);
    state.deltas[k] = std::move(d);
    state.lowest_delta = k;
    state.lowest_layer_read = k + 1;
  }
}

namespace detail {

inline Matrix block_gradient_from(const NetworkWeights& w, const ForwardCache& cache,
                                  const ObjectiveConfig& cfg, std::size_t k,
                                  BackpropState& state) {
  const Matrix& z = cache.layer_input(k);
  state.lowest_layer_read = std::min(state.lowest_layer_read, k);
  Matrix g = matmul_tn(z, state.deltas[k]);
  g *= 2.0 / static_cast<double>(cfg.sample_count);
  g.axpy(2.0 * regularizer_weight(cfg, cache.batch_size()), w.block(k));
  return g;
}

}  // namespace detail

/// Gradient of the batch objective with respect to block k only; the
/// backward pass stops at layer k.
inline Matrix block_gradient(const NetworkWeights& w, const Matrix& targets,
                             const ObjectiveConfig& cfg, std::size_t k,
                             const ForwardCache& cache, BackpropState* state_out = nullptr) {
  BackpropState local;
  BackpropState& state = state_out ? *state_out : local;
  backpropagate(w, cache, targets, k, state);
  return detail::block_gradient_from(w, cache, cfg, k, state);
}

inline Matrix block_gradient(const NetworkWeights& w, const Dataset& data,
                             const ObjectiveConfig& cfg, std::size_t k,
                             const ForwardCache& cache, BackpropState* state_out = nullptr) {
  return block_gradient(w, data.targets, cfg, k, cache, state_out);
}

/// All block gradients from a single backward pass.
inline Gradient full_gradient(const NetworkWeights& w, const Matrix& targets,
                              const ObjectiveConfig& cfg, const ForwardCache& cache) {
  BackpropState state;
  backpropagate(w, cache, targets, 0, state);
  Gradient g;
  g.reserve(w.layers());
  for (std::size_t k = 0; k < w.layers(); ++k)
    g.push_back(detail::block_gradient_from(w, cache, cfg, k, state));
  return g;
}

inline Gradient full_gradient(const NetworkWeights& w, const Dataset& data,
                              const ObjectiveConfig& cfg) {
  return full_gradient(w, data.targets, cfg, forward(w, data.features));
}

/// f_h and its gradient with respect to block k; `cache` holds the batch inputs.
inline std::pair<double, Matrix> minibatch_value_and_block_gradient(
    const NetworkWeights& w, const Batch& batch, const ObjectiveConfig& cfg, std::size_t k,
    const ForwardCache& cache) {
  if (batch.size() == 0) throw PreconditionError("minibatch: empty batch");
  if (cache.batch_size() != batch.size())
    throw PreconditionError("minibatch: cache holds " + std::to_string(cache.batch_size()) +
                            " rows, batch has " + std::to_string(batch.size()));
  const double value = evaluate(w, cache, batch.targets, cfg).total;
  return {value, block_gradient(w, batch.targets, cfg, k, cache)};
}

inline double minibatch_value(const NetworkWeights& w, const Batch& batch,
                              const ObjectiveConfig& cfg) {
  if (batch.size() == 0) throw PreconditionError("minibatch: empty batch");
  return evaluate(w, forward(w, batch.inputs), batch.targets, cfg).total;
}

}  // namespace bld
