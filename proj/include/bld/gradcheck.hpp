#pragma once

// Central finite-difference checks of backpropagated gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bld/dataset.hpp"
#include "bld/network.hpp"
#include "bld/objective.hpp"
#include "bld/rng.hpp"

namespace bld {

struct GradcheckOptions {
  double relative_step = 1e-6;  // h = relative_step * max(1, |w_i|)
  double tolerance = 1e-5;      // ||g - g_fd|| / max(||g||, ||g_fd||, tiny)
};

/// Relative error between an analytic block gradient and its central
/// difference estimate, taken norm-wise over the block.
inline double block_gradient_error(const NetworkWeights& w, const Dataset& data,
                                   const ObjectiveConfig& cfg, std::size_t k,
                                   const GradcheckOptions& opt = {}) {
  const Matrix analytic = block_gradient(w, data, cfg, k, forward(w, data.features));
  NetworkWeights probe = w;
  Matrix numeric(analytic.rows(), analytic.cols());
  const Matrix base = w.block(k);
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double wi = base.values()[i];
    const double h = opt.relative_step * std::max(1.0, std::abs(wi));
    Matrix b = base;
    b.values()[i] = wi + h;
    probe.set_block(k, b);
    const double up = objective_value(probe, data, cfg).total;
    b.values()[i] = wi - h;
    probe.set_block(k, std::move(b));
    const double down = objective_value(probe, data, cfg).total;
    numeric.values()[i] = (up - down) / (2.0 * h);
  }
  const double scale = std::max({frobenius_norm(analytic), frobenius_norm(numeric), 1e-300});
  return frobenius_norm(analytic - numeric) / scale;
}

/// Same comparison for the concatenation of all blocks.
inline double full_gradient_error(const NetworkWeights& w, const Dataset& data,
                                  const ObjectiveConfig& cfg, const GradcheckOptions& opt = {}) {
  const Gradient analytic = full_gradient(w, data, cfg);
  double diff = 0.0, na = 0.0, nn = 0.0;
  NetworkWeights probe = w;
  for (std::size_t k = 0; k < w.layers(); ++k) {
    const Matrix base = w.block(k);
    for (std::size_t i = 0; i < base.size(); ++i) {
      const double wi = base.values()[i];
      const double h = opt.relative_step * std::max(1.0, std::abs(wi));
      Matrix b = base;
      b.values()[i] = wi + h;
      probe.set_block(k, b);
      const double up = objective_value(probe, data, cfg).total;
      b.values()[i] = wi - h;
      probe.set_block(k, b);
      const double down = objective_value(probe, data, cfg).total;
      const double fd = (up - down) / (2.0 * h);
      const double g = analytic[k].values()[i];
      diff += (g - fd) * (g - fd);
      na += g * g;
      nn += fd * fd;
    }
    probe.set_block(k, base);
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-300});
}

struct GradcheckCase {
  Architecture arch;
  std::size_t samples = 0;
  double rho = 0.0;
  std::vector<double> block_errors;
  double full_error = 0.0;
  bool passed = false;
};

/// Random instance: hidden depth 1..max_hidden, widths 1..max_width, inputs
/// and outputs of width 1..4, P in 1..max_samples, rho in {0, random}.
inline GradcheckCase random_gradcheck_case(std::uint64_t seed, std::size_t max_hidden = 4,
                                           std::size_t max_width = 8,
                                           std::size_t max_samples = 64,
                                           const GradcheckOptions& opt = {}) {
  SeededRng rng(seed);
  GradcheckCase c;
  c.arch.input_dim = 1 + rng.index(4);
  const std::size_t hidden = 1 + rng.index(max_hidden);
  for (std::size_t i = 0; i < hidden; ++i) c.arch.widths.push_back(1 + rng.index(max_width));
  c.arch.widths.push_back(1 + rng.index(4));
  c.samples = 1 + rng.index(max_samples);
  c.rho = rng.uniform() < 0.5 ? 0.0 : rng.uniform(1e-4, 1e-1);

  Dataset data;
  data.features = Matrix(c.samples, c.arch.input_dim);
  data.targets = Matrix(c.samples, c.arch.output_dim());
  for (double& v : data.features.values()) v = rng.uniform(-1.0, 1.0);
  for (double& v : data.targets.values()) v = rng.uniform(-1.0, 1.0);
  NetworkWeights w = init_weights(c.arch, rng);
  for (std::size_t k = 0; k < w.layers(); ++k) {
    Matrix b = w.block(k);
    b *= 2.0;
    w.set_block(k, std::move(b));
  }
  const ObjectiveConfig cfg{c.rho, c.samples};
  c.passed = true;
  for (std::size_t k = 0; k < w.layers(); ++k) {
    c.block_errors.push_back(block_gradient_error(w, data, cfg, k, opt));
    c.passed = c.passed && c.block_errors.back() <= opt.tolerance;
  }
  c.full_error = full_gradient_error(w, data, cfg, opt);
  c.passed = c.passed && c.full_error <= opt.tolerance;
  return c;
}

}  // namespace bld
