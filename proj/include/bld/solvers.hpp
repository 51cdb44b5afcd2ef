#pragma once

// Armijo backtracking, limited-memory BFGS, and the closed-form solve of the
// output-layer least squares subproblem.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "bld/errors.hpp"
#include "bld/tensor.hpp"

namespace bld {

struct ArmijoParams {
  double initial_step = 1.0;  // a
  double gamma = 1e-4;        // sufficient-decrease coefficient
  double shrink = 0.5;        // backtracking factor
  std::size_t max_halvings = 60;

  void validate() const {
    if (!(initial_step > 0.0)) throw PreconditionError("armijo: initial step must be positive");
    if (!(gamma > 0.0 && gamma < 1.0)) throw PreconditionError("armijo: gamma must be in (0,1)");
    if (!(shrink > 0.0 && shrink < 1.0)) throw PreconditionError("armijo: shrink must be in (0,1)");
    if (max_halvings == 0) throw PreconditionError("armijo: max_halvings must be positive");
  }
};

struct LinesearchResult {
  double step = 0.0;
  double value = 0.0;  // phi(step)
  std::size_t evaluations = 0;
};

/// Returns the first step a * shrink^j (j >= 0) with
/// phi(step) <= phi0 + gamma * step * slope.
template <typename Phi>
  requires std::invocable<Phi&, double>
LinesearchResult armijo_linesearch(Phi&& phi, double phi0, double slope,
                                   const ArmijoParams& params) {
  params.validate();
  if (!(slope < 0.0))
    throw PreconditionError("armijo: slope must be negative, got " + std::to_string(slope));
  double step = params.initial_step;
  LinesearchResult r;
  for (std::size_t j = 0; j <= params.max_halvings; ++j) {
    const double v = phi(step);
    ++r.evaluations;
    if (v <= phi0 + params.gamma * step * slope) {
      r.step = step;
      r.value = v;
      return r;
    }
    if (j == params.max_halvings) break;
    step *= params.shrink;
  }
  throw LinesearchError(step, params.max_halvings);
}

struct LbfgsParams {
  std::size_t memory = 10;
  double grad_tol = 1e-3;        // epsilon; tightened by accuracy_shrink per cycle
  std::size_t max_iters = 30;
  double accuracy_shrink = 0.5;  // epsilon <- epsilon * accuracy_shrink

  void validate() const {
    if (memory == 0) throw PreconditionError("lbfgs: memory must be positive");
    if (!(grad_tol > 0.0)) throw PreconditionError("lbfgs: grad_tol must be positive");
    if (max_iters == 0) throw PreconditionError("lbfgs: max_iters must be positive");
    if (!(accuracy_shrink > 0.0 && accuracy_shrink < 1.0))
      throw PreconditionError("lbfgs: accuracy_shrink must be in (0,1)");
  }
};

namespace detail {
inline double vdot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
inline double vnorm(std::span<const double> a) { return std::sqrt(vdot(a, a)); }
}  // namespace detail

/// Value-and-gradient callable: returns f(x) and writes grad f(x).
template <typename Fn>
concept ValueGradient = requires(Fn& f, std::span<const double> x, std::span<double> g) {
  { f(x, g) } -> std::convertible_to<double>;
};

/// Limited-memory BFGS iterate with two-loop recursion and Armijo steps.
/// Each call to `step()` performs one iteration; accepted steps strictly
/// satisfy the Armijo condition, so values never increase.
template <ValueGradient Fn>
class Lbfgs {
 public:
  Lbfgs(Fn fn, std::vector<double> x0, std::size_t memory, ArmijoParams armijo = {})
      : fn_(std::move(fn)), x_(std::move(x0)), g_(x_.size()), memory_(memory), armijo_(armijo) {
    f_ = fn_(std::span<const double>(x_), std::span<double>(g_));
    ++evaluations_;
    gnorm_ = detail::vnorm(g_);
  }

  const std::vector<double>& x() const { return x_; }
  const std::vector<double>& gradient() const { return g_; }
  double value() const { return f_; }
  double gradient_norm() const { return gnorm_; }
  std::size_t iterations() const { return iterations_; }
  std::size_t evaluations() const { return evaluations_; }
  std::size_t skipped_pairs() const { return skipped_pairs_; }

  /// One iteration. Returns false, leaving the iterate unchanged, when no
  /// step satisfying the Armijo condition exists along either the
  /// quasi-Newton or the steepest-descent direction.
  bool step() {
    if (gnorm_ == 0.0) return false;
    std::vector<double> d = direction();
    double slope = detail::vdot(g_, d);
    if (!(slope < 0.0)) {
      pairs_.clear();
      d = steepest();
      slope = detail::vdot(g_, d);
    }
    if (try_step(d, slope)) return true;
    if (pairs_.empty()) return false;
    pairs_.clear();
    d = steepest();
    return try_step(d, detail::vdot(g_, d));
  }

 private:
  struct Pair {
    std::vector<double> s, y;
    double rho;
  };

  std::vector<double> steepest() const {
    std::vector<double> d(g_.size());
    const double scale = 1.0 / gnorm_;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = -g_[i] * scale;
    return d;
  }

  std::vector<double> direction() const {
    if (pairs_.empty()) return steepest();
    std::vector<double> q = g_;
    std::vector<double> alpha(pairs_.size());
    for (std::size_t i = pairs_.size(); i-- > 0;) {
      alpha[i] = pairs_[i].rho * detail::vdot(pairs_[i].s, q);
      for (std::size_t j = 0; j < q.size(); ++j) q[j] -= alpha[i] * pairs_[i].y[j];
    }
    const Pair& last = pairs_.back();
    const double h0 = detail::vdot(last.s, last.y) / detail::vdot(last.y, last.y);
    for (double& v : q) v *= h0;
    for (std::size_t i = 0; i < pairs_.size(); ++i) {
      const double beta = pairs_[i].rho * detail::vdot(pairs_[i].y, q);
      for (std::size_t j = 0; j < q.size(); ++j) q[j] += (alpha[i] - beta) * pairs_[i].s[j];
    }
    for (double& v : q) v = -v;
    return q;
  }

  bool try_step(const std::vector<double>& d, double slope) {
    if (!(slope < 0.0)) return false;
    std::vector<double> trial(x_.size());
    std::vector<double> trial_g(x_.size());
    std::vector<double> best_g;
    auto phi = [&](double step) {
      for (std::size_t i = 0; i < x_.size(); ++i) trial[i] = x_[i] + step * d[i];
      const double v = fn_(std::span<const double>(trial), std::span<double>(trial_g));
      ++evaluations_;
      return v;
    };
    LinesearchResult ls;
    try {
      ls = armijo_linesearch(phi, f_, slope, armijo_);
    } catch (const LinesearchError&) {
      return false;
    }
    // `trial` and `trial_g` hold the accepted point: the linesearch returns
    // right after evaluating it.
    std::vector<double> s(x_.size()), y(x_.size());
    for (std::size_t i = 0; i < x_.size(); ++i) {
      s[i] = trial[i] - x_[i];
      y[i] = trial_g[i] - g_[i];
    }
    const double sy = detail::vdot(s, y);
    if (sy > 1e-10 * detail::vnorm(s) * detail::vnorm(y)) {
      if (pairs_.size() == memory_) pairs_.pop_front();
      pairs_.push_back(Pair{std::move(s), std::move(y), 1.0 / sy});
    } else {
      ++skipped_pairs_;
    }
    x_ = std::move(trial);
    g_ = std::move(trial_g);
    f_ = ls.value;
    gnorm_ = detail::vnorm(g_);
    ++iterations_;
    return true;
  }

  Fn fn_;
  std::vector<double> x_, g_;
  double f_ = 0.0;
  double gnorm_ = 0.0;
  std::size_t memory_;
  ArmijoParams armijo_;
  std::deque<Pair> pairs_;
  std::size_t iterations_ = 0;
  std::size_t evaluations_ = 0;
  std::size_t skipped_pairs_ = 0;
};

struct LbfgsResult {
  std::vector<double> x;
  double value = 0.0;
  double gradient_norm = 0.0;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  bool degraded = false;            // a linesearch failed; x is the best point reached
  std::vector<double> trajectory;   // value after every accepted iteration, start first
};

/// Minimizes until ||grad|| <= grad_tol or max_iters iterations.
template <ValueGradient Fn>
LbfgsResult lbfgs_minimize(Fn fn, std::vector<double> start, const LbfgsParams& params,
                           const ArmijoParams& armijo = {}) {
  params.validate();
  Lbfgs<Fn> solver(std::move(fn), std::move(start), params.memory, armijo);
  LbfgsResult r;
  r.trajectory.push_back(solver.value());
  while (solver.gradient_norm() > params.grad_tol && solver.iterations() < params.max_iters) {
    if (!solver.step()) {
      r.degraded = true;
      break;
    }
    r.trajectory.push_back(solver.value());
  }
  r.x = solver.x();
  r.value = solver.value();
  r.gradient_norm = solver.gradient_norm();
  r.iterations = solver.iterations();
  r.evaluations = solver.evaluations();
  return r;
}

/// Block objective: returns f at the block value and writes its gradient.
using BlockObjective = std::function<double(const Matrix&, Matrix&)>;

struct BlockSolveResult {
  Matrix block;
  double value = 0.0;
  double gradient_norm = 0.0;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  bool degraded = false;
  std::vector<double> trajectory;
};

/// LBFGS over a single weight block with the other blocks held fixed.
inline BlockSolveResult lbfgs_minimize_block(const BlockObjective& objective, const Matrix& start,
                                             const LbfgsParams& params,
                                             const ArmijoParams& armijo = {}) {
  const std::size_t rows = start.rows(), cols = start.cols();
  auto fg = [&](std::span<const double> x, std::span<double> g) {
    Matrix w(rows, cols, std::vector<double>(x.begin(), x.end()));
    Matrix grad(rows, cols);
    const double v = objective(w, grad);
    std::copy(grad.values().begin(), grad.values().end(), g.begin());
    return v;
  };
  auto flat = std::vector<double>(start.values().begin(), start.values().end());
  LbfgsResult r = lbfgs_minimize(fg, std::move(flat), params, armijo);
  BlockSolveResult out;
  out.block = Matrix(rows, cols, std::move(r.x));
  out.value = r.value;
  out.gradient_norm = r.gradient_norm;
  out.iterations = r.iterations;
  out.evaluations = r.evaluations;
  out.degraded = r.degraded;
  out.trajectory = std::move(r.trajectory);
  return out;
}

/// Minimizer of (1/P)||Z w - Y||^2 + rho ||w||^2, from
/// (Z^T Z + rho P I) w = Z^T Y.
inline Matrix llsq_last_layer(const Matrix& z, const Matrix& y, double rho, std::size_t samples) {
  if (z.rows() != y.rows()) throw ShapeError("llsq_last_layer", z.rows(), z.cols(), y.rows(), y.cols());
  if (rho < 0.0) throw PreconditionError("llsq_last_layer: rho must be nonnegative");
  Matrix s = matmul_tn(z, z);
  const double ridge = rho * static_cast<double>(samples);
  for (std::size_t i = 0; i < s.rows(); ++i) s(i, i) += ridge;
  try {
    return cholesky_solve(s, matmul_tn(z, y));
  } catch (const SingularSystemError&) {
    throw SingularSystemError("llsq_last_layer: normal equations are singular (rho = " +
                              std::to_string(rho) + ")");
  }
}

}  // namespace bld
