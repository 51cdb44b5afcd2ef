#include <gtest/gtest.h>

#include "bld/batch.hpp"
#include "test_support.hpp"

using bld::Matrix;
using bld::test::arch;
using bld::test::relative_difference;

namespace {

std::vector<std::size_t> draw(bld::BlockSelector& s, std::size_t n) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(s.next());
  return out;
}

bld::StoppingCriteria tight(std::size_t max_iterations = 0) {
  bld::StoppingCriteria s;
  s.grad_norm_tol = 1e-10;
  s.f_tol = 0.0;
  s.time_limit_seconds = 0.0;
  s.max_iterations = max_iterations;
  return s;
}

struct Llsq {
  bld::NetworkWeights w0;
  bld::Dataset data;
  bld::ObjectiveConfig cfg;
  double optimum;
};

Llsq linear_problem(std::uint64_t seed) {
  const auto w0 = bld::init_weights(arch(6, {2}), seed);
  const auto d = bld::test::random_dataset(50, 6, 2, seed + 7);
  const bld::ObjectiveConfig cfg{0.02, 50};
  bld::NetworkWeights best({bld::llsq_last_layer(d.features, d.targets, cfg.rho, 50)});
  return {w0, d, cfg, bld::objective_value(best, d, cfg).total};
}

}  // namespace

TEST(BlockSelector, BackwardAndForwardCycles) {
  bld::BlockSelector back({bld::BlockOrder::Backward, 0}, 3);
  EXPECT_EQ(draw(back, 6), (std::vector<std::size_t>{2, 1, 0, 2, 1, 0}));
  bld::BlockSelector fwd({bld::BlockOrder::Forward, 0}, 3);
  EXPECT_EQ(draw(fwd, 6), (std::vector<std::size_t>{0, 1, 2, 0, 1, 2}));
}

TEST(BlockSelector, RandomCyclesArePermutations) {
  bld::BlockSelector a({bld::BlockOrder::RandomWithoutReplacement, 9}, 5);
  bld::BlockSelector b({bld::BlockOrder::RandomWithoutReplacement, 9}, 5);
  for (int c = 0; c < 4; ++c) {
    auto cycle = draw(a, 5);
    EXPECT_EQ(cycle, draw(b, 5));
    std::sort(cycle.begin(), cycle.end());
    EXPECT_EQ(cycle, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  }
}

TEST(BlockOrder, Names) {
  for (auto o : {bld::BlockOrder::Forward, bld::BlockOrder::Backward, bld::BlockOrder::RandomWithoutReplacement})
    EXPECT_EQ(bld::block_order_from_string(bld::to_string(o)), o);
  EXPECT_THROW(bld::block_order_from_string("sideways"), bld::ConfigError);
}

TEST(AcceptTrial, ArmijoPointPasses) {
  // f(w) = w^2 from w = 1: Armijo gives w = 0 with displacement 1.
  const bld::AcceptanceParams p{};
  EXPECT_TRUE(bld::accept_trial(1.0, 0.0, 0.0, 1.0, p));
}

TEST(AcceptTrial, AscentRejected) {
  EXPECT_FALSE(bld::accept_trial(1.0, 1.1, 2.0, 0.3, {}));
}

TEST(AcceptTrial, ZeroDisplacementBoundary) {
  EXPECT_TRUE(bld::accept_trial(1.0, 1.0, 1.0, 0.0, {}));
}

TEST(AcceptTrial, WorseThanArmijoRejected) {
  EXPECT_FALSE(bld::accept_trial(1.0, 0.5, 0.4, 0.1, {}));
}

TEST(AcceptTrial, InsufficientDecreaseRejected) {
  bld::AcceptanceParams p{};
  // Decrease 1e-9 for a displacement of 1 is below sigma0 = 1e-4.
  EXPECT_FALSE(bld::accept_trial(1.0, 1.0 - 1e-9, 2.0, 1.0, p));
}

TEST(AcceptanceParams, SigmaBound) {
  bld::AcceptanceParams p{};
  EXPECT_EQ(p.sigma0, 1e-4);
  p.sigma0 = 2e-4;
  EXPECT_THROW(p.validate(), bld::PreconditionError);
  p.sigma0 = 0.0;
  EXPECT_THROW(p.validate(), bld::PreconditionError);
}

TEST(B2ld, StationaryStartDoesNothing) {
  const auto w = bld::init_weights(arch(3, {4, 1}), 2);
  const auto d = bld::test::realizable_dataset(w, 20, 2);
  const auto run = bld::b2ld_run(w, d, {0.0, 20}, {}, {}, {}, {});
  EXPECT_EQ(run.stop, bld::StopReason::GradientNorm);
  EXPECT_EQ(run.weights, w);
  EXPECT_EQ(run.updates_per_layer, (std::vector<std::size_t>{0, 0}));
  EXPECT_EQ(run.trajectory.size(), 1u);
}

TEST(B2ld, SingleLayerReachesLlsqOptimum) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto p = linear_problem(seed);
    const auto run = bld::b2ld_run(p.w0, p.data, p.cfg, {}, {}, {}, tight(2000));
    EXPECT_LE(relative_difference(run.final_objective, p.optimum), 1e-6);
    EXPECT_TRUE(bld::test::non_increasing(run.trajectory));
  }
}

TEST(B2ld, ClosedFormLastLayerOption) {
  const auto p = linear_problem(4);
  bld::B2ldOptions opt;
  opt.closed_form_last_layer = true;
  const auto run = bld::b2ld_run(p.w0, p.data, p.cfg, {}, {}, {}, tight(100), opt);
  EXPECT_LE(relative_difference(run.final_objective, p.optimum), 1e-12);
}

TEST(B2ld, MonotoneOnSigmoidNetworks) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto w = bld::init_weights(arch(3, {6, 6, 6, 1}), seed, 3.0);
    const auto d = bld::test::random_dataset(60, 3, 1, seed + 50);
    const auto cfg = bld::ObjectiveConfig::with_default_rho(w.variable_count(), 60);
    for (auto order : {bld::BlockOrder::Backward, bld::BlockOrder::Forward,
                       bld::BlockOrder::RandomWithoutReplacement}) {
      const auto run = bld::b2ld_run(w, d, cfg, {order, seed}, {}, {}, tight(300));
      EXPECT_TRUE(bld::test::non_increasing(run.trajectory));
      EXPECT_LT(run.final_objective, run.trajectory.front());
      EXPECT_EQ(run.trajectory.back(), run.final_objective);
    }
  }
}

TEST(B2ld, Deterministic) {
  const auto w = bld::init_weights(arch(3, {5, 5, 1}), 6, 3.0);
  const auto d = bld::test::random_dataset(40, 3, 1, 6);
  const auto cfg = bld::ObjectiveConfig::with_default_rho(w.variable_count(), 40);
  const bld::BlockSelectionRule rule{bld::BlockOrder::RandomWithoutReplacement, 12};
  const auto a = bld::b2ld_run(w, d, cfg, rule, {}, {}, tight(150));
  const auto b = bld::b2ld_run(w, d, cfg, rule, {}, {}, tight(150));
  EXPECT_EQ(a.weights.digest(), b.weights.digest());
  EXPECT_EQ(a.trajectory, b.trajectory);
  EXPECT_EQ(a.updates_per_layer, b.updates_per_layer);
}

TEST(B2ld, IterationCapHonoured) {
  const auto w = bld::init_weights(arch(3, {8, 8, 1}), 7, 3.0);
  const auto d = bld::test::random_dataset(50, 3, 1, 7);
  const auto run = bld::b2ld_run(w, d, {1e-4, 50}, {}, {}, {}, tight(25));
  EXPECT_EQ(run.stop, bld::StopReason::IterationLimit);
  EXPECT_GE(run.iterations, 25u);
  EXPECT_LE(run.iterations, 25u + 30u);
}

TEST(B2ld, FirstCycleVisitsOutputBlockFirst) {
  const auto w = bld::init_weights(arch(3, {4, 4, 1}), 8, 3.0);
  const auto d = bld::test::random_dataset(30, 3, 1, 8);
  bld::LbfgsParams lb;
  lb.max_iters = 2;
  const auto run = bld::b2ld_run(w, d, {1e-4, 30}, {}, {}, lb, tight(2));
  EXPECT_EQ(run.updates_per_layer, (std::vector<std::size_t>{0, 0, 1}));
}

TEST(LbfgsBaseline, SingleLayerReachesLlsqOptimum) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto p = linear_problem(seed);
    const auto run = bld::lbfgs_baseline_run(p.w0, p.data, p.cfg, {}, tight(2000));
    EXPECT_LE(relative_difference(run.final_objective, p.optimum), 1e-6);
    EXPECT_TRUE(bld::test::non_increasing(run.trajectory));
  }
}

TEST(LbfgsBaseline, MonotoneAndDeterministic) {
  const auto w = bld::init_weights(arch(3, {6, 6, 1}), 9, 3.0);
  const auto d = bld::test::random_dataset(50, 3, 1, 9);
  const auto cfg = bld::ObjectiveConfig::with_default_rho(w.variable_count(), 50);
  const auto a = bld::lbfgs_baseline_run(w, d, cfg, {}, tight(200));
  const auto b = bld::lbfgs_baseline_run(w, d, cfg, {}, tight(200));
  EXPECT_TRUE(bld::test::non_increasing(a.trajectory));
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.trajectory, b.trajectory);
}

TEST(LbfgsBaseline, RelativeDecreaseStop) {
  const auto p = linear_problem(5);
  bld::StoppingCriteria s = tight(0);
  s.f_tol = 1e-2;
  const auto run = bld::lbfgs_baseline_run(p.w0, p.data, p.cfg, {}, s);
  EXPECT_EQ(run.stop, bld::StopReason::RelativeDecrease);
}

TEST(StopReason, RoundTrip) {
  for (auto r : {bld::StopReason::GradientNorm, bld::StopReason::RelativeDecrease, bld::StopReason::TimeLimit,
                 bld::StopReason::IterationLimit, bld::StopReason::EpochLimit, bld::StopReason::NoProgress,
                 bld::StopReason::Failed})
    EXPECT_EQ(bld::stop_reason_from_string(bld::to_string(r)), r);
}
