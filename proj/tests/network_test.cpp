#include <gtest/gtest.h>

#include "bld/network.hpp"
#include "test_support.hpp"

using bld::Matrix;
using bld::test::arch;

TEST(Sigmoid, SymmetryPoint) {
  EXPECT_EQ(bld::sigmoid(0.0), 0.5);
  EXPECT_EQ(bld::sigmoid_prime(0.0), 0.25);
}

TEST(Sigmoid, ReflectionIdentity) {
  for (double a : {1.0, 10.0, 100.0}) EXPECT_NEAR(bld::sigmoid(-a), 1.0 - bld::sigmoid(a), 1e-15);
}

TEST(Sigmoid, DerivativeMatchesCentralDifference) {
  const double h = 1e-6;
  for (double a : {-2.0, 0.3, 5.0}) {
    const double fd = (bld::sigmoid(a + h) - bld::sigmoid(a - h)) / (2 * h);
    EXPECT_LE(std::abs(fd - bld::sigmoid_prime(a)) / bld::sigmoid_prime(a), 1e-7) << a;
  }
}

TEST(Sigmoid, FiniteAtExtremes) {
  EXPECT_EQ(bld::sigmoid(-1000.0), 0.0);
  EXPECT_EQ(bld::sigmoid(1000.0), 1.0);
}

TEST(Architecture, ParseUniformHidden) {
  const auto a = bld::parse_architecture("10-[3x50]-1");
  EXPECT_EQ(a.input_dim, 10u);
  EXPECT_EQ(a.widths, (std::vector<std::size_t>{50, 50, 50, 1}));
  EXPECT_EQ(a.layers(), 4u);
  EXPECT_EQ(a.to_string(), "10-[3x50]-1");
  EXPECT_EQ(a.variable_count(), 10u * 50 + 50 * 50 * 2 + 50);
}

TEST(Architecture, ParseExplicitWidths) {
  const auto a = bld::parse_architecture("4-8-3-2");
  EXPECT_EQ(a.widths, (std::vector<std::size_t>{8, 3, 2}));
  EXPECT_EQ(a.fan_in(0), 4u);
  EXPECT_EQ(a.fan_in(2), 3u);
  EXPECT_EQ(bld::parse_hidden_layers("[1x50]"), (std::vector<std::size_t>{50}));
  EXPECT_EQ(bld::parse_hidden_layers("[5,7]"), (std::vector<std::size_t>{5, 7}));
}

TEST(Architecture, RejectsMalformed) {
  for (const char* s : {"", "10", "10-[0x5]-1", "10-[3x]-1", "a-5-1", "10-[3x5-1", "0-3-1"})
    EXPECT_THROW(bld::parse_architecture(s), bld::Error) << s;
}

TEST(InitWeights, DeterministicAndBounded) {
  const auto a = arch(3, {5, 4, 2});
  const auto w1 = bld::init_weights(a, 42);
  const auto w2 = bld::init_weights(a, 42);
  EXPECT_EQ(w1, w2);
  EXPECT_EQ(w1.digest(), w2.digest());
  for (std::size_t k = 0; k < w1.layers(); ++k) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(a.fan_in(k)));
    for (double v : w1.block(k).values()) EXPECT_LE(std::abs(v), bound);
  }
}

TEST(InitWeights, SeedsDiffer) {
  const auto a = arch(3, {5, 1});
  const auto w1 = bld::init_weights(a, 1), w2 = bld::init_weights(a, 2);
  EXPECT_NE(w1.block(0)(0, 0), w2.block(0)(0, 0));
  EXPECT_NE(w1.digest(), w2.digest());
}

TEST(InitWeights, FirstEntryFollowsGenerator) {
  const auto a = arch(4, {3, 1});
  bld::SeededRng rng(77);
  const double expected = rng.uniform(-0.5, 0.5);
  EXPECT_EQ(bld::init_weights(a, 77).block(0)(0, 0), expected);
}

TEST(InitWeights, GainScalesBound) {
  const auto a = arch(16, {16, 1});
  const auto w = bld::init_weights(a, 5, bld::sigmoid_variance_preserving_gain);
  double largest = 0.0;
  for (double v : w.block(0).values()) largest = std::max(largest, std::abs(v));
  EXPECT_LE(largest, bld::sigmoid_variance_preserving_gain / 4.0);
  EXPECT_GT(largest, 0.25);
  EXPECT_THROW(bld::init_weights(a, 5, 0.0), bld::PreconditionError);
}

TEST(Forward, LinearIdentityNetwork) {
  bld::NetworkWeights w({Matrix::identity(3)});
  const Matrix x = Matrix::from_rows({{1, 2, 3}, {-4, 5, 0.5}});
  EXPECT_EQ(bld::forward(w, x).outputs(), x);
}

TEST(Forward, ZeroInputsGiveHalfActivations) {
  const auto w = bld::init_weights(arch(3, {4, 2}), 3);
  const auto c = bld::forward(w, Matrix(5, 3));
  for (double v : c.layer_input(1).values()) EXPECT_EQ(v, 0.5);
}

TEST(Forward, HandEvaluatedTinyNet) {
  bld::NetworkWeights w({Matrix::from_rows({{1}}), Matrix::from_rows({{2}})});
  EXPECT_EQ(bld::forward(w, Matrix(1, 1)).outputs()(0, 0), 1.0);
}

TEST(Forward, MatchesPerSampleLoops) {
  const auto w = bld::init_weights(arch(3, {6, 4, 2}), 8, 3.0);
  const auto data = bld::test::random_dataset(9, 3, 2, 1);
  const Matrix out = bld::forward(w, data.features).outputs();
  for (std::size_t p = 0; p < 9; ++p) {
    const auto ref = bld::test::naive_forward(w, data.features.row(p));
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(out(p, j), ref[j], 1e-13);
  }
}

TEST(Forward, RejectsWrongInputWidth) {
  const auto w = bld::init_weights(arch(3, {2, 1}), 1);
  EXPECT_THROW(bld::forward(w, Matrix(2, 4)), bld::ShapeError);
}

TEST(ForwardPartial, FromZeroEqualsForward) {
  const auto w = bld::init_weights(arch(3, {4, 4, 1}), 2);
  const auto data = bld::test::random_dataset(6, 3, 1, 2);
  auto cache = bld::forward(w, data.features);
  EXPECT_EQ(bld::forward_partial(w, cache, 0), bld::forward(w, data.features).outputs());
}

TEST(ForwardPartial, RecomputesOnlyChangedTail) {
  auto w = bld::init_weights(arch(3, {4, 4, 2}), 2);
  const auto data = bld::test::random_dataset(6, 3, 2, 2);
  for (std::size_t k = 0; k < w.layers(); ++k) {
    auto cache = bld::forward(w, data.features);
    const std::size_t before = cache.layer_evaluations();
    Matrix b = w.block(k);
    b *= 1.5;
    w.set_block(k, b);
    const Matrix& partial = bld::forward_partial(w, cache, k);
    EXPECT_EQ(partial, bld::forward(w, data.features).outputs()) << k;
    EXPECT_EQ(cache.layer_evaluations() - before, w.layers() - k);
  }
}

TEST(ForwardPartial, UnchangedWeightsReproduceOutputs) {
  const auto w = bld::init_weights(arch(2, {3, 3, 1}), 6);
  const auto data = bld::test::random_dataset(4, 2, 1, 6);
  auto cache = bld::forward(w, data.features);
  const Matrix before = cache.outputs();
  for (std::size_t k = 0; k < w.layers(); ++k) EXPECT_EQ(bld::forward_partial(w, cache, k), before);
}

TEST(ForwardPartial, StaleLowerBlockIsAnError) {
  auto w = bld::init_weights(arch(2, {3, 3, 1}), 6);
  const auto data = bld::test::random_dataset(4, 2, 1, 6);
  auto cache = bld::forward(w, data.features);
  w.step_block(0, 0.1, w.block(0));
  try {
    bld::forward_partial(w, cache, 2);
    FAIL() << "expected StaleCacheError";
  } catch (const bld::StaleCacheError& e) {
    EXPECT_EQ(e.layer(), 0u);
  }
  EXPECT_NO_THROW(bld::forward_partial(w, cache, 0));
}

TEST(NetworkWeights, FlattenRoundTrip) {
  auto w = bld::init_weights(arch(3, {4, 2}), 10);
  const auto flat = w.flatten();
  ASSERT_EQ(flat.size(), w.variable_count());
  auto copy = bld::init_weights(arch(3, {4, 2}), 11);
  copy.assign_flat(flat);
  EXPECT_EQ(copy, w);
  EXPECT_THROW(copy.assign_flat(std::vector<double>(3)), bld::ShapeError);
}

TEST(NetworkWeights, RejectsNonConformingBlocks) {
  EXPECT_THROW(bld::NetworkWeights({Matrix(3, 4), Matrix(5, 1)}), bld::ShapeError);
  auto w = bld::init_weights(arch(3, {4, 2}), 1);
  EXPECT_THROW(w.set_block(1, Matrix(3, 2)), bld::ShapeError);
}
