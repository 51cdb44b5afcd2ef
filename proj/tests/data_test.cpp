#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "bld/data.hpp"
#include "test_support.hpp"

using bld::Matrix;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("bld_data_test_" + name);
}

bld::Dataset parse(const std::string& text, std::vector<std::size_t> targets,
                   std::optional<char> delim = ',', bool header = false) {
  std::istringstream in(text);
  return bld::parse_delimited(in, targets, delim, header);
}

}  // namespace

TEST(LoadDelimited, ThreeRows) {
  const auto d = bld::load_delimited(BLD_TEST_DATA_DIR "/three_rows.csv", {2}, ',', false);
  EXPECT_EQ(d.features, Matrix::from_rows({{1}, {3}, {5}}));
  EXPECT_EQ(d.targets, Matrix::from_rows({{2}, {4}, {6}}));
}

TEST(LoadDelimited, HeaderSkipped) {
  const auto d = parse("a,b\n1,2\n3,4\n", {1}, ',', true);
  EXPECT_EQ(d.features, Matrix::from_rows({{2}, {4}}));
  EXPECT_EQ(d.targets, Matrix::from_rows({{1}, {3}}));
}

TEST(LoadDelimited, NonNumericFieldReportsPosition) {
  try {
    parse("1,2\nabc,4\n", {2});
    FAIL() << "expected DataError";
  } catch (const bld::DataError& e) {
    EXPECT_EQ(e.row(), 2u);
    EXPECT_EQ(e.column(), 1u);
  }
  try {
    bld::load_delimited(BLD_TEST_DATA_DIR "/bad_field.csv", {2}, ',', true);
    FAIL() << "expected DataError";
  } catch (const bld::DataError& e) {
    EXPECT_EQ(e.row(), 3u);
    EXPECT_EQ(e.column(), 1u);
  }
}

TEST(LoadDelimited, RaggedAndBadTargets) {
  EXPECT_THROW(parse("1,2,3\n4,5\n", {3}), bld::DataError);
  EXPECT_THROW(parse("1,2\n", {3}), bld::DataError);
  EXPECT_THROW(parse("1,2\n", {1, 2}), bld::DataError);
  EXPECT_THROW(parse("1,2,3\n", {2, 2}), bld::DataError);
  EXPECT_THROW(parse("\n\n", {1}), bld::DataError);
  EXPECT_THROW(bld::load_delimited("/nonexistent/file.csv", {1}, ',', false), bld::DataError);
}

TEST(LoadDelimited, WhitespaceAndMultipleTargets) {
  const auto d = parse("  1  2\t3 4\n\n5 6 7   8 \n", {4, 2}, std::nullopt);
  EXPECT_EQ(d.features, Matrix::from_rows({{1, 3}, {5, 7}}));
  EXPECT_EQ(d.targets, Matrix::from_rows({{4, 2}, {8, 6}}));
}

TEST(LoadDelimited, NumberForms) {
  const auto d = parse("-1.5e2,+3\n 0.25 , 1E-3\n", {2});
  EXPECT_EQ(d.features, Matrix::from_rows({{-150}, {0.25}}));
  EXPECT_EQ(d.targets, Matrix::from_rows({{3}, {1e-3}}));
}

TEST(WriteDelimited, RoundTripIsExact) {
  auto d = bld::test::random_dataset(6, 3, 2, 4);
  std::ostringstream out;
  bld::write_delimited(out, d, ',', true);
  std::istringstream in(out.str());
  const auto back = bld::parse_delimited(in, {4, 5}, ',', true);
  EXPECT_EQ(back.features, d.features);
  EXPECT_EQ(back.targets, d.targets);
}

TEST(Normalization, AffineEndpoints) {
  bld::Dataset train{Matrix::from_rows({{0, 7}, {5, 7}, {10, 7}}), Matrix::from_rows({{1}, {2}, {3}}), ""};
  bld::Dataset test{Matrix::from_rows({{15, 9}}), Matrix::from_rows({{0}}), ""};
  const auto n = bld::fit_apply_normalization(train, test);
  EXPECT_EQ(n.train.features, Matrix::from_rows({{0, 0}, {0.5, 0}, {1, 0}}));
  EXPECT_EQ(n.train.targets, Matrix::from_rows({{0}, {0.5}, {1}}));
  EXPECT_EQ(n.test.features, Matrix::from_rows({{1.5, 0}}));
  EXPECT_EQ(n.test.targets, Matrix::from_rows({{-0.5}}));
}

TEST(Normalization, InvertRestores) {
  const auto d = bld::test::random_dataset(20, 4, 2, 8);
  const auto m = bld::NormalizationModel::fit(d);
  const auto back = m.invert(m.apply(d));
  EXPECT_LE(bld::test::relative_difference(back.features, d.features), 1e-14);
  EXPECT_LE(bld::test::relative_difference(back.targets, d.targets), 1e-14);
}

TEST(TrainTestSplit, SizesAndPartition) {
  auto d = bld::test::random_dataset(10, 2, 1, 3);
  for (std::size_t r = 0; r < 10; ++r) d.targets(r, 0) = static_cast<double>(r);
  const auto [train, test] = bld::train_test_split(d, 0.2, 5);
  EXPECT_EQ(train.size(), 8u);
  EXPECT_EQ(test.size(), 2u);
  std::vector<int> seen(10, 0);
  for (const auto* part : {&train, &test})
    for (std::size_t r = 0; r < part->size(); ++r) ++seen[static_cast<std::size_t>(part->targets(r, 0))];
  for (int c : seen) EXPECT_EQ(c, 1);
  const auto [train2, test2] = bld::train_test_split(d, 0.2, 5);
  EXPECT_EQ(train2.targets, train.targets);
  EXPECT_EQ(test2.targets, test.targets);
  EXPECT_THROW(bld::train_test_split(d, 1.0, 5), bld::PreconditionError);
  EXPECT_EQ(bld::train_test_split(d, 0.0, 5).second.size(), 0u);
}

TEST(SynthTeacher, RealizableWithoutNoise) {
  const auto teacher = bld::parse_architecture("4-[2x6]-2");
  const auto d = bld::synth_teacher_dataset(teacher, 30, 0.0, 9);
  // Rebuild the teacher exactly as documented.
  bld::SeededRng rng(bld::derive_seed(9, 1));
  auto w = bld::init_weights(teacher, rng);
  for (std::size_t k = 0; k < w.layers(); ++k) {
    Matrix b = w.block(k);
    b *= 4.0;
    w.set_block(k, b);
  }
  EXPECT_EQ(bld::objective_value(w, d, {0.0, 30}).total, 0.0);
  for (double v : d.features.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(SynthTeacher, DeterministicAndNoiseRaisesVariance) {
  const auto teacher = bld::parse_architecture("3-[5]-1");
  const auto a = bld::synth_teacher_dataset(teacher, 500, 0.1, 2);
  const auto b = bld::synth_teacher_dataset(teacher, 500, 0.1, 2);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.targets, b.targets);
  const auto clean = bld::synth_teacher_dataset(teacher, 500, 0.0, 2);
  EXPECT_EQ(clean.features, a.features);
  auto variance = [](const Matrix& y) {
    double m = 0.0, s = 0.0;
    for (double v : y.values()) m += v;
    m /= static_cast<double>(y.size());
    for (double v : y.values()) s += (v - m) * (v - m);
    return s / static_cast<double>(y.size());
  };
  EXPECT_GT(variance(a.targets), variance(clean.targets));
}

TEST(Snapshot, RoundTripWithNormalization) {
  const auto d = bld::test::random_dataset(7, 3, 2, 12);
  const auto model = bld::NormalizationModel::fit(d);
  const auto path = temp_path("snap.txt");
  bld::save_snapshot(path.string(), model.apply(d), model);
  const auto s = bld::load_snapshot(path.string());
  EXPECT_EQ(s.data.features, model.apply(d).features);
  EXPECT_EQ(s.data.targets, model.apply(d).targets);
  ASSERT_TRUE(s.normalization.has_value());
  EXPECT_EQ(*s.normalization, model);
  std::filesystem::remove(path);
}

TEST(Snapshot, RoundTripPlainAndCorrupt) {
  const auto d = bld::test::random_dataset(4, 2, 1, 13);
  const auto path = temp_path("plain.txt");
  bld::save_snapshot(path.string(), d);
  const auto s = bld::load_snapshot(path.string());
  EXPECT_FALSE(s.normalization.has_value());
  EXPECT_EQ(s.data.features, d.features);
  {
    std::ofstream out(path);
    out << "bld-snapshot 1\nsource x\ndims 2 1 1\nnormalization none\ndata\n1 2\n";
  }
  EXPECT_THROW(bld::load_snapshot(path.string()), bld::DataError);
  std::filesystem::remove(path);
}
