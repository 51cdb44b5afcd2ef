#pragma once

// Dataset ingestion and preprocessing: delimited text files, a text snapshot
// format with an embedded normalization record, min-max scaling, seeded
// train/test splits, and synthetic teacher-network data.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bld/dataset.hpp"
#include "bld/errors.hpp"
#include "bld/network.hpp"
#include "bld/rng.hpp"

namespace bld {

/// Shortest decimal that is at least 17 significant digits; round-trips doubles.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

/// Splits on `delimiter`, or on runs of blanks when it is empty.
inline std::vector<std::string_view> split_cells(std::string_view line,
                                                 std::optional<char> delimiter) {
  std::vector<std::string_view> cells;
  if (!delimiter) {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
      if (i >= line.size()) break;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
      cells.push_back(line.substr(i, j - i));
      i = j;
    }
    return cells;
  }
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(*delimiter, start);
    cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

inline std::optional<double> parse_number(std::string_view cell) {
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads a numeric table and splits it into features and targets.
/// `target_columns` are 1-based; remaining columns become features in order.
/// Errors report 1-based file line and column.
inline Dataset parse_delimited(std::istream& in, const std::vector<std::size_t>& target_columns,
                               std::optional<char> delimiter, bool has_header,
                               const std::string& source = "<stream>") {
  if (target_columns.empty()) throw DataError("no target columns given");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  bool header_pending = has_header;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    const auto cells = detail::split_cells(line, delimiter);
    if (width == 0) width = cells.size();
    if (cells.size() != width)
      throw DataError("ragged row: expected " + std::to_string(width) + " fields, found " +
                          std::to_string(cells.size()),
                      line_no, std::min(cells.size(), width) + 1);
    std::vector<double> values(width);
    for (std::size_t c = 0; c < width; ++c) {
      const auto v = detail::parse_number(cells[c]);
      if (!v) throw DataError("non-numeric field '" + std::string(cells[c]) + "'", line_no, c + 1);
      values[c] = *v;
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw DataError(source + ": no data rows");

  std::set<std::size_t> targets;
  for (std::size_t t : target_columns) {
    if (t == 0 || t > width)
      throw DataError("target column " + std::to_string(t) + " outside 1.." + std::to_string(width));
    targets.insert(t - 1);
  }
  if (targets.size() != target_columns.size()) throw DataError("duplicate target column");
  if (targets.size() == width) throw DataError("every column is a target; no features left");

  Dataset d;
  d.source = source;
  d.features = Matrix(rows.size(), width - targets.size());
  d.targets = Matrix(rows.size(), targets.size());
  std::vector<std::size_t> target_order;
  for (std::size_t t : target_columns) target_order.push_back(t - 1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::size_t fc = 0;
    for (std::size_t c = 0; c < width; ++c)
      if (!targets.count(c)) d.features(r, fc++) = rows[r][c];
    for (std::size_t t = 0; t < target_order.size(); ++t) d.targets(r, t) = rows[r][target_order[t]];
  }
  return d;
}

inline Dataset load_delimited(const std::string& path, const std::vector<std::size_t>& target_columns,
                              std::optional<char> delimiter, bool has_header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return parse_delimited(in, target_columns, delimiter, has_header, path);
}

/// Writes features then targets per row with 17 significant digits.
inline void write_delimited(std::ostream& out, const Dataset& d, char delimiter = ',',
                            bool header = false) {
  const std::string sep(1, delimiter);
  if (header) {
    for (std::size_t c = 0; c < d.input_dim(); ++c) out << (c ? sep : "") << "x" << c + 1;
    for (std::size_t c = 0; c < d.output_dim(); ++c) out << sep << "y" << c + 1;
    out << '\n';
  }
  for (std::size_t r = 0; r < d.size(); ++r) {
    for (std::size_t c = 0; c < d.input_dim(); ++c) out << (c ? sep : "") << format_double(d.features(r, c));
    for (std::size_t c = 0; c < d.output_dim(); ++c) out << sep << format_double(d.targets(r, c));
    out << '\n';
  }
}

inline void save_delimited(const std::string& path, const Dataset& d, char delimiter = ',',
                           bool header = false) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_delimited(out, d, delimiter, header);
  if (!out) throw DataError("write failed for '" + path + "'");
}

/// Per-column min and max of the training rows.
struct NormalizationModel {
  std::vector<double> feature_min, feature_max, target_min, target_max;

  static NormalizationModel fit(const Dataset& train) {
    if (train.size() == 0) throw PreconditionError("normalization: empty training set");
    NormalizationModel m;
    auto col_range = [](const Matrix& a, std::vector<double>& lo, std::vector<double>& hi) {
      lo.assign(a.cols(), 0.0);
      hi.assign(a.cols(), 0.0);
      for (std::size_t c = 0; c < a.cols(); ++c) {
        lo[c] = hi[c] = a(0, c);
        for (std::size_t r = 1; r < a.rows(); ++r) {
          lo[c] = std::min(lo[c], a(r, c));
          hi[c] = std::max(hi[c], a(r, c));
        }
      }
    };
    col_range(train.features, m.feature_min, m.feature_max);
    col_range(train.targets, m.target_min, m.target_max);
    return m;
  }

  /// (v - min) / (max - min); constant columns map to 0. No clipping.
  Dataset apply(const Dataset& d) const {
    Dataset out = d;
    scale(out.features, feature_min, feature_max);
    scale(out.targets, target_min, target_max);
    return out;
  }

  Dataset invert(const Dataset& d) const {
    Dataset out = d;
    unscale(out.features, feature_min, feature_max);
    unscale(out.targets, target_min, target_max);
    return out;
  }

  friend bool operator==(const NormalizationModel&, const NormalizationModel&) = default;

 private:
  static void scale(Matrix& a, const std::vector<double>& lo, const std::vector<double>& hi) {
    if (a.cols() != lo.size()) throw ShapeError("normalization", a.rows(), a.cols(), 1, lo.size());
    for (std::size_t r = 0; r < a.rows(); ++r)
      for (std::size_t c = 0; c < a.cols(); ++c) {
        const double range = hi[c] - lo[c];
        a(r, c) = range > 0.0 ? (a(r, c) - lo[c]) / range : 0.0;
      }
  }
  static void unscale(Matrix& a, const std::vector<double>& lo, const std::vector<double>& hi) {
    if (a.cols() != lo.size()) throw ShapeError("normalization", a.rows(), a.cols(), 1, lo.size());
    for (std::size_t r = 0; r < a.rows(); ++r)
      for (std::size_t c = 0; c < a.cols(); ++c) {
        const double range = hi[c] - lo[c];
        a(r, c) = range > 0.0 ? a(r, c) * range + lo[c] : lo[c];
      }
  }
};

struct NormalizedSplit {
  Dataset train;
  Dataset test;
  NormalizationModel model;
};

/// Fits min-max scaling on `train` and applies it to both sets.
inline NormalizedSplit fit_apply_normalization(const Dataset& train, const Dataset& test) {
  NormalizationModel m = NormalizationModel::fit(train);
  return {m.apply(train), m.apply(test), m};
}

/// Seeded shuffle, then the first ceil(P (1 - test_fraction)) rows train.
inline std::pair<Dataset, Dataset> train_test_split(const Dataset& d, double test_fraction,
                                                    std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0))
    throw PreconditionError("train_test_split: test fraction must be in [0,1)");
  const std::size_t p = d.size();
  const auto train_rows = static_cast<std::size_t>(
      std::ceil(static_cast<double>(p) * (1.0 - test_fraction) - 1e-9));
  SeededRng rng(seed);
  const auto perm = rng.permutation(p);
  const std::span<const std::size_t> all(perm);
  auto take = [&](std::span<const std::size_t> idx, const std::string& tag) {
    Dataset out;
    out.features = gather_rows(d.features, idx);
    out.targets = gather_rows(d.targets, idx);
    out.source = d.source + tag;
    return out;
  };
  return {take(all.first(train_rows), "#train"), take(all.subspan(train_rows), "#test")};
}

/// Inputs uniform in [0,1]^d, targets from a seeded teacher network plus
/// Gaussian noise. Teacher blocks are drawn like `init_weights` and then
/// multiplied by `teacher_gain`, which keeps the teacher's hidden units out
/// of the near-linear regime.
inline Dataset synth_teacher_dataset(const Architecture& teacher, std::size_t samples,
                                     double noise_sd, std::uint64_t seed,
                                     double teacher_gain = 4.0) {
  teacher.validate();
  SeededRng weight_rng(derive_seed(seed, 1));
  SeededRng input_rng(derive_seed(seed, 2));
  SeededRng noise_rng(derive_seed(seed, 3));

  NetworkWeights w = init_weights(teacher, weight_rng);
  for (std::size_t k = 0; k < w.layers(); ++k) {
    Matrix b = w.block(k);
    b *= teacher_gain;
    w.set_block(k, std::move(b));
  }
  Dataset d;
  d.features = Matrix(samples, teacher.input_dim);
  for (double& v : d.features.values()) v = input_rng.uniform();
  d.targets = forward(w, d.features).outputs();
  for (double& v : d.targets.values()) v += noise_sd * noise_rng.normal();
  d.source = "synth:" + teacher.to_string() + ":P=" + std::to_string(samples) +
             ":noise=" + format_double(noise_sd) + ":seed=" + std::to_string(seed);
  return d;
}

/// Text snapshot: header lines, an optional normalization record, then one
/// whitespace-separated row per sample (features then targets).
///
///   bld-snapshot 1
///   source <text to end of line>
///   dims <P> <d> <m>
///   normalization none | normalization minmax
///   feature_min ... / feature_max ... / target_min ... / target_max ...   (minmax only)
///   data
///   <P rows>
inline void save_snapshot(const std::string& path, const Dataset& d,
                          const std::optional<NormalizationModel>& model = std::nullopt) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "bld-snapshot 1\n";
  out << "source " << d.source << '\n';
  out << "dims " << d.size() << ' ' << d.input_dim() << ' ' << d.output_dim() << '\n';
  auto vec = [&](const char* name, const std::vector<double>& v) {
    out << name;
    for (double x : v) out << ' ' << format_double(x);
    out << '\n';
  };
  if (model) {
    out << "normalization minmax\n";
    vec("feature_min", model->feature_min);
    vec("feature_max", model->feature_max);
    vec("target_min", model->target_min);
    vec("target_max", model->target_max);
  } else {
    out << "normalization none\n";
  }
  out << "data\n";
  write_delimited(out, d, ' ');
  if (!out) throw DataError("write failed for '" + path + "'");
}

struct Snapshot {
  Dataset data;
  std::optional<NormalizationModel> normalization;
};

inline Snapshot load_snapshot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  std::size_t line_no = 0;
  auto next = [&](std::string_view expect_key) {
    if (!std::getline(in, line)) throw DataError("truncated snapshot '" + path + "'");
    ++line_no;
    if (!expect_key.empty() && line.rfind(expect_key, 0) != 0)
      throw DataError("snapshot: expected '" + std::string(expect_key) + "'", line_no, 1);
    if (expect_key.empty()) return line;
    return line.substr(std::min(line.size(), expect_key.size() + 1));
  };
  auto numbers = [&](const std::string& text, std::size_t expected) {
    std::vector<double> v;
    for (auto cell : detail::split_cells(text, std::nullopt)) {
      auto x = detail::parse_number(cell);
      if (!x) throw DataError("snapshot: bad number '" + std::string(cell) + "'", line_no, v.size() + 1);
      v.push_back(*x);
    }
    if (v.size() != expected) throw DataError("snapshot: wrong field count", line_no, v.size());
    return v;
  };
  if (next("bld-snapshot") != "1") throw DataError("snapshot: unsupported version", 1, 1);
  Snapshot s;
  s.data.source = next("source");
  std::istringstream dims(next("dims"));
  std::size_t p = 0, d = 0, m = 0;
  if (!(dims >> p >> d >> m)) throw DataError("snapshot: bad dims line", line_no, 1);
  const std::string kind = next("normalization");
  if (kind == "minmax") {
    NormalizationModel nm;
    nm.feature_min = numbers(next("feature_min"), d);
    nm.feature_max = numbers(next("feature_max"), d);
    nm.target_min = numbers(next("target_min"), m);
    nm.target_max = numbers(next("target_max"), m);
    s.normalization = std::move(nm);
  } else if (kind != "none") {
    throw DataError("snapshot: unknown normalization '" + kind + "'", line_no, 1);
  }
  next("data");
  s.data.features = Matrix(p, d);
  s.data.targets = Matrix(p, m);
  for (std::size_t r = 0; r < p; ++r) {
    const auto v = numbers(next(""), d + m);
    for (std::size_t c = 0; c < d; ++c) s.data.features(r, c) = v[c];
    for (std::size_t c = 0; c < m; ++c) s.data.targets(r, c) = v[d + c];
  }
  return s;
}

}  // namespace bld
