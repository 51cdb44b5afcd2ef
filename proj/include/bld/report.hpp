#pragma once

// Experiment report rows, pairwise win/tie/defeat tallies, depth ratios, and
// the CSV + text summary writers.

#include <algorithm>
#include <cmath>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "bld/data.hpp"
#include "bld/errors.hpp"
#include "bld/network.hpp"

namespace bld {

// ---------------------------------------------------------------- tallies

struct Tally {
  std::size_t wins = 0;     // a at least `threshold` better than b
  std::size_t defeats = 0;  // b at least `threshold` better than a
  std::size_t ties = 0;
  std::size_t compared() const { return wins + defeats + ties; }
  friend bool operator==(const Tally&, const Tally&) = default;
};

/// Pairwise comparison of nonnegative values where smaller is better:
/// a wins iff a <= (1 - threshold) b, b wins iff b <= (1 - threshold) a.
inline Tally tally_wins(std::span<const double> a, std::span<const double> b,
                        double threshold = 0.05) {
  if (a.size() != b.size())
    throw PreconditionError("tally_wins: " + std::to_string(a.size()) + " values vs " +
                            std::to_string(b.size()));
  if (!(threshold >= 0.0 && threshold < 1.0))
    throw PreconditionError("tally_wins: threshold must be in [0,1)");
  Tally t;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i] >= 0.0) || !(b[i] >= 0.0))
      throw PreconditionError("tally_wins: values must be nonnegative numbers");
    if (a[i] <= (1.0 - threshold) * b[i] && a[i] != b[i])
      ++t.wins;
    else if (b[i] <= (1.0 - threshold) * a[i] && a[i] != b[i])
      ++t.defeats;
    else
      ++t.ties;
  }
  return t;
}

// ---------------------------------------------------------------- rows

struct ReportRow {
  std::string dataset;
  std::string architecture;  // hidden part, e.g. "[10x50]"
  std::string algorithm;
  std::uint64_t seed = 0;
  std::uint64_t init_digest = 0;
  double final_objective = std::numeric_limits<double>::quiet_NaN();
  double gradient_norm = std::numeric_limits<double>::quiet_NaN();
  double train_mse = std::numeric_limits<double>::quiet_NaN();
  double test_mse = std::numeric_limits<double>::quiet_NaN();
  std::size_t iterations = 0;
  std::size_t cycles = 0;
  std::size_t fallbacks = 0;
  std::string stop_reason = "failed";
  double elapsed_seconds = 0.0;
  std::vector<std::size_t> updates_per_layer;
  std::string error;

  bool ok() const { return error.empty() && std::isfinite(final_objective); }

  /// Equality ignoring the wall-clock column.
  bool same_outcome(const ReportRow& o) const {
    auto bits = [](double v) { return std::bit_cast<std::uint64_t>(v); };
    return dataset == o.dataset && architecture == o.architecture && algorithm == o.algorithm &&
           seed == o.seed && init_digest == o.init_digest &&
           bits(final_objective) == bits(o.final_objective) &&
           bits(gradient_norm) == bits(o.gradient_norm) && bits(train_mse) == bits(o.train_mse) &&
           bits(test_mse) == bits(o.test_mse) && iterations == o.iterations &&
           cycles == o.cycles && fallbacks == o.fallbacks && stop_reason == o.stop_reason &&
           updates_per_layer == o.updates_per_layer && error == o.error;
  }
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
  std::vector<std::pair<std::string, std::string>> comparisons;  // algorithm pairs to tally
  std::optional<std::pair<std::string, std::string>> depth_pair;  // deep, shallow
};

// ---------------------------------------------------------------- summaries

struct BestOf {
  std::string dataset, architecture, algorithm;
  std::size_t runs = 0, failures = 0;
  std::optional<ReportRow> best;  // lowest final objective among successful runs
  double mean_objective = std::numeric_limits<double>::quiet_NaN();
};

/// One entry per (dataset, architecture, algorithm), in first-appearance order.
inline std::vector<BestOf> best_of_runs(const std::vector<ReportRow>& rows) {
  std::vector<BestOf> out;
  auto find = [&](const ReportRow& r) -> BestOf& {
    for (auto& b : out)
      if (b.dataset == r.dataset && b.architecture == r.architecture && b.algorithm == r.algorithm)
        return b;
    out.push_back(BestOf{r.dataset, r.architecture, r.algorithm, 0, 0, std::nullopt});
    return out.back();
  };
  std::map<std::tuple<std::string, std::string, std::string>, std::pair<double, std::size_t>> sums;
  for (const auto& r : rows) {
    BestOf& b = find(r);
    ++b.runs;
    if (!r.ok()) {
      ++b.failures;
      continue;
    }
    if (!b.best || r.final_objective < b.best->final_objective) b.best = r;
    auto& s = sums[{r.dataset, r.architecture, r.algorithm}];
    s.first += r.final_objective;
    ++s.second;
  }
  for (auto& b : out) {
    auto it = sums.find({b.dataset, b.architecture, b.algorithm});
    if (it != sums.end() && it->second.second)
      b.mean_objective = it->second.first / static_cast<double>(it->second.second);
  }
  return out;
}

enum class Metric { Objective, TestMse };

inline double metric_of(const ReportRow& r, Metric m) {
  return m == Metric::Objective ? r.final_objective : r.test_mse;
}

struct PairTally {
  std::string dataset, architecture, a, b;
  Tally objective, test_mse;
};

/// Seed-paired tallies of algorithm `a` against `b` per (dataset, arch).
/// Seeds where either run failed are left out of the comparison.
inline std::vector<PairTally> pair_tallies(const std::vector<ReportRow>& rows, const std::string& a,
                                           const std::string& b, double threshold = 0.05) {
  std::vector<std::pair<std::string, std::string>> cells;
  for (const auto& r : rows)
    if (std::find(cells.begin(), cells.end(), std::pair{r.dataset, r.architecture}) == cells.end())
      cells.emplace_back(r.dataset, r.architecture);
  std::vector<PairTally> out;
  for (const auto& [ds, arch] : cells) {
    std::map<std::uint64_t, const ReportRow*> ra, rb;
    for (const auto& r : rows) {
      if (r.dataset != ds || r.architecture != arch || !r.ok()) continue;
      if (r.algorithm == a) ra[r.seed] = &r;
      if (r.algorithm == b) rb[r.seed] = &r;
    }
    std::vector<double> oa, ob, ta, tb;
    for (const auto& [seed, row] : ra) {
      auto it = rb.find(seed);
      if (it == rb.end()) continue;
      oa.push_back(row->final_objective);
      ob.push_back(it->second->final_objective);
      if (std::isfinite(row->test_mse) && std::isfinite(it->second->test_mse)) {
        ta.push_back(row->test_mse);
        tb.push_back(it->second->test_mse);
      }
    }
    if (oa.empty()) continue;
    out.push_back({ds, arch, a, b, tally_wins(oa, ob, threshold), tally_wins(ta, tb, threshold)});
  }
  return out;
}

struct DepthRatio {
  std::string dataset, algorithm;
  std::optional<double> ratio;  // absent when either cell has no successful run
};

/// Best-of-seeds value on `deep` divided by best-of-seeds value on `shallow`,
/// per (dataset, algorithm).
inline std::vector<DepthRatio> depth_ratio(const std::vector<ReportRow>& rows,
                                           const std::string& deep, const std::string& shallow,
                                           Metric metric = Metric::Objective) {
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::tuple<std::string, std::string, std::string>, double> best;
  for (const auto& r : rows) {
    if (std::find(keys.begin(), keys.end(), std::pair{r.dataset, r.algorithm}) == keys.end())
      keys.emplace_back(r.dataset, r.algorithm);
    if (!r.ok()) continue;
    const double v = metric_of(r, metric);
    if (!std::isfinite(v)) continue;
    auto [it, inserted] = best.try_emplace({r.dataset, r.architecture, r.algorithm}, v);
    if (!inserted) it->second = std::min(it->second, v);
  }
  std::vector<DepthRatio> out;
  for (const auto& [ds, alg] : keys) {
    DepthRatio d{ds, alg, std::nullopt};
    auto hi = best.find({ds, deep, alg});
    auto lo = best.find({ds, shallow, alg});
    if (hi != best.end() && lo != best.end() && lo->second != 0.0) d.ratio = hi->second / lo->second;
    out.push_back(d);
  }
  return out;
}

// ---------------------------------------------------------------- CSV

inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols = {
      "dataset",    "architecture", "algorithm",  "seed",      "init_digest",
      "final_objective", "gradient_norm", "train_mse", "test_mse", "iterations",
      "cycles",     "fallbacks",    "stop_reason", "elapsed_seconds", "updates_per_layer",
      "error"};
  return cols;
}

namespace detail {

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw DataError("report: unterminated quote", line_no, fields.size() + 1);
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

inline std::string format_row(const ReportRow& r) {
  std::string upl;
  for (std::size_t i = 0; i < r.updates_per_layer.size(); ++i)
    upl += (i ? ";" : "") + std::to_string(r.updates_per_layer[i]);
  const std::vector<std::string> f = {detail::csv_field(r.dataset),
                                      detail::csv_field(r.architecture),
                                      detail::csv_field(r.algorithm),
                                      std::to_string(r.seed),
                                      detail::hex64(r.init_digest),
                                      format_double(r.final_objective),
                                      format_double(r.gradient_norm),
                                      format_double(r.train_mse),
                                      format_double(r.test_mse),
                                      std::to_string(r.iterations),
                                      std::to_string(r.cycles),
                                      std::to_string(r.fallbacks),
                                      detail::csv_field(r.stop_reason),
                                      format_double(r.elapsed_seconds),
                                      upl,
                                      detail::csv_field(r.error)};
  std::string line;
  for (std::size_t i = 0; i < f.size(); ++i) line += (i ? "," : "") + f[i];
  return line;
}

inline void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
  const auto& cols = report_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : rows) out << format_row(r) << '\n';
}

inline std::vector<ReportRow> read_report_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw DataError("report: empty file");
  if (detail::csv_split(line, 1) != report_columns()) throw DataError("report: unexpected header", 1, 1);
  std::vector<ReportRow> rows;
  auto num = [&](const std::string& s, std::size_t col) {
    if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    auto v = detail::parse_number(s);
    if (!v) throw DataError("report: bad number '" + s + "'", line_no, col);
    return *v;
  };
  auto count = [&](const std::string& s, std::size_t col) -> std::uint64_t {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
      throw DataError("report: bad integer '" + s + "'", line_no, col);
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    // A quoted field may span lines; quotes come in pairs once it is closed.
    std::string more;
    while (std::count(line.begin(), line.end(), '"') % 2 == 1 && std::getline(in, more)) {
      ++line_no;
      line += '\n' + more;
    }
    const auto f = detail::csv_split(line, line_no);
    if (f.size() != report_columns().size())
      throw DataError("report: expected " + std::to_string(report_columns().size()) + " fields",
                      line_no, f.size());
    ReportRow r;
    r.dataset = f[0];
    r.architecture = f[1];
    r.algorithm = f[2];
    r.seed = count(f[3], 4);
    {
      const auto [p, ec] = std::from_chars(f[4].data(), f[4].data() + f[4].size(), r.init_digest, 16);
      if (ec != std::errc{} || p != f[4].data() + f[4].size())
        throw DataError("report: bad digest '" + f[4] + "'", line_no, 5);
    }
    r.final_objective = num(f[5], 6);
    r.gradient_norm = num(f[6], 7);
    r.train_mse = num(f[7], 8);
    r.test_mse = num(f[8], 9);
    r.iterations = count(f[9], 10);
    r.cycles = count(f[10], 11);
    r.fallbacks = count(f[11], 12);
    r.stop_reason = f[12];
    r.elapsed_seconds = num(f[13], 14);
    if (!f[14].empty()) {
      std::size_t start = 0;
      while (true) {
        const auto pos = f[14].find(';', start);
        r.updates_per_layer.push_back(count(f[14].substr(start, pos - start), 15));
        if (pos == std::string::npos) break;
        start = pos + 1;
      }
    }
    r.error = f[15];
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<ReportRow> load_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_report_csv(in);
}

// ---------------------------------------------------------------- summary

inline void write_summary(std::ostream& out, const ExperimentReport& report) {
  char buf[512];
  out << "best of runs (lowest final objective per dataset/architecture/algorithm)\n";
  std::snprintf(buf, sizeof buf, "%-16s %-14s %-7s %5s %14s %14s %12s %10s %6s\n", "dataset",
                "architecture", "algo", "seed", "objective", "test_mse", "grad_norm", "seconds",
                "failed");
  out << buf;
  const auto best = best_of_runs(report.rows);
  for (const auto& b : best) {
    if (b.best) {
      std::snprintf(buf, sizeof buf, "%-16s %-14s %-7s %5llu %14.6e %14.6e %12.4e %10.2f %6zu\n",
                    b.dataset.c_str(), b.architecture.c_str(), b.algorithm.c_str(),
                    static_cast<unsigned long long>(b.best->seed), b.best->final_objective,
                    b.best->test_mse, b.best->gradient_norm, b.best->elapsed_seconds, b.failures);
    } else {
      std::snprintf(buf, sizeof buf, "%-16s %-14s %-7s %5s %14s %14s %12s %10s %6zu\n",
                    b.dataset.c_str(), b.architecture.c_str(), b.algorithm.c_str(), "-", "-", "-",
                    "-", "-", b.failures);
    }
    out << buf;
  }

  for (const auto& [a, b] : report.comparisons) {
    out << "\nwins/defeats/ties of " << a << " against " << b << " (5% rule, paired by seed)\n";
    std::snprintf(buf, sizeof buf, "%-16s %-14s %-16s %-16s %6s\n", "dataset", "architecture",
                  "objective", "test_mse", "pairs");
    out << buf;
    for (const auto& t : pair_tallies(report.rows, a, b)) {
      const std::string o = "[" + std::to_string(t.objective.wins) + ";" +
                            std::to_string(t.objective.defeats) + ";" +
                            std::to_string(t.objective.ties) + "]";
      const std::string m = "[" + std::to_string(t.test_mse.wins) + ";" +
                            std::to_string(t.test_mse.defeats) + ";" +
                            std::to_string(t.test_mse.ties) + "]";
      std::snprintf(buf, sizeof buf, "%-16s %-14s %-16s %-16s %6zu\n", t.dataset.c_str(),
                    t.architecture.c_str(), o.c_str(), m.c_str(), t.objective.compared());
      out << buf;
    }
  }

  if (report.depth_pair) {
    const auto& [deep, shallow] = *report.depth_pair;
    out << "\ndepth ratio: best objective on " << deep << " / best objective on " << shallow << "\n";
    for (const auto& d : depth_ratio(report.rows, deep, shallow)) {
      std::snprintf(buf, sizeof buf, "%-16s %-7s %s\n", d.dataset.c_str(), d.algorithm.c_str(),
                    d.ratio ? format_double(*d.ratio).c_str() : "absent");
      out << buf;
    }
  }

  out << "\nupdates per layer of the best run (layer 0 is the input-side block)\n";
  for (const auto& b : best) {
    if (!b.best) continue;
    out << b.dataset << ' ' << b.architecture << ' ' << b.algorithm << " |";
    for (std::size_t k = 0; k < b.best->updates_per_layer.size(); ++k) out << " L" << k;
    out << "\n" << std::string(b.dataset.size() + b.architecture.size() + b.algorithm.size() + 3, ' ')
        << '|';
    for (std::size_t k = 0; k < b.best->updates_per_layer.size(); ++k) {
      const std::string label = "L" + std::to_string(k);
      std::string v = std::to_string(b.best->updates_per_layer[k]);
      out << ' ' << v;
      if (v.size() < label.size()) out << std::string(label.size() - v.size(), ' ');
    }
    out << '\n';
  }
}

struct ReportFiles {
  std::filesystem::path table;
  std::filesystem::path summary;
};

/// Writes `runs.csv` and `summary.txt` into `dir`, creating it if needed.
inline ReportFiles emit_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create '" + dir.string() + "': " + ec.message());
  ReportFiles files{dir / "runs.csv", dir / "summary.txt"};
  {
    std::ofstream out(files.table);
    if (!out) throw DataError("cannot write '" + files.table.string() + "'");
    write_report_csv(out, report.rows);
    if (!out) throw DataError("write failed for '" + files.table.string() + "'");
  }
  {
    std::ofstream out(files.summary);
    if (!out) throw DataError("cannot write '" + files.summary.string() + "'");
    write_summary(out, report);
    if (!out) throw DataError("write failed for '" + files.summary.string() + "'");
  }
  return files;
}

}  // namespace bld
