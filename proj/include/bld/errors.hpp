#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bld {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform. Carries both shapes.
class ShapeError : public Error {
 public:
  ShapeError(const std::string& op, std::size_t lhs_rows, std::size_t lhs_cols,
             std::size_t rhs_rows, std::size_t rhs_cols)
      : Error(op + ": shape mismatch " + std::to_string(lhs_rows) + "x" +
              std::to_string(lhs_cols) + " vs " + std::to_string(rhs_rows) +
              "x" + std::to_string(rhs_cols)),
        lhs_rows_(lhs_rows),
        lhs_cols_(lhs_cols),
        rhs_rows_(rhs_rows),
        rhs_cols_(rhs_cols) {}

  std::size_t lhs_rows() const { return lhs_rows_; }
  std::size_t lhs_cols() const { return lhs_cols_; }
  std::size_t rhs_rows() const { return rhs_rows_; }
  std::size_t rhs_cols() const { return rhs_cols_; }

 private:
  std::size_t lhs_rows_, lhs_cols_, rhs_rows_, rhs_cols_;
};

/// A forward cache was used after a weight block it depends on changed.
class StaleCacheError : public Error {
 public:
  StaleCacheError(std::size_t layer, const std::string& what)
      : Error("stale forward cache at layer " + std::to_string(layer) + ": " +
              what),
        layer_(layer) {}
  std::size_t layer() const { return layer_; }

 private:
  std::size_t layer_;
};

/// Caller violated a documented precondition (bad index, empty batch, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Backtracking ran out of halvings; `last_step()` is the final trial step.
class LinesearchError : public Error {
 public:
  LinesearchError(double last_step, std::size_t halvings)
      : Error("armijo linesearch: no sufficient decrease after " +
              std::to_string(halvings) + " halvings (last step " +
              std::to_string(last_step) + ")"),
        last_step_(last_step) {}
  double last_step() const { return last_step_; }

 private:
  double last_step_;
};

/// Linear system is not positive definite.
class SingularSystemError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Row and column are 1-based file coordinates.
class DataError : public Error {
 public:
  DataError(const std::string& msg, std::size_t row, std::size_t column)
      : Error(msg + " (row " + std::to_string(row) + ", column " +
              std::to_string(column) + ")"),
        row_(row),
        column_(column) {}
  explicit DataError(const std::string& msg) : Error(msg) {}

  std::size_t row() const { return row_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t row_ = 0;
  std::size_t column_ = 0;
};

/// Invalid experiment configuration or architecture string.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace bld
