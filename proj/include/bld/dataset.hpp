#pragma once

#include <span>
#include <string>

#include "bld/errors.hpp"
#include "bld/tensor.hpp"

namespace bld {

/// Samples as rows: features X (P x d) and targets Y (P x m).
struct Dataset {
  Matrix features;
  Matrix targets;
  std::string source;

  std::size_t size() const { return features.rows(); }
  std::size_t input_dim() const { return features.cols(); }
  std::size_t output_dim() const { return targets.cols(); }

  void validate() const {
    if (features.rows() != targets.rows())
      throw ShapeError("Dataset", features.rows(), features.cols(), targets.rows(),
                       targets.cols());
  }
};

/// The rows of one minibatch B_h, gathered contiguously.
struct Batch {
  Matrix inputs;
  Matrix targets;
  std::size_t size() const { return inputs.rows(); }
};

inline Batch gather_batch(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw PreconditionError("gather_batch: empty minibatch");
  return Batch{gather_rows(data.features, indices), gather_rows(data.targets, indices)};
}

inline Batch whole_batch(const Dataset& data) { return Batch{data.features, data.targets}; }

}  // namespace bld
