#pragma once

// Fully connected feedforward networks without bias units: sigmoid hidden
// layers and a linear output layer. Block k (0-based) is the weight matrix of
// shape N_k x N_{k+1} that maps layer k's outputs to layer k+1's
// pre-activations, with N_0 the input dimension and N_L the output dimension.

#include <algorithm>
#include <atomic>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bld/errors.hpp"
#include "bld/rng.hpp"
#include "bld/tensor.hpp"

namespace bld {

enum class Activation { Sigmoid, Linear };

inline double sigmoid(double a) {
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

inline double sigmoid_prime(double a) {
  const double g = sigmoid(a);
  return g * (1.0 - g);
}

inline double activate(Activation act, double a) {
  return act == Activation::Sigmoid ? sigmoid(a) : a;
}

/// Derivative expressed through the activation's output value.
inline double activation_slope_from_output(Activation act, double z) {
  return act == Activation::Sigmoid ? z * (1.0 - z) : 1.0;
}

struct Architecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> widths;  // N_1..N_L; the last entry is the output dim
  Activation hidden = Activation::Sigmoid;

  std::size_t layers() const { return widths.size(); }
  std::size_t output_dim() const { return widths.empty() ? 0 : widths.back(); }
  std::size_t fan_in(std::size_t block) const {
    return block == 0 ? input_dim : widths[block - 1];
  }
  std::size_t variable_count() const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < layers(); ++k) n += fan_in(k) * widths[k];
    return n;
  }

  void validate() const {
    if (input_dim == 0) throw ConfigError("architecture: input dimension must be positive");
    if (widths.empty()) throw ConfigError("architecture: at least one layer required");
    for (std::size_t w : widths)
      if (w == 0) throw ConfigError("architecture: layer widths must be positive");
  }

  /// Hidden-layer part in the "[LxN]" / "[a,b,c]" notation.
  std::string hidden_string() const {
    const std::size_t hidden = layers() - 1;
    if (hidden == 0) return "[]";
    const bool uniform = std::all_of(widths.begin(), widths.end() - 1,
                                     [&](std::size_t w) { return w == widths.front(); });
    if (uniform && hidden > 1)
      return "[" + std::to_string(hidden) + "x" + std::to_string(widths.front()) + "]";
    std::string s = "[";
    for (std::size_t i = 0; i < hidden; ++i) {
      if (i) s += ",";
      s += std::to_string(widths[i]);
    }
    return s + "]";
  }

  std::string to_string() const {
    return std::to_string(input_dim) + "-" + hidden_string() + "-" +
           std::to_string(output_dim());
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

namespace detail {

inline std::size_t parse_count(std::string_view s, std::string_view whole) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
    throw ConfigError("architecture: bad number '" + std::string(s) + "' in '" +
                      std::string(whole) + "'");
  std::size_t v = 0;
  for (char c : s) v = v * 10 + static_cast<std::size_t>(c - '0');
  if (v == 0) throw ConfigError("architecture: zero width in '" + std::string(whole) + "'");
  return v;
}

inline std::string strip_spaces(std::string_view s) {
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) out += c;
  return out;
}

}  // namespace detail

/// Parses the hidden part: "[10x50]", "[200,50,200]", "[]" or "10x50".
inline std::vector<std::size_t> parse_hidden_layers(std::string_view text) {
  std::string s = detail::strip_spaces(text);
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
  std::vector<std::size_t> widths;
  if (s.empty()) return widths;
  if (auto x = s.find_first_of("xX"); x != std::string::npos) {
    const std::size_t count = detail::parse_count(std::string_view(s).substr(0, x), text);
    const std::size_t width = detail::parse_count(std::string_view(s).substr(x + 1), text);
    widths.assign(count, width);
    return widths;
  }
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = s.find(',', start);
    const std::size_t end = comma == std::string::npos ? s.size() : comma;
    widths.push_back(detail::parse_count(std::string_view(s).substr(start, end - start), text));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return widths;
}

/// Parses "d-[LxN]-m", "d-[a,b,c]-m" or a plain dash list "d-a-b-m".
inline Architecture parse_architecture(std::string_view text) {
  const std::string s = detail::strip_spaces(text);
  Architecture arch;
  const auto open = s.find('[');
  if (open != std::string::npos) {
    const auto close = s.find(']', open);
    if (close == std::string::npos || open == 0 || s[open - 1] != '-' ||
        close + 1 >= s.size() || s[close + 1] != '-')
      throw ConfigError("architecture: expected 'd-[...]-m', got '" + std::string(text) + "'");
    arch.input_dim = detail::parse_count(std::string_view(s).substr(0, open - 1), text);
    arch.widths = parse_hidden_layers(std::string_view(s).substr(open, close - open + 1));
    arch.widths.push_back(detail::parse_count(std::string_view(s).substr(close + 2), text));
  } else {
    std::vector<std::size_t> dims;
    std::size_t start = 0;
    while (true) {
      const std::size_t dash = s.find('-', start);
      const std::size_t end = dash == std::string::npos ? s.size() : dash;
      dims.push_back(detail::parse_count(std::string_view(s).substr(start, end - start), text));
      if (dash == std::string::npos) break;
      start = dash + 1;
    }
    if (dims.size() < 2)
      throw ConfigError("architecture: need at least input and output dims in '" +
                        std::string(text) + "'");
    arch.input_dim = dims.front();
    arch.widths.assign(dims.begin() + 1, dims.end());
  }
  arch.validate();
  return arch;
}

namespace detail {
inline std::uint64_t next_stamp() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

/// Ordered weight blocks w_1..w_L. Every write to a block gives it a fresh
/// stamp; forward caches record the stamps they were computed from.
class NetworkWeights {
 public:
  NetworkWeights() = default;
  explicit NetworkWeights(std::vector<Matrix> blocks,
                          Activation hidden = Activation::Sigmoid)
      : blocks_(std::move(blocks)), hidden_(hidden) {
    if (blocks_.empty()) throw PreconditionError("NetworkWeights: no blocks");
    for (std::size_t k = 1; k < blocks_.size(); ++k)
      if (blocks_[k - 1].cols() != blocks_[k].rows())
        throw ShapeError("NetworkWeights block " + std::to_string(k), blocks_[k - 1].rows(),
                         blocks_[k - 1].cols(), blocks_[k].rows(), blocks_[k].cols());
    stamps_.resize(blocks_.size());
    for (auto& s : stamps_) s = detail::next_stamp();
  }

  std::size_t layers() const { return blocks_.size(); }
  Activation hidden_activation() const { return hidden_; }
  std::size_t input_dim() const { return blocks_.front().rows(); }
  std::size_t output_dim() const { return blocks_.back().cols(); }

  const Matrix& block(std::size_t k) const { return blocks_.at(k); }
  std::span<const Matrix> blocks() const { return blocks_; }
  std::uint64_t stamp(std::size_t k) const { return stamps_.at(k); }

  void set_block(std::size_t k, Matrix value) {
    const Matrix& cur = blocks_.at(k);
    if (!cur.same_shape(value))
      throw ShapeError("set_block", cur.rows(), cur.cols(), value.rows(), value.cols());
    blocks_[k] = std::move(value);
    stamps_[k] = detail::next_stamp();
  }

  /// w_k += alpha * direction
  void step_block(std::size_t k, double alpha, const Matrix& direction) {
    blocks_.at(k).axpy(alpha, direction);
    stamps_[k] = detail::next_stamp();
  }

  Architecture architecture() const {
    Architecture a;
    a.input_dim = input_dim();
    a.hidden = hidden_;
    for (const auto& b : blocks_) a.widths.push_back(b.cols());
    return a;
  }

  std::size_t variable_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += b.size();
    return n;
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& b : blocks_) s += bld::squared_norm(b);
    return s;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(variable_count());
    for (const auto& b : blocks_) out.insert(out.end(), b.values().begin(), b.values().end());
    return out;
  }

  void assign_flat(std::span<const double> flat) {
    if (flat.size() != variable_count())
      throw ShapeError("assign_flat", variable_count(), 1, flat.size(), 1);
    std::size_t off = 0;
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
      auto dst = blocks_[k].values();
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), dst.size(), dst.begin());
      off += dst.size();
      stamps_[k] = detail::next_stamp();
    }
  }

  /// FNV-1a over the bit patterns of all entries, in block order.
  std::uint64_t digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffU;
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& b : blocks_) {
      mix(b.rows());
      mix(b.cols());
      for (double v : b.values()) mix(std::bit_cast<std::uint64_t>(v));
    }
    return h;
  }

  friend bool operator==(const NetworkWeights& a, const NetworkWeights& b) {
    return a.hidden_ == b.hidden_ && a.blocks_ == b.blocks_;
  }

 private:
  std::vector<Matrix> blocks_;
  std::vector<std::uint64_t> stamps_;
  Activation hidden_ = Activation::Sigmoid;
};

/// Entries of block k uniform in [-g/sqrt(N_k), g/sqrt(N_k)], N_k the fan-in
/// and g the gain (1 by default).
inline NetworkWeights init_weights(const Architecture& arch, SeededRng& rng, double gain = 1.0) {
  arch.validate();
  if (!(gain > 0.0)) throw PreconditionError("init_weights: gain must be positive");
  std::vector<Matrix> blocks;
  for (std::size_t k = 0; k < arch.layers(); ++k) {
    const double bound = gain / std::sqrt(static_cast<double>(arch.fan_in(k)));
    Matrix w(arch.fan_in(k), arch.widths[k]);
    for (double& v : w.values()) v = rng.uniform(-bound, bound);
    blocks.push_back(std::move(w));
  }
  return NetworkWeights(std::move(blocks), arch.hidden);
}

inline NetworkWeights init_weights(const Architecture& arch, std::uint64_t seed, double gain = 1.0) {
  SeededRng rng(seed);
  return init_weights(arch, rng, gain);
}

/// Gain 4 sqrt(3): weight variance 16 / fan-in, which offsets the sigmoid's
/// slope of 1/4 at the origin so activations keep their spread with depth.
inline constexpr double sigmoid_variance_preserving_gain = 6.928203230275509;

class ForwardCache;
inline ForwardCache forward(const NetworkWeights& w, const Matrix& inputs);
inline const Matrix& forward_partial(const NetworkWeights& w, ForwardCache& cache,
                                     std::size_t from_layer);

/// Per-layer pre-activations and outputs for one input batch.
///
/// layer_input(k) is z_k (z_0 is the input batch); pre_activation(k) is
/// z_k * w_k. The network output is the last pre-activation (linear output).
class ForwardCache {
 public:
  std::size_t layers() const { return pre_.size(); }
  std::size_t batch_size() const { return z_.empty() ? 0 : z_.front().rows(); }

  const Matrix& input() const { return z_.front(); }
  const Matrix& layer_input(std::size_t k) const { return z_.at(k); }
  const Matrix& pre_activation(std::size_t k) const { return pre_.at(k); }
  const Matrix& outputs() const { return pre_.back(); }
  Activation hidden_activation() const { return hidden_; }

  std::uint64_t stamp(std::size_t k) const { return stamps_.at(k); }

  /// True when layers [0, upto) were computed from the current blocks.
  bool current_below(const NetworkWeights& w, std::size_t upto) const {
    if (w.layers() != layers()) return false;
    for (std::size_t j = 0; j < upto; ++j)
      if (stamps_[j] != w.stamp(j)) return false;
    return true;
  }

  /// Number of single-layer evaluations performed on this cache so far.
  std::size_t layer_evaluations() const { return layer_evaluations_; }

 private:
  friend ForwardCache forward(const NetworkWeights&, const Matrix&);
  friend const Matrix& forward_partial(const NetworkWeights&, ForwardCache&, std::size_t);

  void recompute_from(const NetworkWeights& w, std::size_t from) {
    for (std::size_t k = from; k < w.layers(); ++k) {
      pre_[k] = matmul(z_[k], w.block(k));
      stamps_[k] = w.stamp(k);
      if (k + 1 < w.layers()) {
        Matrix z = pre_[k];
        for (double& v : z.values()) v = activate(hidden_, v);
        z_[k + 1] = std::move(z);
      }
      ++layer_evaluations_;
    }
  }

  std::vector<Matrix> z_;    // z_0..z_{L-1}
  std::vector<Matrix> pre_;  // a_0..a_{L-1}
  std::vector<std::uint64_t> stamps_;
  Activation hidden_ = Activation::Sigmoid;
  std::size_t layer_evaluations_ = 0;
};

inline ForwardCache forward(const NetworkWeights& w, const Matrix& inputs) {
  if (inputs.cols() != w.input_dim())
    throw ShapeError("forward", inputs.rows(), inputs.cols(), w.block(0).rows(),
                     w.block(0).cols());
  ForwardCache c;
  c.hidden_ = w.hidden_activation();
  c.z_.resize(w.layers());
  c.pre_.resize(w.layers());
  c.stamps_.assign(w.layers(), 0);
  c.z_[0] = inputs;
  c.recompute_from(w, 0);
  return c;
}

/// Recomputes layers >= from_layer, reusing cached outputs below it.
inline const Matrix& forward_partial(const NetworkWeights& w, ForwardCache& cache,
                                     std::size_t from_layer) {
  if (cache.layers() != w.layers())
    throw StaleCacheError(0, "cache has " + std::to_string(cache.layers()) +
                                 " layers, weights have " + std::to_string(w.layers()));
  if (from_layer >= w.layers())
    throw PreconditionError("forward_partial: layer " + std::to_string(from_layer) +
                            " out of range");
  for (std::size_t j = 0; j < from_layer; ++j)
    if (cache.stamps_[j] != w.stamp(j))
      throw StaleCacheError(j, "block changed since the cache was computed");
  cache.hidden_ = w.hidden_activation();
  cache.recompute_from(w, from_layer);
  return cache.outputs();
}

}  // namespace bld
