#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rpsm/tensor.hpp"

namespace rpsm {

using Rng = std::mt19937_64;

struct NamedParameter {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedParameter>;

/// Glorot-uniform samples in [-b, b], b = gain · sqrt(6 / (fan_in + fan_out)).
Tensor xavier_init(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain = 1.0);

/// Xavier gain for a layer feeding a ReLU (keeps activation variance
/// constant through the rectifier).
inline const double kReluGain = std::sqrt(2.0);

struct Conv2d {
  Tensor weight;  // out × in × k × k
  Tensor bias;    // out
  std::size_t stride = 1;
  std::size_t pad = 0;

  static Conv2d create(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                       std::size_t stride, std::size_t pad, Rng& rng, double gain = 1.0);

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t kernel() const { return weight.dim(2); }
  std::size_t output_extent(std::size_t in) const;

  Tensor forward(const Tensor& input) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct Linear {
  Tensor weight;  // out × in
  Tensor bias;    // out

  static Linear create(std::size_t in, std::size_t out, Rng& rng);

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  Tensor forward(const Tensor& input) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct LstmState {
  Tensor h;
  Tensor c;
};

/// Single LSTM layer without peephole connections. The packed gate blocks
/// are ordered (input, forget, candidate, output) in every 4·hidden extent.
struct LstmCell {
  Tensor w_ih;  // 4·hidden × input
  Tensor w_hh;  // 4·hidden × hidden
  Tensor bias;  // 4·hidden

  /// Xavier weights, forget-gate bias 1, other biases 0.
  static LstmCell create(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);

  std::size_t input_dim() const { return w_ih.dim(1); }
  std::size_t hidden_dim() const { return w_hh.dim(1); }

  LstmState zero_state(std::size_t batch = 1) const;

  /// i, f, o = σ(·), g = tanh(·); c' = f⊙c + i⊙g; h' = o⊙tanh(c').
  LstmState step(const Tensor& x, const LstmState& prev) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

std::size_t scalar_count(const ParameterList& params);

}  // namespace rpsm
