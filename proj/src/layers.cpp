#include "rpsm/layers.hpp"

#include <algorithm>
#include <cmath>

#include "rpsm/functional.hpp"
#include "rpsm/ops.hpp"

namespace rpsm {

Tensor xavier_init(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain) {
  if (fan_in == 0 || fan_out == 0) throw std::invalid_argument("xavier_init: fans must be positive");
  if (!(gain > 0.0)) throw std::invalid_argument("xavier_init: gain must be positive");
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), true);
}

Conv2d Conv2d::create(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                      std::size_t stride, std::size_t pad, Rng& rng, double gain) {
  Conv2d layer;
  layer.weight = xavier_init({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel,
                             out_channels * kernel * kernel, rng, gain);
  layer.bias = Tensor::zeros({out_channels}, true);
  layer.stride = stride;
  layer.pad = pad;
  return layer;
}

std::size_t Conv2d::output_extent(std::size_t in) const {
  // Goes through the same check as the forward pass.
  return window_output_extent(in, kernel(), stride, pad);
}

Tensor Conv2d::forward(const Tensor& input) const {
  if (input.rank() == 4 && input.dim(1) != in_channels()) {
    throw ShapeError("conv layer expects " + std::to_string(in_channels()) + " input channels, got " +
                     shape_string(input.shape()));
  }
  return conv2d(input, weight, bias, stride, pad);
}

void Conv2d::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Linear Linear::create(std::size_t in, std::size_t out, Rng& rng) {
  Linear layer;
  layer.weight = xavier_init({out, in}, in, out, rng);
  layer.bias = Tensor::zeros({out}, true);
  return layer;
}

Tensor Linear::forward(const Tensor& input) const { return linear(input, weight, bias); }

void Linear::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LstmCell LstmCell::create(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  LstmCell cell;
  cell.w_ih = xavier_init({4 * hidden_dim, input_dim}, input_dim, 4 * hidden_dim, rng);
  cell.w_hh = xavier_init({4 * hidden_dim, hidden_dim}, hidden_dim, 4 * hidden_dim, rng);
  std::vector<double> bias(4 * hidden_dim, 0.0);
  std::fill(bias.begin() + hidden_dim, bias.begin() + 2 * hidden_dim, 1.0);
  cell.bias = Tensor::from({4 * hidden_dim}, std::move(bias), true);
  return cell;
}

LstmState LstmCell::zero_state(std::size_t batch) const {
  return {Tensor::zeros({batch, hidden_dim()}), Tensor::zeros({batch, hidden_dim()})};
}

LstmState LstmCell::step(const Tensor& x, const LstmState& prev) const {
  const std::size_t hidden = hidden_dim();
  if (x.rank() != 2 || x.dim(1) != input_dim() || prev.h.shape() != Shape{x.dim(0), hidden} ||
      prev.c.shape() != prev.h.shape()) {
    throw ShapeError("lstm step: input " + shape_string(x.shape()) + ", h " + shape_string(prev.h.shape()) +
                     ", c " + shape_string(prev.c.shape()) + " do not fit a cell with input " +
                     std::to_string(input_dim()) + " and hidden " + std::to_string(hidden));
  }
  const Tensor gates = add(linear(x, w_ih, bias), linear(prev.h, w_hh));
  const Tensor input_gate = sigmoid(slice(gates, 1, 0, hidden));
  const Tensor forget_gate = sigmoid(slice(gates, 1, hidden, hidden));
  const Tensor candidate = tanh(slice(gates, 1, 2 * hidden, hidden));
  const Tensor output_gate = sigmoid(slice(gates, 1, 3 * hidden, hidden));

  Tensor c = add(mul(forget_gate, prev.c), mul(input_gate, candidate));
  Tensor h = mul(output_gate, tanh(c));
  return {std::move(h), std::move(c)};
}

void LstmCell::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".w_ih", w_ih});
  out.push_back({prefix + ".w_hh", w_hh});
  out.push_back({prefix + ".bias", bias});
}

std::size_t scalar_count(const ParameterList& params) {
  std::size_t total = 0;
  for (const auto& p : params) total += p.tensor.numel();
  return total;
}

}  // namespace rpsm
