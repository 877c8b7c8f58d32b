#include "rpsm/ops.hpp"

#include <cmath>

#include <Eigen/Core>

namespace rpsm {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

enum class Broadcast { none, left_scalar, right_scalar };

Broadcast check_elementwise(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (b.numel() == 1) return Broadcast::right_scalar;
  if (a.numel() == 1) return Broadcast::left_scalar;
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                   shape_string(b.shape()));
}

// Generic binary elementwise op. `fwd(x, y)` computes the value, `dx(x, y)`
// and `dy(x, y)` the local partials.
template <typename Fwd, typename Dx, typename Dy>
Tensor binary(const char* kind, const Tensor& a, const Tensor& b, Fwd fwd, Dx dx, Dy dy) {
  const auto mode = check_elementwise(kind, a, b);
  const Shape out_shape = mode == Broadcast::left_scalar ? b.shape() : a.shape();
  const std::size_t n = numel(out_shape);
  auto av = a.data();
  auto bv = b.data();
  auto ai = [&](std::size_t i) { return mode == Broadcast::left_scalar ? av[0] : av[i]; };
  auto bi = [&](std::size_t i) { return mode == Broadcast::right_scalar ? bv[0] : bv[i]; };

  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ai(i), bi(i));

  return Tensor::make_result(kind, out_shape, std::move(out), {a, b},
                             [a, b, mode, n, dx, dy](std::span<const double> g) mutable {
                               auto av = a.data();
                               auto bv = b.data();
                               const bool ls = mode == Broadcast::left_scalar;
                               const bool rs = mode == Broadcast::right_scalar;
                               if (a.requires_grad()) {
                                 auto ga = a.grad_buffer();
                                 for (std::size_t i = 0; i < n; ++i) {
                                   ga[ls ? 0 : i] += g[i] * dx(av[ls ? 0 : i], bv[rs ? 0 : i]);
                                 }
                               }
                               if (b.requires_grad()) {
                                 auto gb = b.grad_buffer();
                                 for (std::size_t i = 0; i < n; ++i) {
                                   gb[rs ? 0 : i] += g[i] * dy(av[ls ? 0 : i], bv[rs ? 0 : i]);
                                 }
                               }
                             });
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* kind, const Tensor& t, Fwd fwd, Deriv deriv) {
  auto in = t.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  auto saved = grad_enabled() && t.requires_grad() ? std::make_shared<std::vector<double>>(out)
                                                   : std::shared_ptr<std::vector<double>>();
  return Tensor::make_result(kind, t.shape(), std::move(out), {t},
                             [t, saved, deriv](std::span<const double> g) mutable {
                               auto x = t.data();
                               auto gt = t.grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 gt[i] += g[i] * deriv(x[i], (*saved)[i]);
                               }
                             });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible operands " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);

  return Tensor::make_result("matmul", {m, n}, std::move(out), {a, b},
                             [a, b, m, k, n](std::span<const double> g) mutable {
                               ConstMap dc(g.data(), m, n);
                               if (a.requires_grad()) {
                                 Map(a.grad_buffer().data(), m, k).noalias() +=
                                     dc * ConstMap(b.data().data(), k, n).transpose();
                               }
                               if (b.requires_grad()) {
                                 Map(b.grad_buffer().data(), k, n).noalias() +=
                                     ConstMap(a.data().data(), m, k).transpose() * dc;
                               }
                             });
}

Tensor concat(const std::vector<Tensor>& tensors, std::size_t axis) {
  if (tensors.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = tensors.front().shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : tensors) {
    const auto& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw ShapeError("concat: ragged extents " + shape_string(first) + " vs " + shape_string(s) +
                       " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }

  // View every tensor as [outer, axis * inner] and interleave the rows.
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_row = out_shape[axis] * inner;

  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    offsets.push_back(offset);
    const std::size_t row = t.dim(axis) * inner;
    auto src = t.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + o * row, row, out.begin() + o * out_row + offset);
    }
    offset += row;
  }

  return Tensor::make_result("concat", out_shape, std::move(out), tensors,
                             [tensors, offsets, outer, inner, out_row, axis](std::span<const double> g) mutable {
                               for (std::size_t i = 0; i < tensors.size(); ++i) {
                                 auto& t = tensors[i];
                                 if (!t.requires_grad()) continue;
                                 const std::size_t row = t.dim(axis) * inner;
                                 auto gt = t.grad_buffer();
                                 for (std::size_t o = 0; o < outer; ++o) {
                                   for (std::size_t j = 0; j < row; ++j) {
                                     gt[o * row + j] += g[o * out_row + offsets[i] + j];
                                   }
                                 }
                               }
                             });
}

Tensor slice(const Tensor& t, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = t.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") on axis " + std::to_string(axis) + " invalid for " + shape_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t in_row = s[axis] * inner;
  const std::size_t out_row = length * inner;
  Shape out_shape = s;
  out_shape[axis] = length;

  std::vector<double> out(outer * out_row);
  auto src = t.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(src.begin() + o * in_row + start * inner, out_row, out.begin() + o * out_row);
  }
  return Tensor::make_result("slice", out_shape, std::move(out), {t},
                             [t, outer, in_row, out_row, start, inner](std::span<const double> g) mutable {
                               auto gt = t.grad_buffer();
                               for (std::size_t o = 0; o < outer; ++o) {
                                 for (std::size_t j = 0; j < out_row; ++j) {
                                   gt[o * in_row + start * inner + j] += g[o * out_row + j];
                                 }
                               }
                             });
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (numel(shape) != t.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(t.shape()) + " as " + shape_string(shape));
  }
  std::vector<double> out(t.data().begin(), t.data().end());
  return Tensor::make_result("reshape", std::move(shape), std::move(out), {t},
                             [t](std::span<const double> g) mutable {
                               auto gt = t.grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
                             });
}

Tensor sum(const Tensor& t) {
  double total = 0.0;
  for (double v : t.data()) total += v;
  return Tensor::make_result("sum", {1}, {total}, {t}, [t](std::span<const double> g) mutable {
    auto gt = t.grad_buffer();
    for (auto& v : gt) v += g[0];
  });
}

Tensor relu(const Tensor& t) {
  if (debug::tracing_branches()) {
    for (double x : t.data()) debug::record_branch(x > 0.0);
  }
  return unary(
      "relu", t, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& t) {
  return unary(
      "sigmoid", t, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& t) {
  return unary(
      "tanh", t, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

}  // namespace rpsm
