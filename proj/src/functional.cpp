#include "rpsm/functional.hpp"

#include <algorithm>
#include <memory>

#include <Eigen/Core>

namespace rpsm {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;
using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

// Upper bound on the im2col scratch buffer, in values. Large inputs are
// processed in column tiles so a 368×368 frame does not need gigabytes.
constexpr std::size_t kColumnBudget = std::size_t{1} << 22;

// Perturbation applied by the gradient-check negative control.
constexpr double kFaultScale = 1.01;

struct ConvGeometry {
  std::size_t n, c, h, w;
  std::size_t o, kh, kw;
  std::size_t stride, pad;
  std::size_t oh, ow;

  std::size_t patch() const { return c * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

// cols[r, q] for r over (channel, ky, kx) and q over output positions
// [first, first + count).
void im2col(const double* image, const ConvGeometry& g, std::size_t first, std::size_t count,
            double* cols) {
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    const double* plane = image + ch * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = cols + ((ch * g.kh + ky) * g.kw + kx) * count;
        std::size_t oy = first / g.ow, ox = first % g.ow;
        for (std::size_t q = 0; q < count; ++q) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
          const bool inside = y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(g.h) &&
                              x < static_cast<std::ptrdiff_t>(g.w);
          row[q] = inside ? plane[y * static_cast<std::ptrdiff_t>(g.w) + x] : 0.0;
          if (++ox == g.ow) {
            ox = 0;
            ++oy;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, std::size_t first, std::size_t count,
                double* image) {
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    double* plane = image + ch * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = cols + ((ch * g.kh + ky) * g.kw + kx) * count;
        std::size_t oy = first / g.ow, ox = first % g.ow;
        for (std::size_t q = 0; q < count; ++q) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
          if (y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(g.h) && x < static_cast<std::ptrdiff_t>(g.w)) {
            plane[y * static_cast<std::ptrdiff_t>(g.w) + x] += row[q];
          }
          if (++ox == g.ow) {
            ox = 0;
            ++oy;
          }
        }
      }
    }
  }
}

std::size_t tile_width(const ConvGeometry& g) {
  return std::clamp<std::size_t>(kColumnBudget / g.patch(), 1, g.positions());
}

}  // namespace

std::size_t window_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0 || kernel == 0) throw ShapeError("window kernel and stride must be positive");
  if (in + 2 * pad < kernel) {
    throw ShapeError("window of " + std::to_string(kernel) + " does not fit extent " + std::to_string(in) +
                     " with padding " + std::to_string(pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  if (input.rank() != 4 || weight.rank() != 4 || bias.rank() != 1 || input.dim(1) != weight.dim(1) ||
      bias.dim(0) != weight.dim(0)) {
    throw ShapeError("conv2d: input " + shape_string(input.shape()) + ", weight " +
                     shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()) +
                     " are inconsistent");
  }
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2),
                 weight.dim(3), stride, pad, 0, 0};
  g.oh = window_output_extent(g.h, g.kh, stride, pad);
  g.ow = window_output_extent(g.w, g.kw, stride, pad);

  const std::size_t positions = g.positions();
  const std::size_t tile = tile_width(g);
  std::vector<double> out(g.n * g.o * positions);
  std::vector<double> cols(g.patch() * tile);
  ConstMap w(weight.data().data(), g.o, g.patch());
  Eigen::Map<const Eigen::VectorXd> b(bias.data().data(), g.o);
  const double* x = input.data().data();

  for (std::size_t n = 0; n < g.n; ++n) {
    double* dst = out.data() + n * g.o * positions;
    for (std::size_t first = 0; first < positions; first += tile) {
      const std::size_t count = std::min(tile, positions - first);
      im2col(x + n * g.c * g.h * g.w, g, first, count, cols.data());
      StridedMap block(dst + first, g.o, count, Eigen::OuterStride<>(positions));
      block.noalias() = w * ConstMap(cols.data(), g.patch(), count);
      block.colwise() += b;
    }
  }

  return Tensor::make_result(
      "conv2d", {g.n, g.o, g.oh, g.ow}, std::move(out), {input, weight, bias},
      [input, weight, bias, g](std::span<const double> grad) mutable {
        const std::size_t positions = g.positions();
        const std::size_t tile = tile_width(g);
        std::vector<double> cols(g.patch() * tile);
        ConstMap w(weight.data().data(), g.o, g.patch());
        const double* x = input.data().data();
        const bool need_x = input.requires_grad();
        const bool need_w = weight.requires_grad();
        double* dx = need_x ? input.grad_buffer().data() : nullptr;
        RowMatrix dw = RowMatrix::Zero(need_w ? g.o : 0, need_w ? g.patch() : 0);

        for (std::size_t n = 0; n < g.n; ++n) {
          const double* dy = grad.data() + n * g.o * positions;
          for (std::size_t first = 0; first < positions; first += tile) {
            const std::size_t count = std::min(tile, positions - first);
            ConstStridedMap dblock(dy + first, g.o, count, Eigen::OuterStride<>(positions));
            if (need_w) {
              im2col(x + n * g.c * g.h * g.w, g, first, count, cols.data());
              dw.noalias() += dblock * ConstMap(cols.data(), g.patch(), count).transpose();
            }
            if (need_x) {
              Map(cols.data(), g.patch(), count).noalias() = w.transpose() * dblock;
              col2im_add(cols.data(), g, first, count, dx + n * g.c * g.h * g.w);
            }
          }
        }
        if (need_w) {
          if (debug::backward_is_faulty("conv2d")) dw *= kFaultScale;
          Map(weight.grad_buffer().data(), g.o, g.patch()) += dw;
        }
        if (bias.requires_grad()) {
          auto db = bias.grad_buffer();
          for (std::size_t n = 0; n < g.n; ++n) {
            for (std::size_t oc = 0; oc < g.o; ++oc) {
              const double* row = grad.data() + (n * g.o + oc) * positions;
              double acc = 0.0;
              for (std::size_t p = 0; p < positions; ++p) acc += row[p];
              db[oc] += acc;
            }
          }
        }
      });
}

Tensor maxpool2d(const Tensor& input, std::size_t kernel, std::size_t stride) {
  if (input.rank() != 4) throw ShapeError("maxpool2d: expected N×C×H×W, got " + shape_string(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < kernel || w < kernel) {
    throw ShapeError("maxpool2d: window " + std::to_string(kernel) + " larger than input " +
                     shape_string(input.shape()));
  }
  const std::size_t oh = window_output_extent(h, kernel, stride, 0);
  const std::size_t ow = window_output_extent(w, kernel, stride, 0);

  const double* x = input.data().data();
  std::vector<double> out(n * c * oh * ow);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = x + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (oy * stride) * w + ox * stride;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t idx = (oy * stride + ky) * w + ox * stride + kx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = src[best];
        (*argmax)[o] = plane * h * w + best;
      }
    }
  }
  if (debug::tracing_branches()) {
    for (std::size_t a : *argmax) debug::record_branch(a);
  }
  return Tensor::make_result("maxpool2d", {n, c, oh, ow}, std::move(out), {input},
                             [input, argmax](std::span<const double> grad) mutable {
                               auto gx = input.grad_buffer();
                               for (std::size_t o = 0; o < grad.size(); ++o) gx[(*argmax)[o]] += grad[o];
                             });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || input.dim(1) != weight.dim(1) ||
      (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0)))) {
    throw ShapeError("linear: input " + shape_string(input.shape()) + " and weight " +
                     shape_string(weight.shape()) + (bias.defined() ? " and bias " + shape_string(bias.shape()) : "") +
                     " are inconsistent");
  }
  const std::size_t n = input.dim(0), in = input.dim(1), out_dim = weight.dim(0);
  std::vector<double> out(n * out_dim);
  Map y(out.data(), n, out_dim);
  y.noalias() = ConstMap(input.data().data(), n, in) * ConstMap(weight.data().data(), out_dim, in).transpose();
  if (bias.defined()) y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), out_dim);

  return Tensor::make_result(
      "linear", {n, out_dim}, std::move(out), {input, weight, bias},
      [input, weight, bias, n, in, out_dim](std::span<const double> grad) mutable {
        ConstMap dy(grad.data(), n, out_dim);
        if (input.requires_grad()) {
          Map(input.grad_buffer().data(), n, in).noalias() += dy * ConstMap(weight.data().data(), out_dim, in);
        }
        if (weight.requires_grad()) {
          RowMatrix dw = dy.transpose() * ConstMap(input.data().data(), n, in);
          if (debug::backward_is_faulty("linear")) dw *= kFaultScale;
          Map(weight.grad_buffer().data(), out_dim, in) += dw;
        }
        if (bias.defined() && bias.requires_grad()) {
          // colwise().sum() peels to the buffer's alignment, so its result depends on the address
          Eigen::RowVectorXd db = Eigen::RowVectorXd::Zero(out_dim);
          for (std::size_t r = 0; r < n; ++r) db += dy.row(r);
          Eigen::Map<Eigen::RowVectorXd>(bias.grad_buffer().data(), out_dim) += db;
        }
      });
}

}  // namespace rpsm
