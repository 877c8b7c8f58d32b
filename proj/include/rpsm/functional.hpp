#pragma once

#include <cstddef>

#include "rpsm/tensor.hpp"

namespace rpsm {

/// Output extent of a strided window over `in` samples with symmetric
/// padding. Throws when the window does not fit.
std::size_t window_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

/// 2D cross-correlation. input N×C×H×W, weight O×C×kh×kw, bias O.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad);

/// Max pooling with a k×k window (no padding, floor mode). The gradient of
/// each window goes to its first maximal element in row-major order.
Tensor maxpool2d(const Tensor& input, std::size_t kernel, std::size_t stride);

/// input N×in, weight out×in, bias out → N×out. An undefined bias is skipped.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias = Tensor());

}  // namespace rpsm
