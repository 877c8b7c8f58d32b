#pragma once

#include <vector>

#include "rpsm/tensor.hpp"

namespace rpsm {

// Elementwise arithmetic. Shapes must match exactly, or one side must hold a
// single element, which is broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// Product of an m×k and a k×n matrix.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor concat(const std::vector<Tensor>& tensors, std::size_t axis);
/// `length` consecutive entries along `axis` starting at `start`.
Tensor slice(const Tensor& t, std::size_t axis, std::size_t start, std::size_t length);
Tensor reshape(const Tensor& t, Shape shape);

Tensor sum(const Tensor& t);
Tensor relu(const Tensor& t);
Tensor sigmoid(const Tensor& t);
Tensor tanh(const Tensor& t);

}  // namespace rpsm
