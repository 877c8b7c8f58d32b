#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rpsm {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Thrown for any extent/shape contract violation. The message names the
/// operation and the offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor;

namespace detail {

struct TensorImpl;

/// One recorded operation. Owned by the tensor it produced; holds its inputs
/// so the graph stays alive until backward releases it.
struct Node {
  std::uint64_t seq = 0;
  std::string kind;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(std::span<const double> grad_out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty == absent
  bool requires_grad = false;
  std::shared_ptr<Node> node;
};

}  // namespace detail

/// Dense row-major float64 tensor handle with reverse-mode autodiff.
///
/// Copies are shallow: two handles refer to the same storage. Values are
/// immutable once produced by an operation; only leaves (parameters) are
/// mutated, and only between passes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Direct write access for leaves (initializers, optimizers, loaders).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Grad storage, allocated zero-filled on first use.
  std::span<double> grad_buffer() const;
  void zero_grad();

  /// Same values, no history, no gradient tracking.
  Tensor detach() const;
  /// Deep copy of the values as a fresh leaf.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  /// Records an operation result. `backward` receives the upstream gradient
  /// and must accumulate into the inputs that require gradients. When
  /// gradient recording is disabled or no input requires gradients, no node
  /// is stored.
  static Tensor make_result(std::string_view kind, Shape shape, std::vector<double> values,
                            std::vector<Tensor> inputs,
                            std::function<void(std::span<const double>)> backward);

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  detail::TensorImpl& checked() const;

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Runs reverse-mode differentiation from a scalar. Gradients accumulate into
/// every reachable leaf that requires them; the recorded graph is released
/// afterwards. A loss that does not require gradients is a no-op.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace debug {
/// Test hook: when set to an operation kind, that operation's backward
/// perturbs the gradients it produces. Empty string disables.
void set_faulty_backward(std::string kind);
const std::string& faulty_backward();
bool backward_is_faulty(std::string_view kind);

void record_branch(std::uint64_t decision);

/// Fingerprint of the branch decisions (ReLU signs, pooling winners) taken
/// by forward passes on this thread while the trace is alive. Two forward
/// passes with equal fingerprints ran through the same linear region.
class BranchTrace {
 public:
  BranchTrace();
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  std::uint64_t fingerprint() const { return hash_; }

 private:
  friend void record_branch(std::uint64_t decision);
  std::uint64_t hash_;
  BranchTrace* previous_;
};

bool tracing_branches();
}  // namespace debug

}  // namespace rpsm
