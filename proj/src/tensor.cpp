#include "rpsm/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace rpsm {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

thread_local bool t_grad_enabled = true;
std::atomic<std::uint64_t> g_node_seq{0};
std::string g_faulty_kind;
thread_local debug::BranchTrace* t_trace = nullptr;

void check_shape(const Shape& shape, std::size_t values) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
  if (numel(shape) != values) {
    throw ShapeError("shape " + shape_string(shape) + " needs " + std::to_string(numel(shape)) +
                     " values, got " + std::to_string(values));
  }
}

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace debug {
void set_faulty_backward(std::string kind) { g_faulty_kind = std::move(kind); }
const std::string& faulty_backward() { return g_faulty_kind; }
bool backward_is_faulty(std::string_view kind) { return !g_faulty_kind.empty() && g_faulty_kind == kind; }

BranchTrace::BranchTrace() : hash_(1469598103934665603ull), previous_(t_trace) { t_trace = this; }
BranchTrace::~BranchTrace() { t_trace = previous_; }

bool tracing_branches() { return t_trace != nullptr; }

void record_branch(std::uint64_t decision) {
  if (!t_trace) return;
  // FNV-1a over the decision's bytes
  for (int b = 0; b < 8; ++b) {
    t_trace->hash_ ^= (decision >> (8 * b)) & 0xff;
    t_trace->hash_ *= 1099511628211ull;
  }
}
}  // namespace debug

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = rpsm::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape, values.size());
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

detail::TensorImpl& Tensor::checked() const {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked().data.size(); }
std::span<const double> Tensor::data() const { return checked().data; }
std::span<double> Tensor::mutable_data() { return checked().data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_string(shape()));
  return data()[0];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }
void Tensor::set_requires_grad(bool flag) { checked().requires_grad = flag; }
bool Tensor::is_leaf() const { return checked().node == nullptr; }
bool Tensor::has_grad() const { return !checked().grad.empty(); }
std::span<const double> Tensor::grad() const { return checked().grad; }

std::span<double> Tensor::grad_buffer() const {
  auto& impl = checked();
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

void Tensor::zero_grad() {
  auto& impl = checked();
  std::fill(impl.grad.begin(), impl.grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape();
  impl->data = checked().data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  auto copy = detach();
  copy.set_requires_grad(requires_grad());
  return copy;
}

Tensor Tensor::make_result(std::string_view kind, Shape shape, std::vector<double> values,
                           std::vector<Tensor> inputs,
                           std::function<void(std::span<const double>)> backward) {
  Tensor out = from(std::move(shape), std::move(values));
  if (!t_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!any) return out;

  auto node = std::make_shared<detail::Node>();
  node->seq = g_node_seq.fetch_add(1, std::memory_order_relaxed);
  node->kind = std::string(kind);
  node->inputs.reserve(inputs.size());
  for (auto& t : inputs) {
    if (t.defined()) node->inputs.push_back(t.impl());
  }
  node->backward = std::move(backward);
  out.impl_->requires_grad = true;
  out.impl_->node = std::move(node);
  return out;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Collect every non-leaf reachable from the loss. Creation order is a
  // topological order, so descending sequence numbers give a valid reverse
  // sweep that visits each node once.
  std::vector<std::shared_ptr<detail::TensorImpl>> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<std::shared_ptr<detail::TensorImpl>> stack{loss.impl()};
  while (!stack.empty()) {
    auto impl = std::move(stack.back());
    stack.pop_back();
    if (!impl->node || !seen.insert(impl.get()).second) continue;
    for (const auto& input : impl->node->inputs) {
      if (input->node && !seen.count(input.get())) stack.push_back(input);
    }
    order.push_back(std::move(impl));
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->node->seq > b->node->seq; });

  auto* root = loss.impl().get();
  if (root->grad.empty()) root->grad.assign(1, 0.0);
  root->grad[0] += 1.0;

  // Each node is released right after its sweep so saved intermediates do
  // not outlive their use.
  for (const auto& impl : order) {
    if (!impl->grad.empty()) impl->node->backward(impl->grad);
    impl->node.reset();
    if (impl.get() != root) {
      impl->grad.clear();
      impl->grad.shrink_to_fit();
    }
  }
}

}  // namespace rpsm
