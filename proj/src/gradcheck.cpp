#include "rpsm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "rpsm/functional.hpp"
#include "rpsm/ops.hpp"
#include "rpsm/train.hpp"

namespace rpsm {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count >= n) return idx;
  // partial Fisher-Yates
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Tensor uniform(Shape shape, Rng& rng, bool requires_grad = true) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Weighted sum with fixed random coefficients, so every output element
// contributes a distinct upstream gradient.
Tensor probe(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

}  // namespace

namespace {

struct Evaluation {
  double value;
  std::uint64_t branches;
};

Evaluation evaluate(const std::function<Tensor()>& loss) {
  debug::BranchTrace trace;
  const double value = loss().item();
  return {value, trace.fingerprint()};
}

}  // namespace

std::vector<GroupResult> check_gradients(const std::function<Tensor()>& loss, const ParameterList& leaves,
                                         const GradCheckOptions& options) {
  for (const auto& leaf : leaves) {
    Tensor t = leaf.tensor;
    t.zero_grad();
  }
  backward(loss());
  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : leaves) {
    const auto g = leaf.tensor.has_grad() ? leaf.tensor.grad() : std::span<const double>{};
    analytic.emplace_back(leaf.tensor.numel(), 0.0);
    std::copy(g.begin(), g.end(), analytic.back().begin());
  }

  Rng rng(options.seed);
  std::vector<GroupResult> results;
  NoGradGuard no_grad;
  const std::uint64_t base = evaluate(loss).branches;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    Tensor t = leaves[i].tensor;
    GroupResult r{leaves[i].name, 0, 0, 0.0, true};
    for (std::size_t j : sample_indices(t.numel(), t.numel(), rng)) {
      if (r.checked == options.coords_per_tensor) break;
      const double saved = t.data()[j];
      std::optional<double> numeric;
      double h = options.step;
      for (std::size_t shrink = 0; shrink <= options.max_shrinks && !numeric; ++shrink, h /= 10.0) {
        t.mutable_data()[j] = saved + h;
        const auto plus = evaluate(loss);
        t.mutable_data()[j] = saved - h;
        const auto minus = evaluate(loss);
        t.mutable_data()[j] = saved;
        if (plus.branches == base && minus.branches == base) numeric = (plus.value - minus.value) / (2.0 * h);
      }
      if (!numeric) {
        ++r.skipped;
        continue;
      }
      r.worst = std::max(r.worst, relative_error(analytic[i][j], *numeric));
      ++r.checked;
    }
    r.pass = r.checked > 0 && r.worst < options.tolerance;
    results.push_back(std::move(r));
  }
  return results;
}

namespace {

// Runs a leaf-level check and folds the per-tensor results into one group.
GroupResult fold(const std::string& name, const std::function<Tensor()>& loss, const ParameterList& leaves,
                 const GradCheckOptions& options) {
  GroupResult g{name, 0, 0, 0.0, true};
  for (const auto& r : check_gradients(loss, leaves, options)) {
    g.checked += r.checked;
    g.skipped += r.skipped;
    g.worst = std::max(g.worst, r.worst);
    g.pass = g.pass && r.pass;
  }
  return g;
}

}  // namespace

std::vector<GroupResult> check_layers(const GradCheckOptions& options) {
  Rng rng(options.seed);
  std::vector<GroupResult> out;

  {
    Tensor a = uniform({4, 8}, rng), b = uniform({4, 8}, rng), w = uniform({4, 8}, rng, false);
    out.push_back(fold("op:add_sub_mul", [&] { return probe(mul(add(a, b), sub(a, scale(b, 0.5))), w); },
                       {{"a", a}, {"b", b}}, options));
  }
  {
    Tensor a = uniform({6, 6}, rng), b = uniform({6, 5}, rng), w = uniform({6, 5}, rng, false);
    out.push_back(fold("op:matmul", [&] { return probe(matmul(a, b), w); }, {{"a", a}, {"b", b}}, options));
  }
  {
    Tensor a = uniform({6, 8}, rng), b = uniform({6, 4}, rng), w = uniform({6, 6}, rng, false);
    out.push_back(fold("op:concat_slice_reshape",
                       [&] { return probe(reshape(slice(concat({a, b}, 1), 1, 5, 6), {6, 6}), w); },
                       {{"a", a}, {"b", b}}, options));
  }
  {
    // keep relu inputs away from the kink
    Tensor x = uniform({8, 8}, rng), w = uniform({8, 8}, rng, false);
    for (auto& v : x.mutable_data()) v = v < 0 ? v - 0.05 : v + 0.05;
    out.push_back(fold("op:relu", [&] { return probe(relu(x), w); }, {{"x", x}}, options));
    out.push_back(fold("op:sigmoid_tanh", [&] { return probe(mul(sigmoid(x), tanh(x)), w); }, {{"x", x}}, options));
  }
  {
    Conv2d conv = Conv2d::create(3, 4, 3, 2, 1, rng);
    Tensor x = uniform({2, 3, 7, 7}, rng);
    Tensor w = uniform({2, 4, 4, 4}, rng, false);
    ParameterList leaves{{"input", x}};
    conv.collect("conv", leaves);
    out.push_back(fold("layer:conv2d", [&] { return probe(conv.forward(x), w); }, leaves, options));
  }
  {
    Tensor x = uniform({2, 3, 6, 6}, rng), w = uniform({2, 3, 3, 3}, rng, false);
    out.push_back(fold("layer:maxpool2d", [&] { return probe(maxpool2d(x, 2, 2), w); }, {{"input", x}}, options));
  }
  {
    Linear fc = Linear::create(8, 5, rng);
    Tensor x = uniform({3, 8}, rng), w = uniform({3, 5}, rng, false);
    ParameterList leaves{{"input", x}};
    fc.collect("fc", leaves);
    out.push_back(fold("layer:linear", [&] { return probe(fc.forward(x), w); }, leaves, options));
  }
  {
    LstmCell cell = LstmCell::create(5, 4, rng);
    Tensor x = uniform({1, 5}, rng), h = uniform({1, 4}, rng), c = uniform({1, 4}, rng);
    Tensor wh = uniform({1, 4}, rng, false), wc = uniform({1, 4}, rng, false);
    ParameterList leaves{{"x", x}, {"h_prev", h}, {"c_prev", c}};
    cell.collect("lstm", leaves);
    out.push_back(fold("layer:lstm",
                       [&] {
                         const auto s = cell.step(x, {h, c});
                         return add(probe(s.h, wh), probe(s.c, wc));
                       },
                       leaves, options));
  }
  return out;
}

std::vector<GroupResult> check_model(const ModelConfig& config, const GradCheckOptions& options) {
  RpsmModel model(config, options.seed);
  const auto& arch = model.architecture();
  Rng rng(options.seed + 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> pixels(options.frames * arch.input_channels * arch.input_extent * arch.input_extent);
  for (auto& v : pixels) v = u(rng);
  const Tensor frames =
      Tensor::from({options.frames, arch.input_channels, arch.input_extent, arch.input_extent}, std::move(pixels));
  // target a small random offset from the final-stage prediction: a small
  // loss keeps the rounding error of the differences small
  std::vector<double> goal;
  {
    NoGradGuard no_grad;
    const auto preds = model.forward(frames);
    goal.assign(preds.back().data().begin(), preds.back().data().end());
  }
  std::uniform_real_distribution<double> offset(-0.05, 0.05);
  for (auto& v : goal) v += offset(rng);
  const Tensor target = Tensor::from({options.frames, config.pose_dim()}, std::move(goal));
  const std::vector<double> alphas(config.stages, 1.0);
  return check_gradients([&] { return sequence_loss(model.forward(frames), target, alphas); }, model.parameters(),
                         options);
}

}  // namespace rpsm
