#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rpsm/layers.hpp"
#include "rpsm/ops.hpp"

namespace rpsm::test {

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Central differences of a scalar function of `leaf`, every coordinate.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, Tensor leaf, double step = 1e-5) {
  std::vector<double> out(leaf.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double saved = leaf.data()[i];
    leaf.mutable_data()[i] = saved + step;
    const double plus = f();
    leaf.mutable_data()[i] = saved - step;
    const double minus = f();
    leaf.mutable_data()[i] = saved;
    out[i] = (plus - minus) / (2.0 * step);
  }
  return out;
}

inline double max_relative_error(std::span<const double> a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

// Analytic gradient of sum(out ⊙ w) w.r.t. `leaf` against central differences.
inline double probe_gradient_error(const std::function<Tensor()>& forward, Tensor leaf, Rng& rng) {
  const Tensor probe_weights = random_tensor(forward().shape(), rng, false);
  auto loss = [&] { return sum(mul(forward(), probe_weights)); };
  leaf.zero_grad();
  backward(loss());
  const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
  NoGradGuard guard;
  const auto numeric = numeric_gradient([&] { return loss().item(); }, leaf);
  return max_relative_error(analytic, numeric);
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("rpsm_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace rpsm::test
