#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rpsm/model.hpp"

namespace rpsm {

struct GradCheckOptions {
  double step = 1e-4;
  // A coordinate whose ±step crosses a ReLU sign or pooling winner is
  // retried with the step divided by 10, at most this many times, and then
  // skipped in favour of another coordinate.
  std::size_t max_shrinks = 3;
  std::size_t coords_per_tensor = 8;
  double tolerance = 1e-4;
  std::uint64_t seed = 7;
  std::size_t frames = 2;  // clip length used for the whole-model check
};

struct GroupResult {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates still at a kink after shrinking
  double worst = 0.0;  // worst relative error over the sampled coordinates
  bool pass = true;  // at least one coordinate checked and worst < tolerance
};

/// |a − n| / max(|a|, |n|, 1e-8); tiny gradients on both sides compare
/// absolutely against that floor.
double relative_error(double analytic, double numeric);

/// Central differences against reverse mode for every tensor in `leaves`,
/// one result per tensor. `loss` must rebuild the scalar from the current
/// leaf values on each call. Only coordinates where both perturbed passes
/// take the same ReLU and pooling branches as the unperturbed pass count.
std::vector<GroupResult> check_gradients(const std::function<Tensor()>& loss, const ParameterList& leaves,
                                         const GradCheckOptions& options);

/// One group per differentiable operation and layer on small random inputs
/// in [−1, 1]: inputs and parameters together.
std::vector<GroupResult> check_layers(const GradCheckOptions& options);

/// Seeded model of the given configuration on random frames against a
/// random target under the multi-stage loss; one group per parameter tensor.
std::vector<GroupResult> check_model(const ModelConfig& config, const GradCheckOptions& options);

}  // namespace rpsm
