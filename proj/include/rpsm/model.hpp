#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "rpsm/layers.hpp"

namespace rpsm {

enum class ScalePreset { full, desk };

std::string to_string(ScalePreset preset);
ScalePreset parse_preset(const std::string& text);

/// Layer geometry implied by a scale preset.
struct Architecture {
  std::size_t input_extent = 0;
  std::size_t input_channels = 3;
  /// Shared 2D stack in order; 0 marks a 2×2 stride-2 max pool, any other
  /// value a 3×3 stride-1 "same" convolution with that many channels.
  std::vector<std::size_t> shared_stack;
  std::size_t feature_channels = 0;  // specialized conv width
  std::size_t adapt_channels = 0;
  std::size_t adapt_kernel = 5;
  std::size_t adapt_stride = 2;
  std::size_t adapt_pad = 0;
  std::array<bool, 2> adapt_pool{true, true};
  std::size_t adapt_dim = 0;
  std::size_t hidden_dim = 0;
};

struct ModelConfig {
  ScalePreset preset = ScalePreset::desk;
  std::size_t stages = 3;
  std::size_t clip_length = 5;
  std::size_t joints = 17;
  bool share_recurrent_across_stages = true;
  bool share_all_2d_layers = false;

  Architecture architecture() const;
  std::size_t pose_dim() const { return 3 * joints; }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Ψ_p: shared convolution stack plus two stage-specialized convolutions
/// that fuse the shared features with the previous stage's features.
struct PoseModule {
  std::vector<Conv2d> shared;              // pools implied by Architecture::shared_stack
  std::vector<std::array<Conv2d, 2>> specialized;  // one per stage, or one if shared
};

/// Ψ_a: conv(5×5, s2) [→ pool] → conv(5×5, s2) [→ pool] → fully connected.
struct AdaptionModule {
  Conv2d conv1;
  Conv2d conv2;
  Linear fc;
};

/// Ψ_r: one LSTM layer and a linear head to 3·P coordinates.
struct RecurrentModule {
  LstmCell lstm;
  Linear head;
};

struct RecurrentOutput {
  Tensor pose;  // 1 × 3P
  LstmState state;
};

class RpsmModel {
 public:
  RpsmModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Architecture& architecture() const { return arch_; }

  /// Every distinct trainable tensor once, in a stable order with stable
  /// names. Shared parameters appear a single time.
  ParameterList parameters() const;
  /// |shared| + K_2d·|specialized| + K_r·(|adaption| + |recurrent|), counted
  /// in tensors, where K_2d and K_r are 1 when the respective flag shares them.
  static std::size_t expected_parameter_tensors(const ModelConfig& config);

  /// Feature map shape (channels, height, width) produced by Ψ_p.
  Shape feature_shape() const;

  /// Shared stack only: N×3×S×S → N×C×h×w. Stage independent.
  Tensor shared_features(const Tensor& frames) const;
  /// Specialized part of Ψ_p on precomputed shared features.
  Tensor specialize(const Tensor& shared, const Tensor& f2d_prev, std::size_t stage) const;
  /// Full Ψ_p for frames N×3×S×S with previous-stage features N×C×h×w.
  Tensor pose_module_forward(const Tensor& frames, const Tensor& f2d_prev, std::size_t stage) const;
  /// Ψ_a: N×C×h×w → N×adapt_dim.
  Tensor adaption_forward(const Tensor& f2d, std::size_t stage) const;
  /// Ψ_r for one frame: LSTM over concat(f3d, pose_prev) with carried state,
  /// then the linear head.
  RecurrentOutput recurrent_step(const Tensor& f3d, const Tensor& pose_prev, const LstmState& state,
                                 std::size_t stage) const;
  LstmState zero_state(std::size_t stage = 0) const;

  /// Runs every stage over a T×3×S×S clip. Element k holds the T×3P poses of
  /// stage k+1; the last element is the final prediction.
  std::vector<Tensor> forward(const Tensor& frames) const;

  PoseModule& pose_module() { return pose_; }
  AdaptionModule& adaption_module(std::size_t stage);
  RecurrentModule& recurrent_module(std::size_t stage);

 private:
  void check_stage(std::size_t stage) const;
  std::size_t specialized_index(std::size_t stage) const;
  std::size_t recurrent_index(std::size_t stage) const;

  ModelConfig config_;
  Architecture arch_;
  PoseModule pose_;
  std::vector<AdaptionModule> adaption_;
  std::vector<RecurrentModule> recurrent_;
};

}  // namespace rpsm
