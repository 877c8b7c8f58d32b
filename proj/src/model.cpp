#include "rpsm/model.hpp"

#include <stdexcept>

#include "rpsm/functional.hpp"
#include "rpsm/ops.hpp"

namespace rpsm {

namespace {

// Shared 2D stack at full scale; 0 = 2×2/2 max pool.
const std::vector<std::size_t> kFullSharedStack{64,  64,  0,   128, 128, 0,   256, 256, 256, 256,
                                                0,   512, 512, 256, 256, 256, 256, 128};
constexpr std::size_t kDeskDivisor = 8;

std::size_t spatial_after_adaption(const Architecture& a, std::size_t extent) {
  extent = window_output_extent(extent, a.adapt_kernel, a.adapt_stride, a.adapt_pad);
  if (a.adapt_pool[0]) extent = window_output_extent(extent, 2, 2, 0);
  extent = window_output_extent(extent, a.adapt_kernel, a.adapt_stride, a.adapt_pad);
  if (a.adapt_pool[1]) extent = window_output_extent(extent, 2, 2, 0);
  return extent;
}

}  // namespace

std::string to_string(ScalePreset preset) { return preset == ScalePreset::full ? "full" : "desk"; }

ScalePreset parse_preset(const std::string& text) {
  if (text == "full") return ScalePreset::full;
  if (text == "desk") return ScalePreset::desk;
  throw std::invalid_argument("unknown scale preset '" + text + "' (expected full or desk)");
}

Architecture ModelConfig::architecture() const {
  Architecture a;
  if (preset == ScalePreset::full) {
    a.input_extent = 368;
    a.shared_stack = kFullSharedStack;
    a.feature_channels = 128;
    a.adapt_channels = 128;
    a.adapt_pad = 0;
    a.adapt_pool = {true, true};
    a.adapt_dim = 1024;
    a.hidden_dim = 1024;
  } else {
    // 64×64 input leaves 8×8 features, too small for unpadded stride-2 5×5
    // convs plus pools; padded convs alone take 8 → 4 → 2.
    a.input_extent = 64;
    for (auto ch : kFullSharedStack) a.shared_stack.push_back(ch / kDeskDivisor);
    a.feature_channels = 128 / kDeskDivisor;
    a.adapt_channels = 128 / kDeskDivisor;
    a.adapt_pad = 2;
    a.adapt_pool = {false, false};
    a.adapt_dim = 128;
    a.hidden_dim = 128;
  }
  return a;
}

void ModelConfig::validate() const {
  if (stages < 1) throw std::invalid_argument("model config: stages must be >= 1");
  if (clip_length < 1) throw std::invalid_argument("model config: clip_length must be >= 1");
  if (joints < 2) throw std::invalid_argument("model config: joints must be >= 2");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"preset", to_string(preset)},
          {"stages", stages},
          {"clip_length", clip_length},
          {"joints", joints},
          {"share_recurrent_across_stages", share_recurrent_across_stages},
          {"share_all_2d_layers", share_all_2d_layers}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.preset = parse_preset(j.at("preset").get<std::string>());
  c.stages = j.at("stages").get<std::size_t>();
  c.clip_length = j.at("clip_length").get<std::size_t>();
  c.joints = j.at("joints").get<std::size_t>();
  c.share_recurrent_across_stages = j.at("share_recurrent_across_stages").get<bool>();
  c.share_all_2d_layers = j.at("share_all_2d_layers").get<bool>();
  c.validate();
  return c;
}

RpsmModel::RpsmModel(ModelConfig config, std::uint64_t seed) : config_(config), arch_(config.architecture()) {
  config_.validate();
  Rng rng(seed);

  std::size_t channels = arch_.input_channels;
  for (auto width : arch_.shared_stack) {
    if (width == 0) continue;
    pose_.shared.push_back(Conv2d::create(channels, width, 3, 1, 1, rng, kReluGain));
    channels = width;
  }
  const std::size_t fused = channels + arch_.feature_channels;
  const std::size_t specialized_sets = config_.share_all_2d_layers ? 1 : config_.stages;
  for (std::size_t s = 0; s < specialized_sets; ++s) {
    pose_.specialized.push_back({Conv2d::create(fused, arch_.feature_channels, 3, 1, 1, rng, kReluGain),
                                 Conv2d::create(arch_.feature_channels, arch_.feature_channels, 3, 1, 1, rng, kReluGain)});
  }

  const Shape features = feature_shape();
  const std::size_t adapt_extent = spatial_after_adaption(arch_, features[1]);
  const std::size_t fc_in = arch_.adapt_channels * adapt_extent * adapt_extent;
  const std::size_t recurrent_sets = config_.share_recurrent_across_stages ? 1 : config_.stages;
  for (std::size_t s = 0; s < recurrent_sets; ++s) {
    AdaptionModule a{Conv2d::create(arch_.feature_channels, arch_.adapt_channels, arch_.adapt_kernel,
                                    arch_.adapt_stride, arch_.adapt_pad, rng, kReluGain),
                     Conv2d::create(arch_.adapt_channels, arch_.adapt_channels, arch_.adapt_kernel,
                                    arch_.adapt_stride, arch_.adapt_pad, rng, kReluGain),
                     Linear::create(fc_in, arch_.adapt_dim, rng)};
    adaption_.push_back(std::move(a));
  }
  for (std::size_t s = 0; s < recurrent_sets; ++s) {
    RecurrentModule r{LstmCell::create(arch_.adapt_dim + config_.pose_dim(), arch_.hidden_dim, rng),
                      Linear::create(arch_.hidden_dim, config_.pose_dim(), rng)};
    recurrent_.push_back(std::move(r));
  }
}

std::size_t RpsmModel::expected_parameter_tensors(const ModelConfig& config) {
  std::size_t shared_convs = 0;
  for (auto width : config.architecture().shared_stack) shared_convs += width != 0;
  const std::size_t specialized = config.share_all_2d_layers ? 1 : config.stages;
  const std::size_t recurrent = config.share_recurrent_across_stages ? 1 : config.stages;
  constexpr std::size_t kAdaption = 6;   // two convs and the fc, weight + bias each
  constexpr std::size_t kRecurrent = 5;  // w_ih, w_hh, bias, head weight + bias
  return 2 * shared_convs + specialized * 4 + recurrent * (kAdaption + kRecurrent);
}

ParameterList RpsmModel::parameters() const {
  ParameterList out;
  std::size_t block = 1, index = 0, conv = 0;
  for (auto width : arch_.shared_stack) {
    if (width == 0) {
      ++block;
      index = 0;
      continue;
    }
    ++index;
    pose_.shared[conv++].collect("pose.shared.conv" + std::to_string(block) + "_" + std::to_string(index), out);
  }
  for (std::size_t s = 0; s < pose_.specialized.size(); ++s) {
    const std::string prefix =
        config_.share_all_2d_layers ? std::string("pose.specialized") : "pose.stage" + std::to_string(s + 1);
    pose_.specialized[s][0].collect(prefix + ".conv1", out);
    pose_.specialized[s][1].collect(prefix + ".conv2", out);
  }
  const bool shared = config_.share_recurrent_across_stages;
  for (std::size_t s = 0; s < adaption_.size(); ++s) {
    const std::string prefix = shared ? std::string("adapt") : "adapt.stage" + std::to_string(s + 1);
    adaption_[s].conv1.collect(prefix + ".conv1", out);
    adaption_[s].conv2.collect(prefix + ".conv2", out);
    adaption_[s].fc.collect(prefix + ".fc", out);
  }
  for (std::size_t s = 0; s < recurrent_.size(); ++s) {
    const std::string prefix = shared ? std::string("recur") : "recur.stage" + std::to_string(s + 1);
    recurrent_[s].lstm.collect(prefix + ".lstm", out);
    recurrent_[s].head.collect(prefix + ".head", out);
  }
  return out;
}

Shape RpsmModel::feature_shape() const {
  std::size_t extent = arch_.input_extent;
  for (auto width : arch_.shared_stack) {
    if (width == 0) extent = window_output_extent(extent, 2, 2, 0);
  }
  return {arch_.feature_channels, extent, extent};
}

void RpsmModel::check_stage(std::size_t stage) const {
  if (stage >= config_.stages) {
    throw std::out_of_range("stage index " + std::to_string(stage) + " out of range for a " +
                            std::to_string(config_.stages) + "-stage model");
  }
}

std::size_t RpsmModel::specialized_index(std::size_t stage) const {
  check_stage(stage);
  return config_.share_all_2d_layers ? 0 : stage;
}

std::size_t RpsmModel::recurrent_index(std::size_t stage) const {
  check_stage(stage);
  return config_.share_recurrent_across_stages ? 0 : stage;
}

AdaptionModule& RpsmModel::adaption_module(std::size_t stage) { return adaption_[recurrent_index(stage)]; }
RecurrentModule& RpsmModel::recurrent_module(std::size_t stage) { return recurrent_[recurrent_index(stage)]; }

Tensor RpsmModel::shared_features(const Tensor& frames) const {
  const std::size_t s = arch_.input_extent;
  if (frames.rank() != 4 || frames.dim(1) != arch_.input_channels || frames.dim(2) != s || frames.dim(3) != s) {
    throw ShapeError("pose module expects N×" + std::to_string(arch_.input_channels) + "×" + std::to_string(s) +
                     "×" + std::to_string(s) + " frames, got " + shape_string(frames.shape()));
  }
  Tensor x = frames;
  std::size_t conv = 0;
  for (auto width : arch_.shared_stack) {
    x = width == 0 ? maxpool2d(x, 2, 2) : relu(pose_.shared[conv++].forward(x));
  }
  return x;
}

Tensor RpsmModel::specialize(const Tensor& shared, const Tensor& f2d_prev, std::size_t stage) const {
  const auto& convs = pose_.specialized[specialized_index(stage)];
  Shape expected{shared.dim(0)};
  for (auto e : feature_shape()) expected.push_back(e);
  if (f2d_prev.shape() != expected) {
    throw ShapeError("previous-stage features must be " + shape_string(expected) + ", got " +
                     shape_string(f2d_prev.shape()));
  }
  Tensor x = concat({shared, f2d_prev}, 1);
  x = relu(convs[0].forward(x));
  return relu(convs[1].forward(x));
}

Tensor RpsmModel::pose_module_forward(const Tensor& frames, const Tensor& f2d_prev, std::size_t stage) const {
  check_stage(stage);
  return specialize(shared_features(frames), f2d_prev, stage);
}

Tensor RpsmModel::adaption_forward(const Tensor& f2d, std::size_t stage) const {
  const auto& m = adaption_[recurrent_index(stage)];
  const Shape features = feature_shape();
  if (f2d.rank() != 4 || Shape(f2d.shape().begin() + 1, f2d.shape().end()) != features) {
    throw ShapeError("adaption module expects N×" + shape_string(features) + " features, got " +
                     shape_string(f2d.shape()));
  }
  Tensor x = relu(m.conv1.forward(f2d));
  if (arch_.adapt_pool[0]) x = maxpool2d(x, 2, 2);
  x = relu(m.conv2.forward(x));
  if (arch_.adapt_pool[1]) x = maxpool2d(x, 2, 2);
  x = reshape(x, {x.dim(0), x.numel() / x.dim(0)});
  return m.fc.forward(x);
}

RecurrentOutput RpsmModel::recurrent_step(const Tensor& f3d, const Tensor& pose_prev, const LstmState& state,
                                          std::size_t stage) const {
  const auto& m = recurrent_[recurrent_index(stage)];
  if (f3d.rank() != 2 || f3d.dim(1) != arch_.adapt_dim || pose_prev.rank() != 2 ||
      pose_prev.dim(1) != config_.pose_dim() || pose_prev.dim(0) != f3d.dim(0)) {
    throw ShapeError("recurrent step expects N×" + std::to_string(arch_.adapt_dim) + " features and N×" +
                     std::to_string(config_.pose_dim()) + " previous poses, got " + shape_string(f3d.shape()) +
                     " and " + shape_string(pose_prev.shape()));
  }
  // W_ih·[f3d, pose_prev] + W_hh·h is one linear map of concat(f3d, h, pose_prev).
  LstmState next = m.lstm.step(concat({f3d, pose_prev}, 1), state);
  Tensor pose = m.head.forward(next.h);
  return {std::move(pose), std::move(next)};
}

LstmState RpsmModel::zero_state(std::size_t stage) const {
  return recurrent_[recurrent_index(stage)].lstm.zero_state(1);
}

std::vector<Tensor> RpsmModel::forward(const Tensor& frames) const {
  if (frames.rank() != 4 || frames.dim(0) == 0) {
    throw ShapeError("forward expects a non-empty T×C×H×W frame sequence, got " + shape_string(frames.shape()));
  }
  const std::size_t steps = frames.dim(0);
  // Ψ_p and Ψ_a have no temporal coupling, so every frame of a stage runs as
  // one batch; only Ψ_r walks the sequence.
  const Tensor shared = shared_features(frames);
  Shape feature_batch{steps};
  for (auto e : feature_shape()) feature_batch.push_back(e);
  Tensor f2d_prev = Tensor::zeros(feature_batch);
  Tensor pose_prev = Tensor::zeros({steps, config_.pose_dim()});

  std::vector<Tensor> stages;
  stages.reserve(config_.stages);
  for (std::size_t k = 0; k < config_.stages; ++k) {
    Tensor f2d = specialize(shared, f2d_prev, k);
    Tensor f3d = adaption_forward(f2d, k);
    LstmState state = zero_state(k);
    std::vector<Tensor> poses;
    poses.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      auto out = recurrent_step(slice(f3d, 0, t, 1), slice(pose_prev, 0, t, 1), state, k);
      state = std::move(out.state);
      poses.push_back(std::move(out.pose));
    }
    Tensor stage_poses = steps == 1 ? poses.front() : concat(poses, 0);
    stages.push_back(stage_poses);
    f2d_prev = std::move(f2d);
    pose_prev = std::move(stage_poses);
  }
  return stages;
}

}  // namespace rpsm
