#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rpsm/dataset.hpp"
#include "rpsm/model.hpp"

namespace rpsm {

enum class Split { train, test };
std::string to_string(Split split);

/// Sequences tagged with the role they play in an experiment.
struct DatasetSplit {
  Split role = Split::train;
  std::vector<LoadedSequence> sequences;

  std::size_t frames() const;
};

/// Per-coordinate min-max statistics over every frame of a training split.
/// `provenance` records the split the statistics were computed from.
struct NormalizationStats {
  std::vector<double> min;  // 3P
  std::vector<double> max;  // 3P
  Split provenance = Split::train;

  std::size_t dim() const { return min.size(); }
};

/// Refuses anything but a training split. With a scale range other than
/// [1, 1] the extrema also cover every training pose with its x and y
/// scaled by any factor in the range, so scale-augmented targets stay in
/// [0, 1].
NormalizationStats compute_normalization(const DatasetSplit& split, double scale_lo = 1.0, double scale_hi = 1.0);

/// (x − min)/(max − min) per coordinate; `values` may hold any number of
/// consecutive 3P poses. A degenerate coordinate (max == min) maps to 0.
std::vector<double> normalize_pose(std::span<const double> values, const NormalizationStats& stats);
/// Inverse of normalize_pose; a degenerate coordinate returns min.
std::vector<double> denormalize_pose(std::span<const double> values, const NormalizationStats& stats);

/// L = Σ_k α_k Σ_t ‖preds[k]_t − target_t‖² over T × 3P tensors.
Tensor sequence_loss(const std::vector<Tensor>& preds, const Tensor& target, const std::vector<double>& alphas);

struct Clip {
  Tensor frames;               // C × 3 × S × S
  std::vector<double> poses;   // C × 3P
  std::vector<std::size_t> source;  // sequence frame index of each clip frame
  std::size_t valid = 0;       // leading frames that are not padding repeats
};

/// floor(T/C) consecutive clips, plus one clip for a remainder padded by
/// repeating its last frame and pose.
std::vector<Clip> decompose_clips(const Tensor& frames, const std::vector<double>& poses, std::size_t clip_length);

/// Rescales every frame about its centre by `factor` and scales the x and y
/// pose coordinates to match; depth is unchanged. Poses are metric and
/// root-relative. Throws if the factor lies outside [lo, hi].
std::pair<Tensor, std::vector<double>> augment_scale(const Tensor& frames, const std::vector<double>& poses,
                                                     double factor, double lo = 0.9, double hi = 1.1);

struct AdamOptions {
  double lr = 1e-3;
  double decay = 1e-4;  // coupled L2: g += decay·θ
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected adaptive-moment optimizer over a fixed parameter list.
class Adam {
 public:
  Adam(ParameterList params, AdamOptions options);

  /// One update from the accumulated gradients (absent gradients count as
  /// zero). Throws naming the parameter if a gradient is non-finite; no
  /// parameter is modified in that case.
  void step();
  void zero_grad();
  std::size_t steps() const { return t_; }
  const AdamOptions& options() const { return options_; }

 private:
  ParameterList params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  double lr = 1e-3;
  double decay = 1e-4;
  std::vector<double> alphas;  // empty: 1 for every stage
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  double scale_min = 0.9;
  double scale_max = 1.1;
  bool augment = true;
  std::size_t eval_every = 1;  // epochs; 0 disables evaluation
  std::size_t workers = 1;

  std::vector<double> stage_weights(std::size_t stages) const;
  void validate(std::size_t stages) const;
};

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(std::size_t iteration, const std::string& what);
  std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

struct IterationRecord {
  std::size_t epoch = 0;
  std::size_t iter = 0;  // 1-based, global
  double loss = 0.0;
  std::optional<double> eval_error_mm;
  std::vector<double> stage_errors;
  double wall_ms = 0.0;

  nlohmann::json to_json() const;
};

struct TrainOutputs {
  std::filesystem::path checkpoint;  // written after every epoch when set
  std::filesystem::path log;         // JSONL, one line per iteration when set
};

struct TrainResult {
  NormalizationStats stats;
  std::vector<IterationRecord> history;
};

/// Epoch loop: seeded shuffle of all training clips, optional scale
/// augmentation per clip, every stage forward, weighted loss, backward,
/// Adam step. Held-out error is measured every `eval_every` epochs when an
/// evaluation split is given. A non-finite loss throws TrainingAborted and
/// leaves the last completed epoch's checkpoint in place. `on_iteration`
/// sees every record once, after any evaluation has been attached to it.
TrainResult train(RpsmModel& model, const DatasetSplit& train_split, const DatasetSplit* eval_split,
                  const TrainConfig& cfg, const TrainOutputs& outputs = {},
                  const std::function<void(const IterationRecord&)>& on_iteration = {});

/// Runs optimizer steps on a single clip; returns the loss before each step.
std::vector<double> overfit_clip(RpsmModel& model, const Clip& normalized_clip, const TrainConfig& cfg,
                                 std::size_t steps);

/// Parameters, normalization statistics and the model configuration. The
/// binary checkpoint carries the parameters plus `norm.min`/`norm.max`
/// records; the configuration sits in a JSON sidecar `<path>.json`.
void save_model(const std::filesystem::path& path, const RpsmModel& model, const NormalizationStats& stats);

struct LoadedModel {
  RpsmModel model;
  NormalizationStats stats;
};
LoadedModel load_model(const std::filesystem::path& path);
ModelConfig read_model_config(const std::filesystem::path& checkpoint);

}  // namespace rpsm
