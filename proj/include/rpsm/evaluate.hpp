#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rpsm/train.hpp"

namespace rpsm {

enum class Alignment { root, centroid };
std::string to_string(Alignment alignment);
Alignment parse_alignment(const std::string& text);

/// Mean per-joint Euclidean distance (mm) between two P×3 poses after both
/// are translated so their alignment reference sits at the origin.
double pose_error(std::span<const double> pred, std::span<const double> gt, Alignment alignment = Alignment::root);
/// Per-joint distances after alignment.
std::vector<double> joint_errors(std::span<const double> pred, std::span<const double> gt,
                                 Alignment alignment = Alignment::root);

struct FrameError {
  std::string sequence;
  std::string action;
  std::size_t frame = 0;
  std::vector<double> stage_errors;  // one per stage; back() is the final prediction
  std::vector<double> joint_errors;  // final stage, per joint
};

struct ActionSummary {
  double mean = 0.0;
  std::size_t frames = 0;
};

struct EvalReport {
  double mean = 0.0;  // final stage, over all frames
  std::map<std::string, ActionSummary> per_action;
  std::vector<double> per_stage;
  std::vector<double> per_joint;
  std::size_t frames = 0;
  std::vector<FrameError> records;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  /// Action columns plus an "Average" column, one row per stage.
  std::string table() const;
};

/// Builds every aggregate from the per-frame records.
EvalReport aggregate(std::vector<FrameError> records);

/// Every stage's denormalized predictions (mm) for a whole sequence: the
/// sequence is split into clips of the model's clip length, each clip runs
/// from zero recurrent state, and padding frames are dropped. Element k is
/// T × 3P.
std::vector<std::vector<double>> predict_sequence(const RpsmModel& model, const LoadedSequence& sequence,
                                                  const NormalizationStats& stats);

struct EvalOptions {
  Alignment alignment = Alignment::root;
  std::size_t workers = 1;
  bool oracle = false;  // substitute ground truth for every prediction
};

/// Runs the model over a held-out split with statistics from a training
/// split and scores every stage of every frame.
EvalReport evaluate(const RpsmModel& model, const DatasetSplit& split, const NormalizationStats& stats,
                    const EvalOptions& options = {});

/// Writes `skeletons.jsonl` ({"frame", "pred", "gt"} per line, P×3 mm each)
/// and `view_<tttt>.ppm` per frame: front, side and top projections side by
/// side, prediction in the red channel and ground truth in the green one.
void export_skeletons(const std::vector<double>& pred, const std::vector<double>& gt, std::size_t joints,
                      const std::vector<std::size_t>& parents, const std::filesystem::path& dir,
                      std::size_t panel_extent = 128);

struct SkeletonFrame {
  std::size_t frame = 0;
  std::vector<double> pred;
  std::vector<double> gt;
};
std::vector<SkeletonFrame> read_skeletons(const std::filesystem::path& dir);

}  // namespace rpsm
