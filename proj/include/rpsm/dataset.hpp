#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rpsm/image.hpp"
#include "rpsm/synth.hpp"

namespace rpsm {

/// Dataset directory layout:
///
///   manifest.json
///   seq_<id>/frame_<tttt>.ppm   binary P6, 8-bit, one file per frame
///   seq_<id>/poses.jsonl        one JSON object per frame:
///       {"seq": "<id>", "frame": t, "root": [x, y, z],
///        "joints": [[x, y, z], ... P entries]}
///
/// `root` is the root joint in camera coordinates and `joints` are
/// root-relative camera coordinates, all in millimetres.
struct SequenceEntry {
  std::string id;
  std::string action;
  OrthoCamera camera;
  std::size_t frames = 0;
  std::string directory;  // relative to the manifest root
};

struct DatasetManifest {
  std::filesystem::path root;
  std::size_t joints = 0;
  std::vector<std::size_t> parents;
  std::size_t image_height = 0;
  std::size_t image_width = 0;
  std::uint64_t seed = 0;
  std::vector<SequenceEntry> sequences;

  std::filesystem::path frame_path(const SequenceEntry& entry, std::size_t frame) const;
  std::filesystem::path pose_path(const SequenceEntry& entry) const;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j, std::filesystem::path root);
  /// Reads `<dir>/manifest.json`.
  static DatasetManifest load(const std::filesystem::path& dir);
};

struct PoseRecord {
  std::string sequence;
  std::size_t frame = 0;
  Eigen::Vector3d root = Eigen::Vector3d::Zero();
  Pose3 joints;  // root-relative
};

nlohmann::json to_json(const PoseRecord& record);
PoseRecord pose_record_from_json(const nlohmann::json& j);

struct GenerateOptions {
  std::size_t sequences = 4;
  std::size_t frames = 20;
  std::uint64_t seed = 1;
  std::size_t image_extent = 128;
  std::filesystem::path out_dir;
};

/// Writes a synthetic dataset. Sequence i uses motion family i mod 3 (walk,
/// wave, box) and a random one of four camera views; output is a pure
/// function of the options and the skeleton.
DatasetManifest generate_dataset(const GenerateOptions& options, const Skeleton& skeleton = Skeleton::human17());

std::vector<PoseRecord> read_pose_records(const DatasetManifest& manifest, const SequenceEntry& entry);

/// A sequence ready for the model: square subject crops resized to the
/// input extent, and root-relative poses in millimetres.
struct LoadedSequence {
  std::string id;
  std::string action;
  Tensor frames;                  // T × 3 × S × S
  std::vector<double> poses_mm;   // T × 3P
  std::size_t joints = 0;

  std::size_t length() const { return frames.dim(0); }
};

/// Square box centred on the projected joints of one frame with side
/// `side` (pixels).
CropBox subject_crop(const PoseRecord& record, const OrthoCamera& camera, double side);
/// Crop side used for a whole sequence: the largest projected extent over
/// its frames, widened by a fixed margin.
double sequence_crop_side(const std::vector<PoseRecord>& records, const OrthoCamera& camera);

LoadedSequence load_sequence(const DatasetManifest& manifest, const SequenceEntry& entry, std::size_t input_extent);
std::vector<LoadedSequence> load_sequences(const DatasetManifest& manifest, std::size_t input_extent);

}  // namespace rpsm
