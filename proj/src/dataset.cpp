#include "rpsm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace rpsm {

namespace {

constexpr double kCropMargin = 1.25;
constexpr double kPixelsPerMm = 0.055;  // at a 128-pixel canvas
constexpr double kFigureCentreMm = 95.0;  // rest-pose vertical centre below the pelvis
constexpr double kCameraSpacingDeg = 20.0;  // four views at -30, -10, 10, 30 degrees

std::runtime_error dataset_error(const std::string& sequence, const std::string& what) {
  return std::runtime_error("sequence " + sequence + ": " + what);
}

nlohmann::json vec3(const Eigen::Vector3d& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d parse_vec3(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

std::filesystem::path DatasetManifest::frame_path(const SequenceEntry& entry, std::size_t frame) const {
  char name[32];
  std::snprintf(name, sizeof(name), "frame_%04zu.ppm", frame);
  return root / entry.directory / name;
}

std::filesystem::path DatasetManifest::pose_path(const SequenceEntry& entry) const {
  return root / entry.directory / "poses.jsonl";
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json seqs = nlohmann::json::array();
  for (const auto& s : sequences) {
    seqs.push_back({{"id", s.id},
                    {"action", s.action},
                    {"frames", s.frames},
                    {"dir", s.directory},
                    {"camera",
                     {{"id", s.camera.id},
                      {"yaw", s.camera.yaw},
                      {"scale", s.camera.scale},
                      {"cx", s.camera.cx},
                      {"cy", s.camera.cy}}}});
  }
  return {{"format", "rpsm-dataset"},
          {"version", 1},
          {"joints", joints},
          {"parents", parents},
          {"image", {{"width", image_width}, {"height", image_height}, {"channels", 3}}},
          {"seed", seed},
          {"sequences", seqs}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j, std::filesystem::path root) {
  if (j.value("format", "") != "rpsm-dataset") throw std::runtime_error("manifest is not an rpsm-dataset");
  DatasetManifest m;
  m.root = std::move(root);
  m.joints = j.at("joints").get<std::size_t>();
  m.parents = j.at("parents").get<std::vector<std::size_t>>();
  m.image_width = j.at("image").at("width").get<std::size_t>();
  m.image_height = j.at("image").at("height").get<std::size_t>();
  m.seed = j.value("seed", std::uint64_t{0});
  if (m.parents.size() != m.joints) throw std::runtime_error("manifest parents do not match joint count");
  for (const auto& s : j.at("sequences")) {
    SequenceEntry e;
    e.id = s.at("id").get<std::string>();
    e.action = s.at("action").get<std::string>();
    e.frames = s.at("frames").get<std::size_t>();
    e.directory = s.at("dir").get<std::string>();
    const auto& cam = s.at("camera");
    e.camera.id = cam.at("id").get<int>();
    e.camera.yaw = cam.at("yaw").get<double>();
    e.camera.scale = cam.at("scale").get<double>();
    e.camera.cx = cam.at("cx").get<double>();
    e.camera.cy = cam.at("cy").get<double>();
    m.sequences.push_back(std::move(e));
  }
  return m;
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    return from_json(j, dir);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed manifest " + path.string() + ": " + e.what());
  }
}

nlohmann::json to_json(const PoseRecord& record) {
  nlohmann::json joints = nlohmann::json::array();
  for (const auto& p : record.joints) joints.push_back(vec3(p));
  return {{"seq", record.sequence}, {"frame", record.frame}, {"root", vec3(record.root)}, {"joints", joints}};
}

PoseRecord pose_record_from_json(const nlohmann::json& j) {
  PoseRecord r;
  r.sequence = j.at("seq").get<std::string>();
  r.frame = j.at("frame").get<std::size_t>();
  r.root = parse_vec3(j.at("root"));
  for (const auto& p : j.at("joints")) r.joints.push_back(parse_vec3(p));
  return r;
}

DatasetManifest generate_dataset(const GenerateOptions& options, const Skeleton& skeleton) {
  if (options.out_dir.empty()) throw std::invalid_argument("generate_dataset: output directory required");
  if (options.sequences == 0 || options.frames == 0) {
    throw std::invalid_argument("generate_dataset: need at least one sequence and one frame");
  }
  std::error_code ec;
  std::filesystem::create_directories(options.out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + options.out_dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.root = options.out_dir;
  manifest.joints = skeleton.joints();
  manifest.parents = skeleton.parents();
  manifest.image_height = options.image_extent;
  manifest.image_width = options.image_extent;
  manifest.seed = options.seed;

  Rng rng(options.seed);
  const double scale = kPixelsPerMm * static_cast<double>(options.image_extent) / 128.0;
  constexpr Action kFamilies[] = {Action::walk, Action::wave, Action::box};

  for (std::size_t i = 0; i < options.sequences; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "%04zu", i);
    SequenceEntry entry;
    entry.id = id;
    entry.directory = "seq_" + entry.id;
    entry.frames = options.frames;
    const Action action = kFamilies[i % 3];
    entry.action = to_string(action);
    entry.camera.id = static_cast<int>(std::uniform_int_distribution<int>(0, 3)(rng));
    entry.camera.yaw = (entry.camera.id - 1.5) * kCameraSpacingDeg * std::numbers::pi / 180.0;
    entry.camera.scale = scale;
    entry.camera.cx = options.image_extent / 2.0;
    entry.camera.cy = options.image_extent / 2.0 - scale * kFigureCentreMm;

    const MotionParams motion = sample_motion(skeleton, action, options.frames, rng);
    const auto world = animate(skeleton, motion);

    const auto dir = options.out_dir / entry.directory;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
    std::ofstream poses(manifest.pose_path(entry), std::ios::trunc);
    if (!poses) throw std::runtime_error("cannot write " + manifest.pose_path(entry).string());

    for (std::size_t t = 0; t < options.frames; ++t) {
      Pose3 camera_space(world[t].size());
      for (std::size_t j = 0; j < world[t].size(); ++j) camera_space[j] = entry.camera.to_camera(world[t][j]);
      PoseRecord record{entry.id, t, camera_space[0], root_relative(camera_space)};
      poses << to_json(record).dump() << '\n';
      write_ppm(manifest.frame_path(entry, t),
                render_frame(skeleton, camera_space, entry.camera, options.image_extent, options.image_extent));
    }
    if (!poses) throw std::runtime_error("failed writing " + manifest.pose_path(entry).string());
    manifest.sequences.push_back(std::move(entry));
  }

  std::ofstream out(options.out_dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest in " + options.out_dir.string());
  out << manifest.to_json().dump(2) << '\n';
  return manifest;
}

std::vector<PoseRecord> read_pose_records(const DatasetManifest& manifest, const SequenceEntry& entry) {
  std::ifstream in(manifest.pose_path(entry));
  if (!in) throw dataset_error(entry.id, "missing pose file " + manifest.pose_path(entry).string());
  std::vector<PoseRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(pose_record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw dataset_error(entry.id, "malformed annotation on line " + std::to_string(line_no) + ": " + e.what());
    }
    const auto& r = records.back();
    if (r.joints.size() != manifest.joints) {
      throw dataset_error(entry.id, "annotation line " + std::to_string(line_no) + " has " +
                                        std::to_string(r.joints.size()) + " joints, expected " +
                                        std::to_string(manifest.joints));
    }
    if (r.frame != records.size() - 1) throw dataset_error(entry.id, "annotations out of frame order");
  }
  if (records.size() != entry.frames) {
    throw dataset_error(entry.id, "expected " + std::to_string(entry.frames) + " annotations, found " +
                                      std::to_string(records.size()));
  }
  return records;
}

CropBox subject_crop(const PoseRecord& record, const OrthoCamera& camera, double side) {
  double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
  for (const auto& joint : record.joints) {
    const Eigen::Vector2d uv = camera.project(record.root + joint);
    lo_x = std::min(lo_x, uv.x());
    hi_x = std::max(hi_x, uv.x());
    lo_y = std::min(lo_y, uv.y());
    hi_y = std::max(hi_y, uv.y());
  }
  return {(lo_x + hi_x) / 2.0 - side / 2.0, (lo_y + hi_y) / 2.0 - side / 2.0, side};
}

double sequence_crop_side(const std::vector<PoseRecord>& records, const OrthoCamera& camera) {
  double side = 1.0;
  for (const auto& r : records) {
    double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
    for (const auto& joint : r.joints) {
      const Eigen::Vector2d uv = camera.project(r.root + joint);
      lo_x = std::min(lo_x, uv.x());
      hi_x = std::max(hi_x, uv.x());
      lo_y = std::min(lo_y, uv.y());
      hi_y = std::max(hi_y, uv.y());
    }
    side = std::max({side, hi_x - lo_x, hi_y - lo_y});
  }
  return side * kCropMargin;
}

LoadedSequence load_sequence(const DatasetManifest& manifest, const SequenceEntry& entry, std::size_t input_extent) {
  const auto records = read_pose_records(manifest, entry);
  const double side = sequence_crop_side(records, entry.camera);

  LoadedSequence seq;
  seq.id = entry.id;
  seq.action = entry.action;
  seq.joints = manifest.joints;
  std::vector<Image> frames;
  frames.reserve(records.size());
  for (const auto& r : records) {
    Image raw;
    try {
      raw = read_ppm(manifest.frame_path(entry, r.frame));
    } catch (const std::exception& e) {
      throw dataset_error(entry.id, e.what());
    }
    frames.push_back(crop_resize(raw, subject_crop(r, entry.camera, side), input_extent));
    const auto flat = flatten(r.joints);
    seq.poses_mm.insert(seq.poses_mm.end(), flat.begin(), flat.end());
  }
  seq.frames = to_tensor(frames);
  return seq;
}

std::vector<LoadedSequence> load_sequences(const DatasetManifest& manifest, std::size_t input_extent) {
  std::vector<LoadedSequence> out;
  out.reserve(manifest.sequences.size());
  for (const auto& entry : manifest.sequences) out.push_back(load_sequence(manifest, entry, input_extent));
  return out;
}

}  // namespace rpsm
