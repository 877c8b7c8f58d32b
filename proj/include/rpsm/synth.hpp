#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "rpsm/image.hpp"
#include "rpsm/layers.hpp"

namespace rpsm {

using Pose3 = std::vector<Eigen::Vector3d>;

/// Kinematic tree. Joint 0 is the root (its own parent); every other joint
/// hangs off its parent by `bone_lengths[j]` millimetres along
/// `rest_directions[j]` (unit vector, parent frame) when unrotated.
class Skeleton {
 public:
  Skeleton(std::vector<std::size_t> parents, std::vector<double> bone_lengths,
           std::vector<Eigen::Vector3d> rest_directions);

  /// 17-joint tree: pelvis, right leg ×3, left leg ×3, spine, thorax, neck,
  /// head, left arm ×3, right arm ×3. Millimetres, y up, x to the left, z
  /// forward.
  static Skeleton human17();

  std::size_t joints() const { return parents_.size(); }
  const std::vector<std::size_t>& parents() const { return parents_; }
  const std::vector<double>& bone_lengths() const { return lengths_; }
  const std::vector<Eigen::Vector3d>& rest_directions() const { return directions_; }
  /// Parents always precede children.
  const std::vector<std::size_t>& order() const { return order_; }
  /// Vertical extent of the rest pose.
  double height() const;

 private:
  std::vector<std::size_t> parents_;
  std::vector<double> lengths_;
  std::vector<Eigen::Vector3d> directions_;
  std::vector<std::size_t> order_;
};

/// Joint positions from per-joint local rotations. The rotation stored at
/// joint j turns the bones to j's children; the root rotation turns the
/// whole body about `root_position`.
Pose3 forward_kinematics(const Skeleton& skeleton, const std::vector<Eigen::Matrix3d>& rotations,
                         const Eigen::Vector3d& root_position = Eigen::Vector3d::Zero());
Pose3 root_relative(const Pose3& pose);
std::vector<double> flatten(const Pose3& pose);
Pose3 unflatten(const std::vector<double>& values, std::size_t offset, std::size_t joints);

enum class Action { walk, wave, box };
std::string to_string(Action action);
Action parse_action(const std::string& text);

struct Sinusoid {
  double amplitude = 0.0;
  double frequency = 0.0;  // Hz
  double phase = 0.0;
};

/// Euler angles (x, y, z) of one joint as base + at most three sinusoids.
struct JointMotion {
  std::array<double, 3> base{0.0, 0.0, 0.0};
  std::array<std::vector<Sinusoid>, 3> terms;
};

struct MotionParams {
  Action action = Action::walk;
  std::vector<JointMotion> joints;
  Eigen::Vector3d root_offset = Eigen::Vector3d::Zero();
  Eigen::Vector3d root_sway = Eigen::Vector3d::Zero();  // amplitude per axis
  double root_sway_frequency = 0.0;
  double heading = 0.0;  // radians about y
  std::size_t frames = 0;
  double fps = 20.0;

  std::vector<Eigen::Matrix3d> rotations_at(std::size_t frame) const;
  Eigen::Vector3d root_at(std::size_t frame) const;
};

/// Bound on any joint's frame-to-frame displacement, as a fraction of the
/// skeleton height.
inline constexpr double kMaxStepFraction = 0.1;

/// Samples a motion of the given family. Frequencies are shrunk until the
/// frame-to-frame displacement bound holds.
MotionParams sample_motion(const Skeleton& skeleton, Action action, std::size_t frames, Rng& rng);
double max_joint_step(const Skeleton& skeleton, const MotionParams& motion);
std::vector<Pose3> animate(const Skeleton& skeleton, const MotionParams& motion);

/// Orthographic camera: u = cx + scale·x, v = cy − scale·y (pixels, with
/// pixel centres at integer + 0.5). Depth z points toward the viewer.
struct OrthoCamera {
  int id = 0;
  double yaw = 0.0;     // radians, world → camera rotation about y
  double scale = 0.05;  // pixels per millimetre
  double cx = 64.0;
  double cy = 64.0;

  Eigen::Vector2d project(const Eigen::Vector3d& p) const { return {cx + scale * p.x(), cy - scale * p.y()}; }
  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const;
};

struct RenderStyle {
  double bone_radius = 3.0;  // pixels at 128-pixel extent, scaled with the image
  double joint_radius = 4.0;
  double depth_range = 1000.0;  // millimetres mapped across the depth shading
};

/// Stick-figure rendering of camera-space joints. Channel 0: anti-aliased
/// bones with a distinct intensity per bone; channel 1: joint discs;
/// channel 2: bones shaded by depth relative to the root.
Image render_frame(const Skeleton& skeleton, const Pose3& camera_positions, const OrthoCamera& camera,
                   std::size_t height, std::size_t width, const RenderStyle& style = {});

}  // namespace rpsm
