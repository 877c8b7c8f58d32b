#include "rpsm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rpsm {

namespace {

constexpr double kPi = std::numbers::pi;

// Joint indices of the 17-joint tree.
enum : std::size_t {
  kPelvis, kRHip, kRKnee, kRAnkle, kLHip, kLKnee, kLAnkle, kSpine, kThorax, kNeck, kHead,
  kLShoulder, kLElbow, kLWrist, kRShoulder, kRElbow, kRWrist
};

Eigen::Matrix3d euler(const std::array<double, 3>& a) {
  return (Eigen::AngleAxisd(a[2], Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(a[1], Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(a[0], Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

double evaluate(double base, const std::vector<Sinusoid>& terms, double seconds) {
  double v = base;
  for (const auto& s : terms) v += s.amplitude * std::sin(2.0 * kPi * s.frequency * seconds + s.phase);
  return v;
}

double segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b, double& t) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

}  // namespace

Skeleton::Skeleton(std::vector<std::size_t> parents, std::vector<double> bone_lengths,
                   std::vector<Eigen::Vector3d> rest_directions)
    : parents_(std::move(parents)), lengths_(std::move(bone_lengths)), directions_(std::move(rest_directions)) {
  const std::size_t n = parents_.size();
  if (n == 0 || lengths_.size() != n || directions_.size() != n) {
    throw std::invalid_argument("skeleton: parents, bone lengths and rest directions must have equal non-zero size");
  }
  if (parents_[0] != 0) throw std::invalid_argument("skeleton: joint 0 must be the root (its own parent)");
  for (std::size_t j = 1; j < n; ++j) {
    if (parents_[j] >= n || parents_[j] == j) {
      throw std::invalid_argument("skeleton: joint " + std::to_string(j) + " has invalid parent");
    }
    if (!(lengths_[j] > 0.0)) throw std::invalid_argument("skeleton: bone " + std::to_string(j) + " has non-positive length");
    if (directions_[j].norm() == 0.0) throw std::invalid_argument("skeleton: bone " + std::to_string(j) + " has no direction");
    directions_[j].normalize();
  }
  // Depth of each joint; a walk longer than n steps means a cycle.
  std::vector<std::size_t> depth(n, 0);
  for (std::size_t j = 1; j < n; ++j) {
    std::size_t steps = 0;
    for (std::size_t k = j; k != 0; k = parents_[k]) {
      if (++steps > n) throw std::invalid_argument("skeleton: parent graph has a cycle through joint " + std::to_string(j));
    }
    depth[j] = steps;
  }
  order_.resize(n);
  for (std::size_t j = 0; j < n; ++j) order_[j] = j;
  std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return depth[a] < depth[b]; });
}

Skeleton Skeleton::human17() {
  using V = Eigen::Vector3d;
  const std::vector<std::size_t> parents{0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15};
  const std::vector<V> offsets{
      V::Zero(),          V(-130, 0, 0),  V(0, -450, 0), V(0, -440, 0),  // pelvis, right leg
      V(130, 0, 0),       V(0, -450, 0),  V(0, -440, 0),                 // left leg
      V(0, 230, 0),       V(0, 240, 0),   V(0, 110, 0),  V(0, 120, 0),   // spine .. head
      V(160, 0, 0),       V(0, -280, 0),  V(0, -250, 0),                 // left arm
      V(-160, 0, 0),      V(0, -280, 0),  V(0, -250, 0)};                // right arm
  std::vector<double> lengths(offsets.size(), 0.0);
  std::vector<V> directions(offsets.size(), V::UnitY());
  for (std::size_t j = 1; j < offsets.size(); ++j) {
    lengths[j] = offsets[j].norm();
    directions[j] = offsets[j] / lengths[j];
  }
  lengths[0] = 1.0;  // unused for the root
  return Skeleton(parents, lengths, directions);
}

double Skeleton::height() const {
  const Pose3 rest = forward_kinematics(*this, std::vector<Eigen::Matrix3d>(joints(), Eigen::Matrix3d::Identity()));
  double lo = rest[0].y(), hi = rest[0].y();
  for (const auto& p : rest) {
    lo = std::min(lo, p.y());
    hi = std::max(hi, p.y());
  }
  return hi - lo;
}

Pose3 forward_kinematics(const Skeleton& skeleton, const std::vector<Eigen::Matrix3d>& rotations,
                         const Eigen::Vector3d& root_position) {
  const std::size_t n = skeleton.joints();
  if (rotations.size() != n) {
    throw std::invalid_argument("forward_kinematics: " + std::to_string(rotations.size()) + " rotations for " +
                                std::to_string(n) + " joints");
  }
  std::vector<Eigen::Matrix3d> global(n);
  Pose3 positions(n);
  for (std::size_t j : skeleton.order()) {
    if (j == 0) {
      global[0] = rotations[0];
      positions[0] = root_position;
      continue;
    }
    const std::size_t p = skeleton.parents()[j];
    global[j] = global[p] * rotations[j];
    positions[j] = positions[p] + global[p] * (skeleton.bone_lengths()[j] * skeleton.rest_directions()[j]);
  }
  return positions;
}

Pose3 root_relative(const Pose3& pose) {
  Pose3 out(pose.size());
  for (std::size_t j = 0; j < pose.size(); ++j) out[j] = pose[j] - pose[0];
  return out;
}

std::vector<double> flatten(const Pose3& pose) {
  std::vector<double> out;
  out.reserve(pose.size() * 3);
  for (const auto& p : pose) out.insert(out.end(), {p.x(), p.y(), p.z()});
  return out;
}

Pose3 unflatten(const std::vector<double>& values, std::size_t offset, std::size_t joints) {
  if (offset + 3 * joints > values.size()) throw std::out_of_range("unflatten: not enough values");
  Pose3 out(joints);
  for (std::size_t j = 0; j < joints; ++j) {
    out[j] = {values[offset + 3 * j], values[offset + 3 * j + 1], values[offset + 3 * j + 2]};
  }
  return out;
}

std::string to_string(Action action) {
  switch (action) {
    case Action::walk: return "walk";
    case Action::wave: return "wave";
    case Action::box: return "box";
  }
  return "unknown";
}

Action parse_action(const std::string& text) {
  if (text == "walk") return Action::walk;
  if (text == "wave") return Action::wave;
  if (text == "box") return Action::box;
  throw std::invalid_argument("unknown action '" + text + "'");
}

std::vector<Eigen::Matrix3d> MotionParams::rotations_at(std::size_t frame) const {
  const double seconds = static_cast<double>(frame) / fps;
  std::vector<Eigen::Matrix3d> out;
  out.reserve(joints.size());
  for (std::size_t j = 0; j < joints.size(); ++j) {
    std::array<double, 3> angles{};
    for (int a = 0; a < 3; ++a) angles[a] = evaluate(joints[j].base[a], joints[j].terms[a], seconds);
    Eigen::Matrix3d r = euler(angles);
    if (j == 0) r = Eigen::AngleAxisd(heading, Eigen::Vector3d::UnitY()).toRotationMatrix() * r;
    out.push_back(r);
  }
  return out;
}

Eigen::Vector3d MotionParams::root_at(std::size_t frame) const {
  const double phase = 2.0 * kPi * root_sway_frequency * static_cast<double>(frame) / fps;
  return root_offset + Eigen::Vector3d(root_sway.x() * std::sin(phase), root_sway.y() * std::sin(2.0 * phase),
                                       root_sway.z() * std::cos(phase));
}

MotionParams sample_motion(const Skeleton& skeleton, Action action, std::size_t frames, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto phase = [&] { return range(0.0, 2.0 * kPi); };

  MotionParams m;
  m.action = action;
  m.frames = frames;
  m.joints.resize(skeleton.joints());
  m.heading = range(-0.3, 0.3);

  // Low-amplitude jitter on every joint so no limb is perfectly static.
  for (auto& joint : m.joints) {
    for (int a = 0; a < 3; ++a) joint.terms[a].push_back({range(0.0, 0.04), range(0.2, 0.6), phase()});
  }

  const double gain = range(0.75, 1.25);
  const double freq = range(0.6, 1.1);
  auto add = [&](std::size_t joint, int axis, double amplitude, double frequency, double ph) {
    if (joint < m.joints.size()) m.joints[joint].terms[axis].push_back({gain * amplitude, frequency, ph});
  };
  auto set_base = [&](std::size_t joint, int axis, double value) {
    if (joint < m.joints.size()) m.joints[joint].base[axis] = value;
  };
  const bool standard = skeleton.joints() == 17;

  if (standard && action == Action::walk) {
    const double p = phase();
    add(kRHip, 0, 0.45, freq, p);
    add(kLHip, 0, 0.45, freq, p + kPi);
    set_base(kRKnee, 0, 0.35);
    set_base(kLKnee, 0, 0.35);
    add(kRKnee, 0, 0.30, freq, p - kPi / 2);
    add(kLKnee, 0, 0.30, freq, p + kPi / 2);
    add(kRShoulder, 0, 0.35, freq, p + kPi);
    add(kLShoulder, 0, 0.35, freq, p);
    set_base(kRElbow, 0, -0.3);
    set_base(kLElbow, 0, -0.3);
    add(kRElbow, 0, 0.15, freq, p + kPi);
    add(kLElbow, 0, 0.15, freq, p);
    add(kSpine, 1, 0.08, freq, p);
    m.root_sway = {range(100, 250), 20.0, range(50, 200)};
    m.root_sway_frequency = freq / 4.0;
  } else if (standard && action == Action::wave) {
    const bool left = unit(rng) < 0.5;
    const std::size_t shoulder = left ? kLShoulder : kRShoulder;
    const std::size_t elbow = left ? kLElbow : kRElbow;
    const std::size_t other = left ? kRShoulder : kLShoulder;
    const double side = left ? 1.0 : -1.0;
    set_base(shoulder, 2, side * range(2.0, 2.5));
    add(shoulder, 2, 0.2, freq, phase());
    add(elbow, 2, side * 0.6, 2.0 * freq, phase());
    add(other, 0, 0.15, freq / 2.0, phase());
    add(kSpine, 2, 0.06, freq / 2.0, phase());
    add(kPelvis, 1, 0.25, freq / 3.0, phase());
    m.root_sway = {range(20, 60), 5.0, range(20, 60)};
    m.root_sway_frequency = freq / 3.0;
  } else if (standard && action == Action::box) {
    const double p = phase();
    set_base(kRShoulder, 0, -1.3);
    set_base(kLShoulder, 0, -1.3);
    add(kRShoulder, 0, 0.25, 1.5 * freq, p);
    add(kLShoulder, 0, 0.25, 1.5 * freq, p + kPi);
    set_base(kRElbow, 0, -1.2);
    set_base(kLElbow, 0, -1.2);
    add(kRElbow, 0, 0.6, 1.5 * freq, p);
    add(kLElbow, 0, 0.6, 1.5 * freq, p + kPi);
    set_base(kRShoulder, 2, -0.2);
    set_base(kLShoulder, 2, 0.2);
    add(kSpine, 1, 0.25, 1.5 * freq, p + kPi / 2);
    set_base(kRKnee, 0, 0.25);
    set_base(kLKnee, 0, 0.25);
    add(kRHip, 0, 0.1, 1.5 * freq, phase());
    add(kLHip, 0, 0.1, 1.5 * freq, phase());
    m.root_sway = {range(40, 120), 15.0, range(40, 120)};
    m.root_sway_frequency = freq / 2.0;
  } else {
    // Generic skeletons: random swings on every joint.
    for (std::size_t j = 0; j < m.joints.size(); ++j) {
      for (int a = 0; a < 3; ++a) add(j, a, range(0.0, 0.3), freq * range(0.5, 1.5), phase());
    }
    m.root_sway = {range(20, 100), 10.0, range(20, 100)};
    m.root_sway_frequency = freq / 3.0;
  }

  const double bound = kMaxStepFraction * skeleton.height();
  while (max_joint_step(skeleton, m) >= bound) {
    for (auto& joint : m.joints) {
      for (auto& axis : joint.terms) {
        for (auto& s : axis) s.frequency *= 0.8;
      }
    }
    m.root_sway_frequency *= 0.8;
  }
  return m;
}

std::vector<Pose3> animate(const Skeleton& skeleton, const MotionParams& motion) {
  std::vector<Pose3> poses;
  poses.reserve(motion.frames);
  for (std::size_t t = 0; t < motion.frames; ++t) {
    poses.push_back(forward_kinematics(skeleton, motion.rotations_at(t), motion.root_at(t)));
  }
  return poses;
}

double max_joint_step(const Skeleton& skeleton, const MotionParams& motion) {
  const auto poses = animate(skeleton, motion);
  double worst = 0.0;
  for (std::size_t t = 1; t < poses.size(); ++t) {
    for (std::size_t j = 0; j < poses[t].size(); ++j) worst = std::max(worst, (poses[t][j] - poses[t - 1][j]).norm());
  }
  return worst;
}

Eigen::Vector3d OrthoCamera::to_camera(const Eigen::Vector3d& world) const {
  return Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()) * world;
}

Image render_frame(const Skeleton& skeleton, const Pose3& positions, const OrthoCamera& camera, std::size_t height,
                   std::size_t width, const RenderStyle& style) {
  const std::size_t n = skeleton.joints();
  if (positions.size() != n) {
    throw std::invalid_argument("render_frame: " + std::to_string(positions.size()) + " positions for " +
                                std::to_string(n) + " joints");
  }
  std::vector<Eigen::Vector2d> uv(n);
  bool any_inside = false;
  for (std::size_t j = 0; j < n; ++j) {
    if (!positions[j].allFinite()) throw std::invalid_argument("render_frame: non-finite joint position");
    uv[j] = camera.project(positions[j]);
    any_inside |= uv[j].x() >= 0 && uv[j].y() >= 0 && uv[j].x() < static_cast<double>(width) &&
                  uv[j].y() < static_cast<double>(height);
  }
  if (!any_inside) throw std::invalid_argument("render_frame: every joint projects outside the image (degenerate camera)");

  const double extent_scale = static_cast<double>(std::min(height, width)) / 128.0;
  const double bone_radius = style.bone_radius * extent_scale;
  const double joint_radius = style.joint_radius * extent_scale;
  Image image(3, height, width);

  // Visits pixels within `reach` of the segment a-b and hands over the
  // anti-aliased coverage and the segment parameter of the closest point.
  auto splat = [&](const Eigen::Vector2d& a, const Eigen::Vector2d& b, double radius, auto&& write) {
    const double reach = radius + 1.0;
    const auto x0 = static_cast<std::ptrdiff_t>(std::floor(std::min(a.x(), b.x()) - reach));
    const auto x1 = static_cast<std::ptrdiff_t>(std::ceil(std::max(a.x(), b.x()) + reach));
    const auto y0 = static_cast<std::ptrdiff_t>(std::floor(std::min(a.y(), b.y()) - reach));
    const auto y1 = static_cast<std::ptrdiff_t>(std::ceil(std::max(a.y(), b.y()) + reach));
    for (auto y = std::max<std::ptrdiff_t>(y0, 0); y <= std::min<std::ptrdiff_t>(y1, static_cast<std::ptrdiff_t>(height) - 1); ++y) {
      for (auto x = std::max<std::ptrdiff_t>(x0, 0); x <= std::min<std::ptrdiff_t>(x1, static_cast<std::ptrdiff_t>(width) - 1); ++x) {
        double t = 0.0;
        const double d = segment_distance({x + 0.5, y + 0.5}, a, b, t);
        const double coverage = std::clamp(radius + 0.5 - d, 0.0, 1.0);
        if (coverage > 0.0) write(static_cast<std::size_t>(y), static_cast<std::size_t>(x), coverage, t);
      }
    }
  };

  const double root_depth = positions[0].z();
  for (std::size_t j = 1; j < n; ++j) {
    const std::size_t p = skeleton.parents()[j];
    const double intensity = 0.35 + 0.65 * static_cast<double>(j) / static_cast<double>(std::max<std::size_t>(n - 1, 1));
    splat(uv[p], uv[j], bone_radius, [&](std::size_t y, std::size_t x, double coverage, double t) {
      const double z = (1.0 - t) * positions[p].z() + t * positions[j].z();
      const double shade = std::clamp(0.5 + (z - root_depth) / (2.0 * style.depth_range), 0.05, 1.0);
      image.at(0, y, x) = std::max(image.at(0, y, x), coverage * intensity);
      image.at(2, y, x) = std::max(image.at(2, y, x), coverage * shade);
    });
  }
  for (std::size_t j = 0; j < n; ++j) {
    splat(uv[j], uv[j], joint_radius, [&](std::size_t y, std::size_t x, double coverage, double) {
      image.at(1, y, x) = std::max(image.at(1, y, x), coverage);
    });
  }
  return image;
}

}  // namespace rpsm
