#include <doctest.h>

#include <fstream>
#include <sstream>

#include "rpsm/dataset.hpp"
#include "rpsm/train.hpp"
#include "support.hpp"

using namespace rpsm;

namespace {

std::vector<Eigen::Matrix3d> random_rotations(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::vector<Eigen::Matrix3d> out;
  for (std::size_t j = 0; j < n; ++j) {
    out.push_back((Eigen::AngleAxisd(u(rng), Eigen::Vector3d::UnitX()) *
                   Eigen::AngleAxisd(u(rng), Eigen::Vector3d::UnitY()) *
                   Eigen::AngleAxisd(u(rng), Eigen::Vector3d::UnitZ()))
                      .toRotationMatrix());
  }
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Intensity-weighted centroid of one channel, in pixels.
Eigen::Vector2d centroid(const Image& im, std::size_t c) {
  double w = 0.0, x = 0.0, y = 0.0;
  for (std::size_t r = 0; r < im.height; ++r)
    for (std::size_t q = 0; q < im.width; ++q) {
      const double v = im.at(c, r, q);
      w += v;
      x += v * (q + 0.5);
      y += v * (r + 0.5);
    }
  return {x / w, y / w};
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("skeleton validation") {
  const Eigen::Vector3d up = Eigen::Vector3d::UnitY();
  CHECK_THROWS(Skeleton({0, 2, 1}, {0, 1, 1}, {up, up, up}));  // cycle
  CHECK_THROWS(Skeleton({0, 0}, {0, 0}, {up, up}));            // zero bone
  CHECK_THROWS(Skeleton({1, 0}, {0, 1}, {up, up}));            // root not its own parent
  const auto h = Skeleton::human17();
  CHECK(h.joints() == 17);
  for (std::size_t i = 0; i < h.order().size(); ++i) {
    const auto j = h.order()[i];
    if (j == 0) continue;
    const auto parent_pos = std::find(h.order().begin(), h.order().end(), h.parents()[j]) - h.order().begin();
    CHECK(static_cast<std::size_t>(parent_pos) < i);
  }
}

TEST_CASE("identity rotations give the rest pose") {
  const auto s = Skeleton::human17();
  const auto pose = forward_kinematics(s, std::vector<Eigen::Matrix3d>(17, Eigen::Matrix3d::Identity()));
  CHECK(pose[0].norm() == 0.0);
  for (std::size_t j = 1; j < 17; ++j) {
    const Eigen::Vector3d want = pose[s.parents()[j]] + s.bone_lengths()[j] * s.rest_directions()[j];
    CHECK((pose[j] - want).norm() < 1e-12);
  }
}

TEST_CASE("bone lengths survive any rotation set") {
  const auto s = Skeleton::human17();
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pose = forward_kinematics(s, random_rotations(17, rng), {10.0, -4.0, 300.0});
    for (std::size_t j = 1; j < 17; ++j) {
      CHECK(std::abs((pose[j] - pose[s.parents()[j]]).norm() - s.bone_lengths()[j]) < 1e-9);
    }
  }
}

TEST_CASE("a root rotation rotates the root-relative pose") {
  const auto s = Skeleton::human17();
  Rng rng(2);
  auto rot = random_rotations(17, rng);
  const auto base = root_relative(forward_kinematics(s, rot));
  const Eigen::Matrix3d r = random_rotations(1, rng)[0];
  rot[0] = r * rot[0];
  const auto turned = root_relative(forward_kinematics(s, rot));
  for (std::size_t j = 0; j < 17; ++j) CHECK((turned[j] - r * base[j]).norm() < 1e-9);
}

TEST_CASE("sampled motion is smooth and reproducible") {
  const auto s = Skeleton::human17();
  for (Action a : {Action::walk, Action::wave, Action::box}) {
    Rng r1(3), r2(3);
    const auto m1 = sample_motion(s, a, 40, r1), m2 = sample_motion(s, a, 40, r2);
    CHECK(max_joint_step(s, m1) < kMaxStepFraction * s.height());
    const auto p1 = animate(s, m1), p2 = animate(s, m2);
    REQUIRE(p1.size() == 40);
    CHECK(flatten(p1[17 % 40]) == flatten(p2[17 % 40]));
    for (std::size_t t = 1; t < p1.size(); ++t) {
      double step = 0.0;
      for (std::size_t j = 0; j < 17; ++j) step = std::max(step, (p1[t][j] - p1[t - 1][j]).norm());
      CHECK(step < kMaxStepFraction * s.height());
    }
  }
}

TEST_CASE("a single joint at the camera centre renders a centred disc") {
  const Skeleton dot({0}, {0.0}, {Eigen::Vector3d::UnitY()});
  const OrthoCamera cam{0, 0.0, 0.05, 32.0, 32.0};
  const Image im = render_frame(dot, {Eigen::Vector3d::Zero()}, cam, 64, 64);
  const auto c = centroid(im, 1);
  CHECK(c.x() == doctest::Approx(32.0).epsilon(1e-9));
  CHECK(c.y() == doctest::Approx(32.0).epsilon(1e-9));
  CHECK(im.at(1, 32, 32) == 1.0);
  CHECK(im.at(1, 0, 0) == 0.0);
}

TEST_CASE("rendering stays in range and moves with the skeleton") {
  const auto s = Skeleton::human17();
  Rng rng(4);
  const auto pose = forward_kinematics(s, random_rotations(17, rng));
  const OrthoCamera cam{0, 0.0, 0.04, 64.0, 64.0};
  const Image a = render_frame(s, pose, cam, 128, 128);
  for (double v : a.data) CHECK((v >= 0.0 && v <= 1.0));

  Pose3 moved = pose;
  const Eigen::Vector3d offset{150.0, -100.0, 0.0};
  for (auto& p : moved) p += offset;
  const Image b = render_frame(s, moved, cam, 128, 128);
  const Eigen::Vector2d shift{cam.scale * offset.x(), -cam.scale * offset.y()};
  for (std::size_t c = 0; c < 3; ++c) CHECK((centroid(b, c) - centroid(a, c) - shift).norm() < 1.0);
  CHECK(render_frame(s, pose, cam, 128, 128) == a);

  Pose3 far = pose;
  for (auto& p : far) p += Eigen::Vector3d{1e6, 0, 0};
  CHECK_THROWS(render_frame(s, far, cam, 128, 128));
}

TEST_CASE("ppm round trip matches 8-bit quantization") {
  test::TempDir dir("ppm");
  Rng rng(5);
  Image im(3, 5, 7);
  std::uniform_real_distribution<double> u(-0.2, 1.2);
  for (auto& v : im.data) v = u(rng);
  write_ppm(dir / "x.ppm", im);
  CHECK(read_ppm(dir / "x.ppm") == quantize8(im));
}

TEST_CASE("crop_resize output is square and scale_about_center is the identity at 1") {
  Image im(3, 40, 60);
  for (std::size_t i = 0; i < im.data.size(); ++i) im.data[i] = (i % 13) / 13.0;
  const Image crop = crop_resize(im, {5.0, 3.0, 30.0}, 16);
  CHECK(crop.height == 16);
  CHECK(crop.width == 16);
  CHECK(scale_about_center(im, 1.0) == im);
}

}  // TEST_SUITE

TEST_SUITE("dataset") {

TEST_CASE("generation cardinality, determinism and bone lengths") {
  test::TempDir a("gen_a"), b("gen_b");
  GenerateOptions o;
  o.sequences = 4;
  o.frames = 20;
  o.seed = 9;
  o.out_dir = a.path();
  const auto m = generate_dataset(o);
  o.out_dir = b.path();
  generate_dataset(o);

  REQUIRE(m.sequences.size() == 4);
  const auto skel = Skeleton::human17();
  for (const auto& e : m.sequences) {
    CHECK(e.frames == 20);
    const auto records = read_pose_records(m, e);
    CHECK(records.size() == 20);
    CHECK(slurp(m.pose_path(e)) == slurp(b.path() / e.directory / "poses.jsonl"));
    for (std::size_t t = 0; t < 20; ++t) CHECK(std::filesystem::exists(m.frame_path(e, t)));
    for (const auto& r : records) {
      CHECK(r.joints[0].norm() == 0.0);
      for (std::size_t j = 1; j < 17; ++j) {
        const double len = (r.joints[j] - r.joints[skel.parents()[j]]).norm();
        CHECK(std::abs(len - skel.bone_lengths()[j]) / skel.bone_lengths()[j] < 1e-9);
      }
    }
  }
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  const auto reread = DatasetManifest::load(a.path());
  CHECK(reread.to_json() == m.to_json());
}

TEST_CASE("loading: square crops, purity and the normalized range") {
  test::TempDir dir("load");
  GenerateOptions o;
  o.sequences = 3;
  o.frames = 8;
  o.out_dir = dir.path();
  const auto m = generate_dataset(o);
  const auto first = load_sequences(m, 64);
  const auto second = load_sequences(m, 64);
  REQUIRE(first.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(first[i].frames.shape() == Shape{8, 3, 64, 64});
    CHECK(first[i].poses_mm == second[i].poses_mm);
    CHECK(test::values(first[i].frames) == test::values(second[i].frames));
  }
  const DatasetSplit split{Split::train, first};
  const auto stats = compute_normalization(split);
  for (const auto& s : first) {
    for (double v : normalize_pose(s.poses_mm, stats)) CHECK((v >= 0.0 && v <= 1.0));
  }

  // poses stored on disk reload bitwise
  const auto records = read_pose_records(m, m.sequences[0]);
  for (std::size_t t = 0; t < 8; ++t) {
    const auto flat = flatten(records[t].joints);
    CHECK(std::equal(flat.begin(), flat.end(), first[0].poses_mm.begin() + t * 51));
  }
}

TEST_CASE("subject crops are square and centred on the projected joints") {
  PoseRecord r;
  r.root = {0, 0, 0};
  r.joints = {{0, 0, 0}, {100, 400, 0}, {-300, -200, 0}};
  const OrthoCamera cam{0, 0.0, 0.1, 50.0, 50.0};
  const CropBox box = subject_crop(r, cam, 80.0);
  CHECK(box.side == 80.0);
  CHECK(box.x0 + 40.0 == doctest::Approx(50.0 + 0.1 * (-100.0)));
  CHECK(box.y0 + 40.0 == doctest::Approx(50.0 - 0.1 * 100.0));
  CHECK(sequence_crop_side({r}, cam) == doctest::Approx(1.25 * 60.0));
}

TEST_CASE("malformed annotations name the sequence") {
  test::TempDir dir("bad");
  GenerateOptions o;
  o.sequences = 2;
  o.frames = 4;
  o.out_dir = dir.path();
  const auto m = generate_dataset(o);
  const auto& e = m.sequences[1];
  {
    std::ofstream out(m.pose_path(e), std::ios::app);
    out << "{\"seq\": \"0001\", \"frame\": 9}\n";
  }
  try {
    read_pose_records(m, e);
    FAIL("expected an error");
  } catch (const std::exception& ex) {
    CHECK(std::string(ex.what()).find("0001") != std::string::npos);
  }
  std::filesystem::remove(m.frame_path(m.sequences[0], 2));
  CHECK_THROWS(load_sequence(m, m.sequences[0], 64));
}

}  // TEST_SUITE
