#include <doctest.h>

#include <fstream>
#include <limits>
#include <sstream>

#include "rpsm/dataset.hpp"
#include "rpsm/train.hpp"
#include "support.hpp"

using namespace rpsm;
using rpsm::test::random_tensor;
using rpsm::test::values;

namespace {

// Plain loops over the raw buffers: Σ_k α_k Σ_t Σ_d (p − t)².
double scalar_loss(const std::vector<Tensor>& preds, const Tensor& target, const std::vector<double>& alphas) {
  double total = 0.0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    double stage = 0.0;
    for (std::size_t i = 0; i < target.numel(); ++i) {
      const double d = preds[k].at(i) - target.at(i);
      stage += d * d;
    }
    total += alphas[k] * stage;
  }
  return total;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

ModelConfig tiny_model(std::size_t stages, std::size_t clip) {
  ModelConfig c;
  c.stages = stages;
  c.clip_length = clip;
  return c;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("sequence loss examples") {
  const Tensor t = Tensor::from({1, 6}, {0, 0, 0, 1, 2, 3});
  CHECK(sequence_loss({t, t}, t, {1, 1}).item() == 0.0);
  const Tensor off = Tensor::from({1, 6}, {1, 0, 0, 1, 2, 3});
  CHECK(sequence_loss({off}, t, {1}).item() == 1.0);

  // two frames, two joints, two stages
  const Tensor gt = Tensor::from({2, 6}, {0, 0, 0, 1, 1, 1, 2, 2, 2, 0, 0, 0});
  const Tensor s1 = Tensor::from({2, 6}, {1, 0, 0, 1, 1, 1, 2, 2, 2, 0, 0, 2});
  const Tensor s2 = Tensor::from({2, 6}, {0, 0, 0, 1, 1, 4, 2, 2, 1, 0, 0, 0});
  // stage 1: 1 + 4 = 5, stage 2: 9 + 1 = 10
  CHECK(sequence_loss({s1, s2}, gt, {1, 1}).item() == 15.0);
  CHECK(sequence_loss({s1, s2}, gt, {2, 0.5}).item() == 15.0);

  CHECK_THROWS(sequence_loss({s1}, gt, {1, 1}));
  CHECK_THROWS(sequence_loss({Tensor::zeros({1, 6})}, gt, {1}));
  CHECK_THROWS(sequence_loss({s1}, gt, {-1}));
}

TEST_CASE("sequence loss matches a scalar double sum") {
  Rng rng(1);
  std::uniform_int_distribution<std::size_t> small(1, 4);
  std::uniform_real_distribution<double> alpha(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = small(rng), t = small(rng), p = 1 + small(rng);
    std::vector<Tensor> preds;
    std::vector<double> alphas;
    for (std::size_t s = 0; s < k; ++s) {
      preds.push_back(random_tensor({t, 3 * p}, rng, false, -5, 5));
      alphas.push_back(alpha(rng));
    }
    const Tensor target = random_tensor({t, 3 * p}, rng, false, -5, 5);
    const double want = scalar_loss(preds, target, alphas);
    CHECK(std::abs(sequence_loss(preds, target, alphas).item() - want) <= 1e-9 * std::max(1.0, std::abs(want)));
  }
}

TEST_CASE("normalization examples") {
  const NormalizationStats s{{0, 0, 5}, {2, 2, 5}, Split::train};
  const auto n = normalize_pose(std::vector<double>{1, 2, 7}, s);
  CHECK(n == std::vector<double>{0.5, 1.0, 0.0});
  CHECK(denormalize_pose(n, s) == std::vector<double>{1, 2, 5});
  CHECK_THROWS(normalize_pose(std::vector<double>{1, 2}, s));
}

TEST_CASE("normalization round trip on random poses") {
  Rng rng(2);
  std::uniform_real_distribution<double> u(-1000, 1000), w(0.001, 500);
  for (int trial = 0; trial < 1000; ++trial) {
    NormalizationStats s;
    std::vector<double> pose;
    for (int d = 0; d < 6; ++d) {
      s.min.push_back(u(rng));
      s.max.push_back(s.min.back() + w(rng));
      pose.push_back(s.min.back() + (s.max.back() - s.min.back()) * (u(rng) + 1000) / 2000);
    }
    const auto back = denormalize_pose(normalize_pose(pose, s), s);
    for (int d = 0; d < 6; ++d) CHECK(std::abs(back[d] - pose[d]) < 1e-12 * std::max(1.0, std::abs(pose[d])));
  }
}

TEST_CASE("statistics come only from training splits") {
  LoadedSequence seq{"0", "walk", Tensor::zeros({2, 3, 4, 4}), {0, 0, 0, 1, 2, 3, 0, 0, 0, 3, 2, 1}, 2};
  CHECK_THROWS(compute_normalization(DatasetSplit{Split::test, {seq}}));
  const auto stats = compute_normalization(DatasetSplit{Split::train, {seq}});
  CHECK(stats.provenance == Split::train);
  CHECK(stats.min == std::vector<double>{0, 0, 0, 1, 2, 1});
  CHECK(stats.max == std::vector<double>{0, 0, 0, 3, 2, 3});

  // the scale envelope widens x and y only
  const auto wide = compute_normalization(DatasetSplit{Split::train, {seq}}, 0.5, 2.0);
  CHECK(wide.min == std::vector<double>{0, 0, 0, 0.5, 1, 1});
  CHECK(wide.max == std::vector<double>{0, 0, 0, 6, 4, 3});
}

TEST_CASE("clip decomposition examples") {
  auto frames = [](std::size_t t) {
    std::vector<double> v(t * 3);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i / 3);
    return Tensor::from({t, 3, 1, 1}, v);
  };
  auto poses = [](std::size_t t) {
    std::vector<double> v(t * 3);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i / 3);
    return v;
  };
  CHECK(decompose_clips(frames(10), poses(10), 5).size() == 2);

  const auto seven = decompose_clips(frames(7), poses(7), 5);
  REQUIRE(seven.size() == 2);
  CHECK(seven[1].source == std::vector<std::size_t>{5, 6, 6, 6, 6});
  CHECK(seven[1].valid == 2);
  CHECK(seven[1].frames.at(3 * 4) == 6.0);
  CHECK(seven[1].poses[3 * 4] == 6.0);

  const auto three = decompose_clips(frames(3), poses(3), 5);
  REQUIRE(three.size() == 1);
  CHECK(three[0].source == std::vector<std::size_t>{0, 1, 2, 2, 2});
}

TEST_CASE("clip decomposition covers each frame exactly once") {
  Rng rng(3);
  std::uniform_int_distribution<std::size_t> len(1, 60), clip(1, 12);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t t = len(rng), c = clip(rng);
    const auto clips = decompose_clips(Tensor::zeros({t, 1, 1, 1}), std::vector<double>(3 * t), c);
    CHECK(clips.size() == (t + c - 1) / c);
    std::vector<int> seen(t, 0);
    for (const auto& cl : clips) {
      CHECK(cl.frames.dim(0) == c);
      CHECK(cl.poses.size() == 3 * c);
      for (std::size_t i = 0; i < cl.valid; ++i) ++seen[cl.source[i]];
      for (std::size_t i = cl.valid; i < c; ++i) CHECK(cl.source[i] == t - 1);
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](int n) { return n == 1; }));
  }
}

TEST_CASE("scale augmentation") {
  test::TempDir dir("aug");
  GenerateOptions o;
  o.sequences = 1;
  o.frames = 2;
  o.out_dir = dir.path();
  const auto m = generate_dataset(o);
  const auto seq = load_sequence(m, m.sequences[0], 64);

  const auto [same_frames, same_poses] = augment_scale(seq.frames, seq.poses_mm, 1.0);
  CHECK(values(same_frames) == values(seq.frames));
  CHECK(same_poses == seq.poses_mm);

  const auto [big_frames, big_poses] = augment_scale(seq.frames, seq.poses_mm, 1.1);
  for (std::size_t i = 0; i < seq.poses_mm.size(); ++i) {
    const double factor = i % 3 == 2 ? 1.0 : 1.1;
    CHECK(big_poses[i] == doctest::Approx(seq.poses_mm[i] * factor).epsilon(1e-12));
  }
  // the joint-disc channel spreads about the centre by the same factor
  auto spread = [](const Tensor& f) {
    double w = 0.0, r = 0.0;
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        const double v = f.at((1 * 64 + y) * 64 + x);
        w += v;
        r += v * std::hypot(x + 0.5 - 32.0, y + 0.5 - 32.0);
      }
    return r / w;
  };
  CHECK(spread(big_frames) / spread(seq.frames) == doctest::Approx(1.1).epsilon(0.03));
  CHECK_THROWS(augment_scale(seq.frames, seq.poses_mm, 1.2));

  Rng a(5), b(5);
  std::uniform_real_distribution<double> d(0.9, 1.1);
  for (int i = 0; i < 10; ++i) CHECK(d(a) == d(b));
}

TEST_CASE("adam closed forms") {
  Tensor p = Tensor::from({3}, {1, -2, 0.5}, true);
  Adam still({{"p", p}}, {0.1, 0.0});
  p.grad_buffer();
  still.step();
  CHECK(values(p) == std::vector<double>{1, -2, 0.5});

  Tensor q = Tensor::from({3}, {1, -2, 0.5}, true);
  Adam first({{"q", q}}, {0.01, 0.0});
  auto g = q.grad_buffer();
  g[0] = 3.0;
  g[1] = -1e-3;
  g[2] = 40.0;
  first.step();
  CHECK(q.at(0) == doctest::Approx(1 - 0.01).epsilon(1e-6));
  CHECK(q.at(1) == doctest::Approx(-2 + 0.01).epsilon(1e-6));
  CHECK(q.at(2) == doctest::Approx(0.5 - 0.01).epsilon(1e-6));
}

TEST_CASE("adam finds the minimizer of a convex quadratic") {
  const std::vector<double> centre{3.0, -1.0, 0.25, 2.0};
  Tensor x = Tensor::zeros({4}, true);
  const Tensor c = Tensor::from({4}, centre);
  Adam opt({{"x", x}}, {0.05, 0.0});
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    const Tensor d = sub(x, c);
    backward(sum(mul(d, d)));
    opt.step();
  }
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(x.at(i) - centre[i]) < 1e-3);
}

TEST_CASE("adam refuses non-finite gradients without touching anything") {
  Tensor a = Tensor::from({2}, {1, 2}, true), b = Tensor::from({2}, {3, 4}, true);
  Adam opt({{"a", a}, {"b", b}}, {});
  a.grad_buffer()[0] = 1.0;
  b.grad_buffer()[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    opt.step();
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("b") != std::string::npos);
  }
  CHECK(values(a) == std::vector<double>{1, 2});
  CHECK(values(b) == std::vector<double>{3, 4});
  CHECK(opt.steps() == 0);
}

TEST_CASE("training configuration invariants") {
  TrainConfig c;
  CHECK(c.stage_weights(3) == std::vector<double>{1, 1, 1});
  c.alphas = {1, 0, 1};
  CHECK_THROWS(c.validate(3));
  c.alphas = {1, 1};
  CHECK_THROWS(c.validate(3));
  c = {};
  c.scale_min = 1.2;
  CHECK_THROWS(c.validate(1));
  c = {};
  c.scale_min = 0.0;
  CHECK_THROWS(c.validate(1));
}

TEST_CASE("stage-3-only loss still reaches stage-1 parameters") {
  Rng rng(6);
  const RpsmModel m(tiny_model(3, 2), 6);
  const Tensor frames = random_tensor({2, 3, 64, 64}, rng, false, 0, 1);
  const Tensor target = random_tensor({2, 51}, rng, false, 0, 1);
  backward(sequence_loss(m.forward(frames), target, {0, 0, 1}));
  for (const auto& p : m.parameters()) {
    if (p.name.rfind("pose.stage1.", 0) != 0) continue;
    CAPTURE(p.name);
    REQUIRE(p.tensor.has_grad());
    double norm = 0.0;
    for (double g : p.tensor.grad()) norm += g * g;
    CHECK(norm > 0.0);
  }
}

TEST_CASE("overfitting one clip drives the windowed median loss down") {
  test::TempDir dir("overfit");
  GenerateOptions o;
  o.sequences = 1;
  o.frames = 5;
  o.out_dir = dir.path();
  const auto m = generate_dataset(o);
  const auto seq = load_sequence(m, m.sequences[0], 64);
  const auto stats = compute_normalization(DatasetSplit{Split::train, {seq}});
  Clip clip = decompose_clips(seq.frames, seq.poses_mm, 5)[0];
  clip.poses = normalize_pose(clip.poses, stats);
  RpsmModel model(tiny_model(1, 5), 1);
  const auto losses = overfit_clip(model, clip, {}, 150);
  auto median = [&](std::size_t from) {
    std::vector<double> w(losses.begin() + from, losses.begin() + from + 50);
    std::nth_element(w.begin(), w.begin() + 25, w.end());
    return w[25];
  };
  CHECK(median(50) < median(0));
  CHECK(median(100) < median(50));
}

TEST_CASE("seeded training is reproducible and checkpoints reload") {
  test::TempDir dir("train");
  GenerateOptions o;
  o.sequences = 2;
  o.frames = 5;
  o.out_dir = dir / "data";
  const auto m = generate_dataset(o);
  const DatasetSplit split{Split::train, load_sequences(m, 64)};
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.eval_every = 0;

  RpsmModel a(tiny_model(2, 3), 4), b(tiny_model(2, 3), 4);
  std::size_t callbacks = 0;
  const auto ra = train(a, split, nullptr, cfg, {dir / "a.ckpt", dir / "a.jsonl"},
                        [&](const IterationRecord&) { ++callbacks; });
  const auto rb = train(b, split, nullptr, cfg, {dir / "b.ckpt", {}});
  REQUIRE(ra.history.size() == 8);
  CHECK(callbacks == 8);
  for (std::size_t i = 0; i < 8; ++i) CHECK(ra.history[i].loss == rb.history[i].loss);
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));

  std::ifstream log(dir / "a.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"epoch", "iter", "loss", "eval_error_mm", "stage_errors", "wall_ms"}) CHECK(j.contains(key));
    ++lines;
  }
  CHECK(lines == 8);
  const auto loaded = load_model(dir / "a.ckpt");
  CHECK(loaded.stats.min == ra.stats.min);
}

TEST_CASE("a non-finite loss aborts and keeps the last epoch's checkpoint") {
  test::TempDir dir("abort");
  std::vector<double> poses(2 * 51);
  for (std::size_t i = 0; i < poses.size(); ++i) poses[i] = static_cast<double>(i % 7);
  LoadedSequence good{"0", "walk", Tensor::full({2, 3, 64, 64}, 0.5), poses, 17};
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.augment = false;
  RpsmModel model(tiny_model(1, 2), 1);
  train(model, DatasetSplit{Split::train, {good}}, nullptr, cfg, {dir / "m.ckpt", {}});
  const auto before = slurp(dir / "m.ckpt");

  LoadedSequence bad = good;
  bad.frames = Tensor::full({2, 3, 64, 64}, std::numeric_limits<double>::quiet_NaN());
  try {
    train(model, DatasetSplit{Split::train, {bad}}, nullptr, cfg, {dir / "m.ckpt", {}});
    FAIL("expected TrainingAborted");
  } catch (const TrainingAborted& e) {
    CHECK(e.iteration() == 1);
  }
  CHECK(slurp(dir / "m.ckpt") == before);
}

}  // TEST_SUITE
