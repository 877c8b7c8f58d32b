#include <doctest.h>

#include <fstream>
#include <set>

#include "rpsm/checkpoint.hpp"
#include "rpsm/functional.hpp"
#include "rpsm/model.hpp"
#include "rpsm/train.hpp"
#include "support.hpp"

using namespace rpsm;
using rpsm::test::random_tensor;
using rpsm::test::values;

namespace {

ModelConfig desk(std::size_t stages, std::size_t clip = 5) {
  ModelConfig c;
  c.stages = stages;
  c.clip_length = clip;
  return c;
}

Tensor random_frames(const RpsmModel& m, std::size_t count, Rng& rng) {
  const auto& a = m.architecture();
  return random_tensor({count, a.input_channels, a.input_extent, a.input_extent}, rng, false, 0.0, 1.0);
}

bool same_values(const Tensor& a, const Tensor& b) { return a.shape() == b.shape() && values(a) == values(b); }

}  // namespace

TEST_SUITE("model") {

TEST_CASE("configuration limits and serialization") {
  ModelConfig c;
  c.stages = 0;
  CHECK_THROWS(c.validate());
  c = {};
  c.clip_length = 0;
  CHECK_THROWS(c.validate());
  c = {};
  c.joints = 1;
  CHECK_THROWS(c.validate());

  c = desk(2, 4);
  c.share_all_2d_layers = true;
  c.joints = 14;
  const auto back = ModelConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.pose_dim() == 42);
  CHECK_THROWS(parse_preset("medium"));
}

TEST_CASE("parameter tensors follow the sharing formula") {
  for (std::size_t k = 1; k <= 3; ++k) {
    for (bool share_r : {true, false}) {
      for (bool share_2d : {true, false}) {
        ModelConfig c = desk(k);
        c.share_recurrent_across_stages = share_r;
        c.share_all_2d_layers = share_2d;
        const RpsmModel m(c, 1);
        const auto params = m.parameters();
        const std::size_t expected = 2 * 15 + (share_2d ? 1 : k) * 4 + (share_r ? 1 : k) * 11;
        CAPTURE(k);
        CAPTURE(share_r);
        CAPTURE(share_2d);
        CHECK(params.size() == expected);
        CHECK(RpsmModel::expected_parameter_tensors(c) == expected);

        std::set<std::string> names;
        std::set<const void*> storage;
        for (const auto& p : params) {
          names.insert(p.name);
          storage.insert(p.tensor.impl().get());
        }
        CHECK(names.size() == params.size());
        CHECK(storage.size() == params.size());
      }
    }
  }
  CHECK(RpsmModel::expected_parameter_tensors(desk(3)) == 53);
}

TEST_CASE("shared modules are the same objects for every stage") {
  RpsmModel m(desk(3), 2);
  CHECK(m.adaption_module(0).fc.weight.same_storage(m.adaption_module(2).fc.weight));
  CHECK(m.recurrent_module(1).lstm.w_ih.same_storage(m.recurrent_module(2).lstm.w_ih));

  ModelConfig c = desk(3);
  c.share_recurrent_across_stages = false;
  RpsmModel split(c, 2);
  CHECK_FALSE(split.adaption_module(0).fc.weight.same_storage(split.adaption_module(1).fc.weight));
  CHECK_THROWS_AS(split.adaption_module(3), std::out_of_range);
}

TEST_CASE("geometry of the two presets") {
  ModelConfig full;
  full.preset = ScalePreset::full;
  const auto fa = full.architecture();
  CHECK(fa.input_extent == 368);
  std::size_t extent = 46;
  for (bool pool : fa.adapt_pool) {
    extent = window_output_extent(extent, fa.adapt_kernel, fa.adapt_stride, fa.adapt_pad);
    if (pool) extent = window_output_extent(extent, 2, 2, 0);
  }
  CHECK(extent == 1);
  CHECK(fa.adapt_dim == 1024);
  CHECK(fa.hidden_dim == 1024);

  const RpsmModel d(desk(1), 1);
  CHECK(d.feature_shape() == Shape{16, 8, 8});
}

TEST_CASE("forward shape contract") {
  Rng rng(3);
  const RpsmModel m(desk(3), 3);
  const auto preds = m.forward(random_frames(m, 5, rng));
  REQUIRE(preds.size() == 3);
  for (const auto& p : preds) CHECK(p.shape() == Shape{5, 51});
  CHECK_THROWS_AS(m.forward(Tensor::zeros({2, 3, 32, 32})), ShapeError);
}

TEST_CASE("stage one sees all-zero priors") {
  Rng rng(4);
  const RpsmModel m(desk(2), 4);
  const Tensor frames = random_frames(m, 2, rng);
  Shape fs{2};
  for (auto e : m.feature_shape()) fs.push_back(e);
  NoGradGuard guard;
  CHECK(same_values(m.pose_module_forward(frames, Tensor::zeros(fs), 0),
                    m.pose_module_forward(frames, Tensor::full(fs, 0.0), 0)));
  CHECK_FALSE(same_values(m.pose_module_forward(frames, Tensor::zeros(fs), 0),
                          m.pose_module_forward(frames, random_tensor(fs, rng, false, 0.0, 1.0), 0)));
}

TEST_CASE("a one-stage model is the stage run by hand") {
  Rng rng(5);
  const RpsmModel m(desk(1, 3), 5);
  const Tensor frames = random_frames(m, 3, rng);
  NoGradGuard guard;
  const auto preds = m.forward(frames);
  Shape fs{1};
  for (auto e : m.feature_shape()) fs.push_back(e);
  LstmState state = m.zero_state();
  for (std::size_t t = 0; t < 3; ++t) {
    const Tensor f2d = m.pose_module_forward(slice(frames, 0, t, 1), Tensor::zeros(fs), 0);
    const auto out = m.recurrent_step(m.adaption_forward(f2d, 0), Tensor::zeros({1, 51}), state, 0);
    state = out.state;
    for (std::size_t d = 0; d < 51; ++d) CHECK(out.pose.at(d) == doctest::Approx(preds[0].at(t * 51 + d)).epsilon(1e-12));
  }
}

TEST_CASE("later stages refine rather than copy") {
  Rng rng(6);
  const RpsmModel m(desk(3), 6);
  NoGradGuard guard;
  const auto preds = m.forward(random_frames(m, 2, rng));
  CHECK_FALSE(same_values(preds[0], preds[1]));
}

TEST_CASE("a frame only influences its own and later outputs") {
  Rng rng(12);
  const RpsmModel m(desk(2, 4), 12);
  Tensor frames = random_frames(m, 4, rng);
  NoGradGuard guard;
  const auto before = m.forward(frames);
  const std::size_t per_frame = frames.numel() / 4;
  std::fill_n(frames.mutable_data().begin() + 2 * per_frame, per_frame, 0.0);
  const auto after = m.forward(frames);
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t i = 0; i < 2 * 51; ++i) CHECK(after[k].at(i) == before[k].at(i));
    bool changed = false;
    for (std::size_t i = 2 * 51; i < 3 * 51; ++i) changed = changed || after[k].at(i) != before[k].at(i);
    CHECK(changed);
  }
}

TEST_CASE("adaption of zero features with zero biases is zero") {
  RpsmModel m(desk(1), 7);
  auto& a = m.adaption_module(0);
  for (Tensor* b : {&a.conv1.bias, &a.conv2.bias, &a.fc.bias}) std::fill(b->mutable_data().begin(), b->mutable_data().end(), 0.0);
  Shape fs{1};
  for (auto e : m.feature_shape()) fs.push_back(e);
  const Tensor out = m.adaption_forward(Tensor::zeros(fs), 0);
  CHECK(out.shape() == Shape{1, 128});
  CHECK(values(out) == std::vector<double>(128, 0.0));
}

TEST_CASE("recurrent module") {
  Rng rng(8);
  RpsmModel m(desk(1), 8);
  auto& r = m.recurrent_module(0);
  const Tensor f3d = random_tensor({1, 128}, rng, false), prev = random_tensor({1, 51}, rng, false);

  const auto a = m.recurrent_step(f3d, prev, m.zero_state(), 0);
  const auto b = m.recurrent_step(f3d, prev, a.state, 0);
  CHECK(a.pose.shape() == Shape{1, 51});
  CHECK_FALSE(same_values(a.pose, b.pose));

  for (Tensor* t : {&r.lstm.w_ih, &r.lstm.w_hh, &r.lstm.bias, &r.head.weight}) {
    std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);
  }
  const auto z = m.recurrent_step(f3d, prev, b.state, 0);
  CHECK(values(z.pose) == values(r.head.bias));
}

TEST_CASE("every parameter receives a finite gradient from the loss") {
  Rng rng(9);
  const RpsmModel m(desk(3), 9);
  const Tensor frames = random_frames(m, 2, rng);
  const Tensor target = random_tensor({2, 51}, rng, false, 0.0, 1.0);
  backward(sequence_loss(m.forward(frames), target, {1, 1, 1}));
  for (const auto& p : m.parameters()) {
    CAPTURE(p.name);
    REQUIRE(p.tensor.has_grad());
    double norm = 0.0;
    for (double g : p.tensor.grad()) {
      CHECK(std::isfinite(g));
      norm += g * g;
    }
    CHECK(norm > 0.0);
  }
}

TEST_CASE("checkpoint container round trip and corruption") {
  test::TempDir dir("ckpt");
  const std::vector<CheckpointRecord> records{{"a", {2, 1}, {1.5, -0.0}}, {"b.c", {3}, {1e-300, 2, 3}}};
  write_checkpoint(dir / "x.bin", records);
  const auto back = read_checkpoint(dir / "x.bin");
  REQUIRE(back.size() == 2);
  CHECK(back[1].name == "b.c");
  CHECK(back[0].shape == Shape{2, 1});
  CHECK(back[1].values == records[1].values);
  CHECK(std::signbit(back[0].values[1]));

  {
    std::ofstream bad(dir / "magic.bin", std::ios::binary);
    bad << "NOPE";
  }
  CHECK_THROWS_AS(read_checkpoint(dir / "magic.bin"), CheckpointError);
  const auto size = std::filesystem::file_size(dir / "x.bin");
  std::filesystem::copy_file(dir / "x.bin", dir / "cut.bin");
  std::filesystem::resize_file(dir / "cut.bin", size - 5);
  CHECK_THROWS_AS(read_checkpoint(dir / "cut.bin"), CheckpointError);
  CHECK_THROWS(read_checkpoint(dir / "missing.bin"));
}

TEST_CASE("assigning records checks names and shapes") {
  RpsmModel m(desk(1), 10);
  auto params = m.parameters();
  auto records = to_records(params);
  records.front().shape = {1};
  CHECK_THROWS(assign_records(records, params));
  records = to_records(params);
  records.pop_back();
  CHECK_THROWS(assign_records(records, params));
}

TEST_CASE("saved models reload bitwise") {
  test::TempDir dir("model");
  Rng rng(11);
  const RpsmModel m(desk(2), 11);
  NormalizationStats stats{std::vector<double>(51, -1.0), std::vector<double>(51, 2.0), Split::train};
  save_model(dir / "m.ckpt", m, stats);
  const auto loaded = load_model(dir / "m.ckpt");
  CHECK(loaded.model.config().to_json() == m.config().to_json());
  CHECK(loaded.stats.min == stats.min);
  CHECK(loaded.stats.max == stats.max);
  const Tensor frames = random_frames(m, 3, rng);
  NoGradGuard guard;
  const auto a = m.forward(frames), b = loaded.model.forward(frames);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(values(a[k]) == values(b[k]));
  CHECK(read_model_config(dir / "m.ckpt").to_json() == m.config().to_json());
}

}  // TEST_SUITE
