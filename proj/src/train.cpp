#include "rpsm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "rpsm/checkpoint.hpp"
#include "rpsm/evaluate.hpp"
#include "rpsm/functional.hpp"
#include "rpsm/ops.hpp"

namespace rpsm {

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

std::size_t DatasetSplit::frames() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.length();
  return n;
}

NormalizationStats compute_normalization(const DatasetSplit& split, double scale_lo, double scale_hi) {
  if (split.role != Split::train) {
    throw std::invalid_argument("normalization statistics must come from a training split, got " +
                                to_string(split.role));
  }
  if (split.sequences.empty()) throw std::invalid_argument("normalization: empty training split");
  if (!(scale_lo > 0.0) || scale_lo > scale_hi) throw std::invalid_argument("normalization: invalid scale range");
  const std::size_t dim = 3 * split.sequences.front().joints;
  NormalizationStats stats;
  stats.min.assign(dim, std::numeric_limits<double>::infinity());
  stats.max.assign(dim, -std::numeric_limits<double>::infinity());
  for (const auto& seq : split.sequences) {
    if (3 * seq.joints != dim || seq.poses_mm.size() != seq.length() * dim) {
      throw ShapeError("normalization: sequence " + seq.id + " has inconsistent pose extents");
    }
    for (std::size_t i = 0; i < seq.poses_mm.size(); ++i) {
      const std::size_t d = i % dim;
      const double v = seq.poses_mm[i];
      // Scaling is linear, so the range endpoints bound every factor in between.
      const bool planar = d % 3 != 2;
      const double a = planar ? v * scale_lo : v, b = planar ? v * scale_hi : v;
      stats.min[d] = std::min({stats.min[d], v, a, b});
      stats.max[d] = std::max({stats.max[d], v, a, b});
    }
  }
  stats.provenance = Split::train;
  return stats;
}

namespace {

void check_stats(std::span<const double> values, const NormalizationStats& stats) {
  if (stats.dim() == 0 || stats.max.size() != stats.dim() || values.size() % stats.dim() != 0) {
    throw ShapeError("normalization: " + std::to_string(values.size()) + " values do not tile poses of " +
                     std::to_string(stats.dim()));
  }
}

}  // namespace

std::vector<double> normalize_pose(std::span<const double> values, const NormalizationStats& stats) {
  check_stats(values, stats);
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t d = i % stats.dim();
    const double range = stats.max[d] - stats.min[d];
    out[i] = range == 0.0 ? 0.0 : (values[i] - stats.min[d]) / range;
  }
  return out;
}

std::vector<double> denormalize_pose(std::span<const double> values, const NormalizationStats& stats) {
  check_stats(values, stats);
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t d = i % stats.dim();
    out[i] = values[i] * (stats.max[d] - stats.min[d]) + stats.min[d];
  }
  return out;
}

Tensor sequence_loss(const std::vector<Tensor>& preds, const Tensor& target, const std::vector<double>& alphas) {
  if (preds.empty()) throw std::invalid_argument("sequence_loss: no stage predictions");
  if (alphas.size() != preds.size()) {
    throw std::invalid_argument("sequence_loss: " + std::to_string(alphas.size()) + " weights for " +
                                std::to_string(preds.size()) + " stages");
  }
  Tensor total;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    if (preds[k].shape() != target.shape()) {
      throw ShapeError("sequence_loss: stage " + std::to_string(k + 1) + " prediction " +
                       shape_string(preds[k].shape()) + " vs target " + shape_string(target.shape()));
    }
    if (!(alphas[k] >= 0.0) || !std::isfinite(alphas[k])) {
      throw std::invalid_argument("sequence_loss: stage weights must be finite and non-negative");
    }
    const Tensor diff = sub(preds[k], target);
    const Tensor term = scale(sum(mul(diff, diff)), alphas[k]);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

std::vector<Clip> decompose_clips(const Tensor& frames, const std::vector<double>& poses, std::size_t clip_length) {
  if (frames.rank() != 4 || frames.dim(0) == 0) {
    throw ShapeError("decompose_clips: expected T×C×H×W frames, got " + shape_string(frames.shape()));
  }
  if (clip_length == 0) throw std::invalid_argument("decompose_clips: clip length must be at least 1");
  const std::size_t steps = frames.dim(0);
  if (poses.empty() || poses.size() % steps != 0) {
    throw ShapeError("decompose_clips: " + std::to_string(poses.size()) + " pose values for " +
                     std::to_string(steps) + " frames");
  }
  const std::size_t pose_dim = poses.size() / steps;
  const std::size_t frame_size = frames.numel() / steps;
  const auto src = frames.data();

  std::vector<Clip> clips;
  for (std::size_t start = 0; start < steps; start += clip_length) {
    Clip clip;
    clip.valid = std::min(clip_length, steps - start);
    std::vector<double> pixels;
    pixels.reserve(clip_length * frame_size);
    clip.poses.reserve(clip_length * pose_dim);
    for (std::size_t i = 0; i < clip_length; ++i) {
      const std::size_t t = start + std::min(i, clip.valid - 1);
      clip.source.push_back(t);
      pixels.insert(pixels.end(), src.begin() + t * frame_size, src.begin() + (t + 1) * frame_size);
      clip.poses.insert(clip.poses.end(), poses.begin() + t * pose_dim, poses.begin() + (t + 1) * pose_dim);
    }
    Shape shape = frames.shape();
    shape[0] = clip_length;
    clip.frames = Tensor::from(std::move(shape), std::move(pixels));
    clips.push_back(std::move(clip));
  }
  return clips;
}

std::pair<Tensor, std::vector<double>> augment_scale(const Tensor& frames, const std::vector<double>& poses,
                                                     double factor, double lo, double hi) {
  if (!(lo > 0.0) || lo > hi) throw std::invalid_argument("augment_scale: invalid factor range");
  if (!(factor >= lo && factor <= hi)) {
    throw std::invalid_argument("augment_scale: factor " + std::to_string(factor) + " outside [" +
                                std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  if (poses.size() % 3 != 0) throw ShapeError("augment_scale: poses are not xyz triples");
  std::vector<Image> scaled;
  scaled.reserve(frames.dim(0));
  for (std::size_t t = 0; t < frames.dim(0); ++t) scaled.push_back(scale_about_center(frame_from_tensor(frames, t), factor));
  std::vector<double> out = poses;
  for (std::size_t i = 0; i < out.size(); i += 3) {
    out[i] *= factor;
    out[i + 1] *= factor;
  }
  return {to_tensor(scaled), std::move(out)};
}

Adam::Adam(ParameterList params, AdamOptions options) : params_(std::move(params)), options_(options) {
  if (!(options_.lr > 0.0) || options_.decay < 0.0) throw std::invalid_argument("Adam: need lr > 0 and decay ≥ 0");
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw std::runtime_error("non-finite gradient in parameter " + p.name);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& w = params_[i].tensor;
    const bool has_grad = w.has_grad();
    const auto grad = has_grad ? w.grad() : std::span<const double>{};
    auto values = w.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = (has_grad ? grad[j] : 0.0) + options_.decay * values[j];
      m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g;
      v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g * g;
      values[j] -= options_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::vector<double> TrainConfig::stage_weights(std::size_t stages) const {
  return alphas.empty() ? std::vector<double>(stages, 1.0) : alphas;
}

void TrainConfig::validate(std::size_t stages) const {
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(decay >= 0.0)) throw std::invalid_argument("decay must be non-negative");
  if (!alphas.empty()) {
    if (alphas.size() != stages) {
      throw std::invalid_argument("alphas has " + std::to_string(alphas.size()) + " entries for " +
                                  std::to_string(stages) + " stages");
    }
    for (double a : alphas) {
      if (!(a > 0.0)) throw std::invalid_argument("alphas must be positive");
    }
  }
  if (epochs == 0) throw std::invalid_argument("epochs must be at least 1");
  if (!(scale_min > 0.0) || scale_min > scale_max) throw std::invalid_argument("need 0 < scale_min ≤ scale_max");
  if (workers == 0) throw std::invalid_argument("workers must be at least 1");
}

TrainingAborted::TrainingAborted(std::size_t iteration, const std::string& what)
    : std::runtime_error("training aborted at iteration " + std::to_string(iteration) + ": " + what),
      iteration_(iteration) {}

nlohmann::json IterationRecord::to_json() const {
  nlohmann::json j{{"epoch", epoch}, {"iter", iter}, {"loss", loss}, {"wall_ms", wall_ms}};
  j["eval_error_mm"] = eval_error_mm ? nlohmann::json(*eval_error_mm) : nlohmann::json(nullptr);
  j["stage_errors"] = stage_errors;
  return j;
}

namespace {

Tensor target_tensor(const std::vector<double>& poses_mm, std::size_t steps, const NormalizationStats& stats) {
  return Tensor::from({steps, poses_mm.size() / steps}, normalize_pose(poses_mm, stats));
}

}  // namespace

TrainResult train(RpsmModel& model, const DatasetSplit& train_split, const DatasetSplit* eval_split,
                  const TrainConfig& cfg, const TrainOutputs& outputs,
                  const std::function<void(const IterationRecord&)>& on_iteration) {
  const auto& mc = model.config();
  cfg.validate(mc.stages);
  if (train_split.sequences.empty()) throw std::invalid_argument("train: empty training split");

  TrainResult result;
  result.stats = cfg.augment ? compute_normalization(train_split, cfg.scale_min, cfg.scale_max)
                              : compute_normalization(train_split);
  if (result.stats.dim() != mc.pose_dim()) {
    throw ShapeError("train: dataset has " + std::to_string(result.stats.dim() / 3) + " joints, model expects " +
                     std::to_string(mc.joints));
  }

  std::vector<Clip> clips;
  for (const auto& seq : train_split.sequences) {
    auto parts = decompose_clips(seq.frames, seq.poses_mm, mc.clip_length);
    std::move(parts.begin(), parts.end(), std::back_inserter(clips));
  }

  const auto alphas = cfg.stage_weights(mc.stages);
  Adam optimizer(model.parameters(), {cfg.lr, cfg.decay});
  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> factor_dist(cfg.scale_min, cfg.scale_max);
  std::ofstream log;
  if (!outputs.log.empty()) {
    log.open(outputs.log, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write training log " + outputs.log.string());
  }

  const auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };

  std::size_t iter = 0;
  std::vector<std::size_t> order(clips.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t epoch_begin = result.history.size();

    for (std::size_t n = 0; n < order.size(); ++n) {
      const std::size_t index = order[n];
      ++iter;
      const Clip& clip = clips[index];
      const double factor = cfg.augment ? factor_dist(rng) : 1.0;
      auto [frames, poses] = cfg.augment ? augment_scale(clip.frames, clip.poses, factor, cfg.scale_min, cfg.scale_max)
                                         : std::pair{clip.frames, clip.poses};
      const Tensor target = target_tensor(poses, frames.dim(0), result.stats);

      optimizer.zero_grad();
      const Tensor loss = sequence_loss(model.forward(frames), target, alphas);
      const double value = loss.item();
      if (!std::isfinite(value)) throw TrainingAborted(iter, "non-finite loss");
      backward(loss);
      try {
        optimizer.step();
      } catch (const std::runtime_error& e) {
        throw TrainingAborted(iter, e.what());
      }

      IterationRecord rec;
      rec.epoch = epoch;
      rec.iter = iter;
      rec.loss = value;
      rec.wall_ms = elapsed_ms();
      result.history.push_back(rec);
      // the epoch's last record is reported after evaluation fills it in
      if (on_iteration && n + 1 < order.size()) on_iteration(rec);
    }

    const bool due = cfg.eval_every != 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
    if (eval_split != nullptr && !eval_split->sequences.empty() && due) {
      EvalOptions eo;
      eo.workers = cfg.workers;
      const EvalReport report = evaluate(model, *eval_split, result.stats, eo);
      auto& last = result.history.back();
      last.eval_error_mm = report.mean;
      last.stage_errors = report.per_stage;
      last.wall_ms = elapsed_ms();
    }
    if (on_iteration) on_iteration(result.history.back());
    if (log.is_open()) {
      for (std::size_t i = epoch_begin; i < result.history.size(); ++i) log << result.history[i].to_json().dump() << '\n';
      log.flush();
    }
    if (!outputs.checkpoint.empty()) save_model(outputs.checkpoint, model, result.stats);
  }
  return result;
}

std::vector<double> overfit_clip(RpsmModel& model, const Clip& normalized_clip, const TrainConfig& cfg,
                                 std::size_t steps) {
  const auto& mc = model.config();
  const auto alphas = cfg.stage_weights(mc.stages);
  const std::size_t len = normalized_clip.frames.dim(0);
  const Tensor target = Tensor::from({len, normalized_clip.poses.size() / len}, normalized_clip.poses);
  Adam optimizer(model.parameters(), {cfg.lr, cfg.decay});
  std::vector<double> losses;
  losses.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    optimizer.zero_grad();
    const Tensor loss = sequence_loss(model.forward(normalized_clip.frames), target, alphas);
    if (!std::isfinite(loss.item())) throw TrainingAborted(i + 1, "non-finite loss");
    losses.push_back(loss.item());
    backward(loss);
    optimizer.step();
  }
  return losses;
}

namespace {

std::filesystem::path sidecar(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}

void replace_file(const std::filesystem::path& tmp, const std::filesystem::path& dest) {
  std::error_code ec;
  std::filesystem::rename(tmp, dest, ec);
  if (ec) throw CheckpointError("cannot move " + tmp.string() + " to " + dest.string() + ": " + ec.message());
}

}  // namespace

void save_model(const std::filesystem::path& path, const RpsmModel& model, const NormalizationStats& stats) {
  if (stats.dim() != model.config().pose_dim()) throw ShapeError("save_model: statistics do not match the model");
  auto records = to_records(model.parameters());
  records.push_back({"norm.min", {stats.dim()}, stats.min});
  records.push_back({"norm.max", {stats.dim()}, stats.max});

  auto tmp = path;
  tmp += ".tmp";
  write_checkpoint(tmp, records);
  auto meta_tmp = sidecar(path);
  meta_tmp += ".tmp";
  {
    std::ofstream out(meta_tmp, std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + meta_tmp.string());
    const nlohmann::json meta{{"format", "rpsm-model"},
                              {"version", 1},
                              {"model", model.config().to_json()},
                              {"normalization", {{"provenance", to_string(stats.provenance)}}}};
    out << meta.dump(2) << '\n';
    if (!out) throw CheckpointError("failed writing " + meta_tmp.string());
  }
  replace_file(tmp, path);
  replace_file(meta_tmp, sidecar(path));
}

namespace {

nlohmann::json read_sidecar(const std::filesystem::path& checkpoint) {
  const auto path = sidecar(checkpoint);
  std::ifstream in(path);
  if (!in) throw CheckpointError("missing model description " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    if (j.value("format", "") != "rpsm-model") throw CheckpointError(path.string() + " is not an rpsm-model description");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed model description " + path.string() + ": " + e.what());
  }
}

}  // namespace

ModelConfig read_model_config(const std::filesystem::path& checkpoint) {
  const auto j = read_sidecar(checkpoint);
  try {
    return ModelConfig::from_json(j.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed model configuration in " + sidecar(checkpoint).string() + ": " + e.what());
  }
}

LoadedModel load_model(const std::filesystem::path& path) {
  const auto meta = read_sidecar(path);
  const ModelConfig config = read_model_config(path);
  const auto records = read_checkpoint(path);
  LoadedModel loaded{RpsmModel(config, 0), {}};
  auto params = loaded.model.parameters();
  assign_records(records, params);

  auto find = [&](const std::string& name) -> const CheckpointRecord& {
    for (const auto& r : records) {
      if (r.name == name) return r;
    }
    throw CheckpointError("checkpoint " + path.string() + " has no " + name + " record");
  };
  loaded.stats.min = find("norm.min").values;
  loaded.stats.max = find("norm.max").values;
  if (loaded.stats.dim() != config.pose_dim() || loaded.stats.max.size() != config.pose_dim()) {
    throw CheckpointError("normalization records in " + path.string() + " do not match the model");
  }
  const std::string provenance = meta.at("normalization").value("provenance", "");
  if (provenance != "train") {
    throw CheckpointError("normalization statistics in " + path.string() + " were not computed on a training split");
  }
  loaded.stats.provenance = Split::train;
  return loaded;
}

}  // namespace rpsm
