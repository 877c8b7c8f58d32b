#include "rpsm/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

namespace rpsm {

std::string to_string(Alignment alignment) { return alignment == Alignment::root ? "root" : "centroid"; }

Alignment parse_alignment(const std::string& text) {
  if (text == "root") return Alignment::root;
  if (text == "centroid") return Alignment::centroid;
  throw std::invalid_argument("unknown alignment '" + text + "' (expected root or centroid)");
}

namespace {

std::array<double, 3> reference(std::span<const double> pose, Alignment alignment) {
  if (alignment == Alignment::root) return {pose[0], pose[1], pose[2]};
  std::array<double, 3> c{0.0, 0.0, 0.0};
  const std::size_t joints = pose.size() / 3;
  for (std::size_t j = 0; j < joints; ++j) {
    for (std::size_t a = 0; a < 3; ++a) c[a] += pose[3 * j + a];
  }
  for (auto& v : c) v /= static_cast<double>(joints);
  return c;
}

}  // namespace

std::vector<double> joint_errors(std::span<const double> pred, std::span<const double> gt, Alignment alignment) {
  if (pred.size() != gt.size() || pred.empty() || pred.size() % 3 != 0) {
    throw ShapeError("pose_error: " + std::to_string(pred.size()) + " vs " + std::to_string(gt.size()) +
                     " coordinates");
  }
  const auto rp = reference(pred, alignment);
  const auto rg = reference(gt, alignment);
  std::vector<double> out(pred.size() / 3);
  for (std::size_t j = 0; j < out.size(); ++j) {
    double s = 0.0;
    for (std::size_t a = 0; a < 3; ++a) {
      const double d = (pred[3 * j + a] - rp[a]) - (gt[3 * j + a] - rg[a]);
      s += d * d;
    }
    out[j] = std::sqrt(s);
  }
  return out;
}

double pose_error(std::span<const double> pred, std::span<const double> gt, Alignment alignment) {
  const auto e = joint_errors(pred, gt, alignment);
  double s = 0.0;
  for (double v : e) s += v;
  return s / static_cast<double>(e.size());
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json actions = nlohmann::json::object();
  for (const auto& [name, a] : per_action) actions[name] = {{"mean_mm", a.mean}, {"frames", a.frames}};
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : records) {
    rows.push_back({{"seq", r.sequence},
                    {"action", r.action},
                    {"frame", r.frame},
                    {"stage_errors", r.stage_errors},
                    {"joint_errors", r.joint_errors}});
  }
  return {{"mean_mm", mean},     {"frames", frames},     {"per_stage_mm", per_stage},
          {"per_joint_mm", per_joint}, {"per_action", actions}, {"records", rows}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.mean = j.at("mean_mm").get<double>();
  r.frames = j.at("frames").get<std::size_t>();
  r.per_stage = j.at("per_stage_mm").get<std::vector<double>>();
  r.per_joint = j.at("per_joint_mm").get<std::vector<double>>();
  for (const auto& [name, a] : j.at("per_action").items()) {
    r.per_action[name] = {a.at("mean_mm").get<double>(), a.at("frames").get<std::size_t>()};
  }
  for (const auto& row : j.at("records")) {
    FrameError f;
    f.sequence = row.at("seq").get<std::string>();
    f.action = row.at("action").get<std::string>();
    f.frame = row.at("frame").get<std::size_t>();
    f.stage_errors = row.at("stage_errors").get<std::vector<double>>();
    f.joint_errors = row.at("joint_errors").get<std::vector<double>>();
    r.records.push_back(std::move(f));
  }
  return r;
}

std::string EvalReport::table() const {
  std::vector<std::string> actions;
  for (const auto& [name, a] : per_action) actions.push_back(name);
  const std::size_t stages = per_stage.size();
  // per (stage, action) sums
  std::vector<std::vector<double>> sums(stages, std::vector<double>(actions.size(), 0.0));
  for (const auto& r : records) {
    const auto col = static_cast<std::size_t>(std::find(actions.begin(), actions.end(), r.action) - actions.begin());
    for (std::size_t k = 0; k < stages; ++k) sums[k][col] += r.stage_errors[k];
  }
  std::ostringstream out;
  out << std::left << std::setw(10) << "mm";
  for (const auto& a : actions) out << std::right << std::setw(10) << a;
  out << std::setw(10) << "Average" << '\n';
  out << std::fixed << std::setprecision(2);
  for (std::size_t k = 0; k < stages; ++k) {
    out << std::left << std::setw(10) << ("stage " + std::to_string(k + 1)) << std::right;
    for (std::size_t c = 0; c < actions.size(); ++c) {
      out << std::setw(10) << sums[k][c] / static_cast<double>(per_action.at(actions[c]).frames);
    }
    out << std::setw(10) << per_stage[k] << '\n';
  }
  out << "frames: " << frames << '\n';
  return out.str();
}

EvalReport aggregate(std::vector<FrameError> records) {
  if (records.empty()) throw std::invalid_argument("evaluation produced no frames");
  EvalReport report;
  const std::size_t stages = records.front().stage_errors.size();
  const std::size_t joints = records.front().joint_errors.size();
  report.per_stage.assign(stages, 0.0);
  report.per_joint.assign(joints, 0.0);
  std::map<std::string, double> action_sums;
  for (const auto& r : records) {
    if (r.stage_errors.size() != stages || r.joint_errors.size() != joints || stages == 0) {
      throw ShapeError("aggregate: frame records disagree on stage or joint counts");
    }
    for (std::size_t k = 0; k < stages; ++k) report.per_stage[k] += r.stage_errors[k];
    for (std::size_t j = 0; j < joints; ++j) report.per_joint[j] += r.joint_errors[j];
    action_sums[r.action] += r.stage_errors.back();
    report.per_action[r.action].frames += 1;
  }
  const double n = static_cast<double>(records.size());
  for (auto& v : report.per_stage) v /= n;
  for (auto& v : report.per_joint) v /= n;
  for (auto& [name, a] : report.per_action) a.mean = action_sums[name] / static_cast<double>(a.frames);
  report.mean = report.per_stage.back();
  report.frames = records.size();
  report.records = std::move(records);
  return report;
}

std::vector<std::vector<double>> predict_sequence(const RpsmModel& model, const LoadedSequence& sequence,
                                                  const NormalizationStats& stats) {
  const auto& mc = model.config();
  if (stats.dim() != mc.pose_dim()) throw ShapeError("predict: statistics do not match the model");
  const std::size_t dim = mc.pose_dim();
  std::vector<std::vector<double>> out(mc.stages);
  for (auto& stage : out) stage.reserve(sequence.length() * dim);

  NoGradGuard no_grad;
  for (const auto& clip : decompose_clips(sequence.frames, sequence.poses_mm, mc.clip_length)) {
    const auto stages = model.forward(clip.frames);
    for (std::size_t k = 0; k < stages.size(); ++k) {
      const auto values = stages[k].data();
      out[k].insert(out[k].end(), values.begin(), values.begin() + static_cast<std::ptrdiff_t>(clip.valid * dim));
    }
  }
  for (auto& stage : out) stage = denormalize_pose(stage, stats);
  return out;
}

namespace {

std::vector<FrameError> score_sequence(const RpsmModel& model, const LoadedSequence& seq,
                                       const NormalizationStats& stats, const EvalOptions& options) {
  const std::size_t dim = 3 * seq.joints;
  const std::size_t stages = model.config().stages;
  const auto preds = options.oracle ? std::vector<std::vector<double>>(stages, seq.poses_mm)
                                    : predict_sequence(model, seq, stats);
  std::vector<FrameError> rows;
  rows.reserve(seq.length());
  for (std::size_t t = 0; t < seq.length(); ++t) {
    const std::span<const double> gt(seq.poses_mm.data() + t * dim, dim);
    FrameError row{seq.id, seq.action, t, {}, {}};
    for (std::size_t k = 0; k < stages; ++k) {
      const std::span<const double> p(preds[k].data() + t * dim, dim);
      row.stage_errors.push_back(pose_error(p, gt, options.alignment));
      if (k + 1 == stages) row.joint_errors = joint_errors(p, gt, options.alignment);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

EvalReport evaluate(const RpsmModel& model, const DatasetSplit& split, const NormalizationStats& stats,
                    const EvalOptions& options) {
  if (split.sequences.empty() || split.frames() == 0) throw std::invalid_argument("evaluate: empty split");
  if (stats.provenance != Split::train) {
    throw std::invalid_argument("evaluate: normalization statistics must come from the training split");
  }
  for (const auto& seq : split.sequences) {
    if (3 * seq.joints != model.config().pose_dim()) {
      throw ShapeError("evaluate: sequence " + seq.id + " has " + std::to_string(seq.joints) +
                       " joints, model expects " + std::to_string(model.config().joints));
    }
  }

  const std::size_t n = split.sequences.size();
  std::vector<std::vector<FrameError>> per_sequence(n);
  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) per_sequence[i] = score_sequence(model, split.sequences[i], stats, options);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < n; i = next++) {
            per_sequence[i] = score_sequence(model, split.sequences[i], stats, options);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::vector<FrameError> records;
  for (auto& rows : per_sequence) std::move(rows.begin(), rows.end(), std::back_inserter(records));
  return aggregate(std::move(records));
}

namespace {

constexpr double kLineRadius = 1.0;

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * dx), py - (ay + t * dy));
}

// Draws one view of a skeleton into channel `c` of the panel at column offset `x0`.
void draw_view(Image& image, std::size_t c, std::size_t x0, std::size_t extent, const std::vector<double>& pose,
               const std::vector<std::size_t>& parents, std::size_t axis_u, std::size_t axis_v, double scale,
               double cu, double cv) {
  auto pixel = [&](std::size_t j) {
    return std::pair{extent / 2.0 + scale * (pose[3 * j + axis_u] - cu), extent / 2.0 - scale * (pose[3 * j + axis_v] - cv)};
  };
  for (std::size_t j = 0; j < parents.size(); ++j) {
    if (parents[j] == j) continue;
    const auto [ax, ay] = pixel(parents[j]);
    const auto [bx, by] = pixel(j);
    const auto lo_x = static_cast<std::ptrdiff_t>(std::floor(std::min(ax, bx) - 2));
    const auto hi_x = static_cast<std::ptrdiff_t>(std::ceil(std::max(ax, bx) + 2));
    const auto lo_y = static_cast<std::ptrdiff_t>(std::floor(std::min(ay, by) - 2));
    const auto hi_y = static_cast<std::ptrdiff_t>(std::ceil(std::max(ay, by) + 2));
    for (auto y = std::max<std::ptrdiff_t>(lo_y, 0); y <= std::min<std::ptrdiff_t>(hi_y, extent - 1); ++y) {
      for (auto x = std::max<std::ptrdiff_t>(lo_x, 0); x <= std::min<std::ptrdiff_t>(hi_x, extent - 1); ++x) {
        const double d = segment_distance(x + 0.5, y + 0.5, ax, ay, bx, by);
        const double v = std::clamp(kLineRadius + 0.5 - d, 0.0, 1.0);
        double& px = image.at(c, static_cast<std::size_t>(y), x0 + static_cast<std::size_t>(x));
        px = std::max(px, v);
      }
    }
  }
}

}  // namespace

void export_skeletons(const std::vector<double>& pred, const std::vector<double>& gt, std::size_t joints,
                      const std::vector<std::size_t>& parents, const std::filesystem::path& dir,
                      std::size_t panel_extent) {
  const std::size_t dim = 3 * joints;
  if (dim == 0 || pred.size() != gt.size() || pred.size() % dim != 0 || parents.size() != joints) {
    throw ShapeError("export_skeletons: prediction, ground truth and skeleton extents disagree");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream lines(dir / "skeletons.jsonl", std::ios::trunc);
  if (!lines) throw std::runtime_error("cannot write " + (dir / "skeletons.jsonl").string());

  // (u axis, v axis): front x-y, side z-y, top x-z
  constexpr std::array<std::pair<std::size_t, std::size_t>, 3> kViews{{{0, 1}, {2, 1}, {0, 2}}};
  const std::size_t frames = pred.size() / dim;
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> p(pred.begin() + t * dim, pred.begin() + (t + 1) * dim);
    std::vector<double> g(gt.begin() + t * dim, gt.begin() + (t + 1) * dim);
    nlohmann::json pj = nlohmann::json::array(), gj = nlohmann::json::array();
    for (std::size_t j = 0; j < joints; ++j) {
      pj.push_back({p[3 * j], p[3 * j + 1], p[3 * j + 2]});
      gj.push_back({g[3 * j], g[3 * j + 1], g[3 * j + 2]});
    }
    lines << nlohmann::json{{"frame", t}, {"pred", pj}, {"gt", gj}}.dump() << '\n';

    Image canvas(3, panel_extent, 3 * panel_extent);
    for (std::size_t view = 0; view < kViews.size(); ++view) {
      const auto [au, av] = kViews[view];
      double lo_u = 1e300, hi_u = -1e300, lo_v = 1e300, hi_v = -1e300;
      for (const auto* pose : {&p, &g}) {
        for (std::size_t j = 0; j < joints; ++j) {
          lo_u = std::min(lo_u, (*pose)[3 * j + au]);
          hi_u = std::max(hi_u, (*pose)[3 * j + au]);
          lo_v = std::min(lo_v, (*pose)[3 * j + av]);
          hi_v = std::max(hi_v, (*pose)[3 * j + av]);
        }
      }
      const double span = std::max({hi_u - lo_u, hi_v - lo_v, 1e-9});
      const double scale = 0.85 * static_cast<double>(panel_extent) / span;
      const double cu = (lo_u + hi_u) / 2.0, cv = (lo_v + hi_v) / 2.0;
      draw_view(canvas, 0, view * panel_extent, panel_extent, p, parents, au, av, scale, cu, cv);
      draw_view(canvas, 1, view * panel_extent, panel_extent, g, parents, au, av, scale, cu, cv);
    }
    char name[32];
    std::snprintf(name, sizeof(name), "view_%04zu.ppm", t);
    write_ppm(dir / name, canvas);
  }
  if (!lines) throw std::runtime_error("failed writing " + (dir / "skeletons.jsonl").string());
}

std::vector<SkeletonFrame> read_skeletons(const std::filesystem::path& dir) {
  std::ifstream in(dir / "skeletons.jsonl");
  if (!in) throw std::runtime_error("cannot read " + (dir / "skeletons.jsonl").string());
  std::vector<SkeletonFrame> frames;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    SkeletonFrame f;
    f.frame = j.at("frame").get<std::size_t>();
    for (const auto& p : j.at("pred")) {
      for (const auto& v : p) f.pred.push_back(v.get<double>());
    }
    for (const auto& p : j.at("gt")) {
      for (const auto& v : p) f.gt.push_back(v.get<double>());
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace rpsm
