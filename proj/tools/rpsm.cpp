// rpsm: synthetic data, training, evaluation, export and gradient checks.
// Exit codes: 0 ok, 1 runtime failure, 2 usage error.

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "rpsm/config.hpp"
#include "rpsm/evaluate.hpp"
#include "rpsm/gradcheck.hpp"

namespace {

using namespace rpsm;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::optional<std::uint64_t> env_seed() {
  const char* text = std::getenv("RPSM_SEED");
  if (!text || !*text) return std::nullopt;
  char* end = nullptr;
  const auto v = std::strtoull(text, &end, 10);
  if (*end != '\0') throw UsageError(std::string("RPSM_SEED is not an integer: ") + text);
  return v;
}

// Settings layered as: defaults, RPSM_SEED, config file, --set, dedicated flags.
struct Settings {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::string> preset;
  std::optional<std::size_t> stages, clip_len, epochs, workers;
  std::optional<double> lr, decay;
  std::optional<std::uint64_t> seed;

  void add_model_flags(CLI::App& cmd) {
    cmd.add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    cmd.add_option("--set", overrides, "override a config key (key=value), repeatable");
    cmd.add_option("--preset", preset, "scale preset: desk or full");
    cmd.add_option("--stages", stages, "number of stages K");
    cmd.add_option("--clip-len", clip_len, "clip length C");
  }
  void add_train_flags(CLI::App& cmd) {
    cmd.add_option("--lr", lr, "learning rate");
    cmd.add_option("--decay", decay, "L2 weight decay");
    cmd.add_option("--epochs", epochs, "training epochs");
    cmd.add_option("--seed", seed, "seed (falls back to RPSM_SEED)");
  }

  // Assignments in the order they apply, as key=value pairs.
  std::vector<std::pair<std::string, std::string>> assignments() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& o : overrides) out.push_back(parse_assignment(o));
    auto put = [&](const char* key, const auto& v) {
      if (!v) return;
      std::ostringstream s;
      s << std::setprecision(17) << *v;
      out.emplace_back(key, s.str());
    };
    put("preset", preset);
    put("stages", stages);
    put("clip_length", clip_len);
    put("epochs", epochs);
    put("workers", workers);
    put("lr", lr);
    put("decay", decay);
    put("seed", seed);
    return out;
  }

  RunConfig resolve(RunConfig base = {}) const {
    try {
      if (const auto s = env_seed()) base.train.seed = *s;
      if (!config_path.empty()) base.merge_file(config_path);
      for (const auto& [k, v] : assignments()) base.set(k, v);
      base.model.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return base;
  }

  bool touches_model() const {
    if (!config_path.empty() || preset || stages || clip_len) return true;
    for (const auto& [k, v] : assignments()) {
      if (k == "preset" || k == "stages" || k == "clip_length" || k == "joints" || k == "share_recurrent" ||
          k == "share_all_2d") {
        return true;
      }
    }
    return false;
  }
};

DatasetSplit load_split(const std::string& dir, Split role, std::size_t extent) {
  DatasetSplit split{role, load_sequences(DatasetManifest::load(dir), extent)};
  if (split.sequences.empty()) throw std::runtime_error("dataset " + dir + " has no sequences");
  return split;
}

int run_synth(const std::string& out, std::size_t sequences, std::size_t frames, std::optional<std::uint64_t> seed,
              std::size_t extent) {
  GenerateOptions o;
  o.out_dir = out;
  o.sequences = sequences;
  o.frames = frames;
  o.image_extent = extent;
  o.seed = seed ? *seed : env_seed().value_or(1);
  const auto m = generate_dataset(o);
  std::cout << "wrote " << m.sequences.size() << " sequences of " << frames << " frames (" << m.image_width << "x"
            << m.image_height << ", " << m.joints << " joints, seed " << m.seed << ") to " << out << "\n";
  return 0;
}

int run_train(const Settings& settings, const std::string& data, const std::string& eval_data,
              const std::string& checkpoint, std::string log) {
  const auto cfg = settings.resolve();
  cfg.train.validate(cfg.model.stages);
  RpsmModel model(cfg.model, cfg.train.seed);
  const auto params = model.parameters();
  std::cout << "model " << to_string(cfg.model.preset) << " K=" << cfg.model.stages << " C=" << cfg.model.clip_length
            << ": " << params.size() << " parameter tensors, " << scalar_count(params) << " parameters\n";

  const auto extent = model.architecture().input_extent;
  const auto train_split = load_split(data, Split::train, extent);
  std::optional<DatasetSplit> eval_split;
  if (!eval_data.empty()) eval_split = load_split(eval_data, Split::test, extent);
  if (log.empty()) log = checkpoint + ".log.jsonl";

  std::size_t epoch = 0, count = 0;
  double sum = 0.0;
  std::optional<double> eval;
  auto flush = [&] {
    if (count == 0) return;
    std::cout << "epoch " << epoch << "  loss " << sum / static_cast<double>(count);
    if (eval) std::cout << "  eval " << std::fixed << std::setprecision(2) << *eval << " mm" << std::defaultfloat;
    std::cout << "\n";
    sum = 0.0;
    count = 0;
    eval.reset();
  };
  try {
    train(model, train_split, eval_split ? &*eval_split : nullptr, cfg.train, {checkpoint, log},
          [&](const IterationRecord& r) {
            if (r.epoch != epoch) flush();
            epoch = r.epoch;
            sum += r.loss;
            ++count;
            if (r.eval_error_mm) eval = r.eval_error_mm;
          });
  } catch (const TrainingAborted& e) {
    flush();
    std::cerr << "error: training aborted at iteration " << e.iteration() << ": " << e.what() << "\n";
    return 1;
  }
  flush();
  std::cout << "checkpoint " << checkpoint << "\nlog " << log << "\n";
  return 0;
}

int run_eval(const Settings& settings, const std::string& checkpoint, const std::string& data,
             const std::string& alignment, bool oracle, const std::string& report, std::size_t workers) {
  auto loaded = load_model(checkpoint);
  if (settings.touches_model()) {
    RunConfig from_ckpt;
    from_ckpt.model = loaded.model.config();
    const auto wanted = settings.resolve(from_ckpt);
    const auto diff = model_config_differences(wanted.model, loaded.model.config());
    if (!diff.empty()) {
      std::cerr << "error: configuration does not match checkpoint " << checkpoint << " in:";
      for (const auto& k : diff) std::cerr << " " << k;
      std::cerr << "\n";
      return 1;
    }
  }
  const auto split = load_split(data, Split::test, loaded.model.architecture().input_extent);
  EvalOptions opts;
  try {
    opts.alignment = parse_alignment(alignment);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  opts.oracle = oracle;
  opts.workers = workers;
  const auto r = evaluate(loaded.model, split, loaded.stats, opts);
  std::cout << r.table();
  std::cout << "mean " << std::fixed << std::setprecision(2) << r.mean << " mm over " << r.frames << " frames ("
            << to_string(opts.alignment) << " alignment)\n";
  if (!report.empty()) {
    std::ofstream out(report);
    if (!out) throw std::runtime_error("cannot write " + report);
    out << r.to_json().dump(2) << "\n";
  }
  return 0;
}

int run_predict(const std::string& checkpoint, const std::string& data, std::string sequence,
                const std::string& out) {
  const auto loaded = load_model(checkpoint);
  const auto manifest = DatasetManifest::load(data);
  if (manifest.sequences.empty()) throw std::runtime_error("dataset " + data + " has no sequences");
  if (sequence.empty()) sequence = manifest.sequences.front().id;
  const SequenceEntry* entry = nullptr;
  for (const auto& e : manifest.sequences) {
    if (e.id == sequence) entry = &e;
  }
  if (!entry) throw UsageError("no sequence '" + sequence + "' in " + data);
  const auto seq = load_sequence(manifest, *entry, loaded.model.architecture().input_extent);
  const auto preds = predict_sequence(loaded.model, seq, loaded.stats);
  export_skeletons(preds.back(), seq.poses_mm, seq.joints, manifest.parents, out);
  double total = 0.0;
  const std::size_t dim = 3 * seq.joints;
  for (std::size_t t = 0; t < seq.length(); ++t) {
    total += pose_error({preds.back().data() + t * dim, dim}, {seq.poses_mm.data() + t * dim, dim});
  }
  std::cout << "sequence " << seq.id << " (" << seq.action << "): " << seq.length() << " frames, mean "
            << std::fixed << std::setprecision(2) << total / static_cast<double>(seq.length()) << " mm\n"
            << "exported to " << out << "\n";
  return 0;
}

int run_gradcheck(std::optional<std::uint64_t> seed, std::size_t coords, const std::string& fault) {
  GradCheckOptions o;
  o.seed = seed ? *seed : env_seed().value_or(o.seed);
  o.coords_per_tensor = coords;
  if (!fault.empty()) debug::set_faulty_backward(fault);
  auto groups = check_layers(o);
  for (auto& g : check_model(ModelConfig{}, o)) groups.push_back(std::move(g));
  std::vector<std::string> failing;
  std::size_t checked = 0;
  for (const auto& g : groups) {
    std::cout << std::left << std::setw(34) << g.name << std::right << std::setw(4) << g.checked << " coords  worst "
              << std::scientific << std::setprecision(3) << g.worst << std::defaultfloat;
    if (g.skipped) std::cout << "  (" << g.skipped << " at kinks skipped)";
    std::cout << (g.pass ? "  ok" : "  FAIL") << "\n";
    checked += g.checked;
    if (!g.pass) failing.push_back(g.name);
  }
  std::cout << groups.size() << " groups, " << checked << " coordinates, tolerance " << o.tolerance << "\n";
  if (failing.empty()) return 0;
  std::cerr << "failing groups:";
  for (const auto& f : failing) std::cerr << " " << f;
  std::cerr << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent multi-stage 3D pose regression from monocular image sequences"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "render a synthetic skeleton dataset");
  std::string synth_out;
  std::size_t synth_sequences = 8, synth_frames = 40, synth_extent = 128;
  std::optional<std::uint64_t> synth_seed;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--sequences", synth_sequences, "number of sequences")->capture_default_str();
  synth->add_option("--frames", synth_frames, "frames per sequence")->capture_default_str();
  synth->add_option("--image-size", synth_extent, "square image extent in pixels")->capture_default_str();
  synth->add_option("--seed", synth_seed, "seed (falls back to RPSM_SEED, then 1)");

  Settings train_settings;
  std::string train_data, train_eval, train_out, train_log;
  std::size_t train_workers = 1;
  auto* train_cmd = app.add_subcommand("train", "train a model on a dataset");
  train_cmd->add_option("--data", train_data, "training dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--eval-data", train_eval, "held-out dataset evaluated during training")
      ->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", train_out, "checkpoint path")->required();
  train_cmd->add_option("--log", train_log, "JSONL log path (default <out>.log.jsonl)");
  train_cmd->add_option("--workers", train_workers, "evaluation threads")->capture_default_str();
  train_settings.add_model_flags(*train_cmd);
  train_settings.add_train_flags(*train_cmd);

  Settings eval_settings;
  std::string eval_ckpt, eval_data, eval_alignment = "root", eval_report;
  bool eval_oracle = false;
  std::size_t eval_workers = 1;
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a held-out dataset");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--alignment", eval_alignment, "root or centroid")->capture_default_str();
  eval_cmd->add_flag("--oracle", eval_oracle, "score ground truth against itself");
  eval_cmd->add_option("--report", eval_report, "write the JSON report here");
  eval_cmd->add_option("--workers", eval_workers, "evaluation threads")->capture_default_str();
  eval_settings.add_model_flags(*eval_cmd);

  std::string pred_ckpt, pred_data, pred_seq, pred_out;
  auto* predict = app.add_subcommand("predict", "export predicted skeletons for one sequence");
  predict->add_option("--checkpoint", pred_ckpt, "checkpoint path")->required()->check(CLI::ExistingFile);
  predict->add_option("--data", pred_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  predict->add_option("--sequence", pred_seq, "sequence id (default: first)");
  predict->add_option("--out", pred_out, "export directory")->required();

  std::optional<std::uint64_t> gc_seed;
  std::size_t gc_coords = 8;
  std::string gc_fault;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every layer and a desk model");
  gradcheck->add_option("--seed", gc_seed, "seed (falls back to RPSM_SEED)");
  gradcheck->add_option("--coords", gc_coords, "coordinates sampled per tensor")->capture_default_str();
  gradcheck->add_option("--fault", gc_fault, "corrupt one backward pass for testing: conv2d or linear")
      ->check(CLI::IsMember({"conv2d", "linear"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) return run_synth(synth_out, synth_sequences, synth_frames, synth_seed, synth_extent);
    if (*train_cmd) {
      train_settings.workers = train_workers;
      return run_train(train_settings, train_data, train_eval, train_out, train_log);
    }
    if (*eval_cmd) return run_eval(eval_settings, eval_ckpt, eval_data, eval_alignment, eval_oracle, eval_report,
                                   eval_workers);
    if (*predict) return run_predict(pred_ckpt, pred_data, pred_seq, pred_out);
    if (*gradcheck) return run_gradcheck(gc_seed, gc_coords, gc_fault);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
