#include "rpsm/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rpsm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw std::invalid_argument("config key '" + key + "': '" + value + "' is not " + expected);
}

std::size_t to_count(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) bad_value(key, value, "a non-negative integer");
  return out;
}

double to_real(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value, "a number");
  }
  if (used != value.size()) bad_value(key, value, "a number");
  return out;
}

bool to_flag(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

std::vector<double> to_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(to_real(key, trim(item)));
  if (out.empty()) bad_value(key, value, "a comma-separated list of numbers");
  return out;
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k{"preset",   "stages",    "clip_length", "joints",    "share_recurrent",
                                          "share_all_2d", "lr",    "decay",       "alphas",    "epochs",
                                          "seed",     "scale_min", "scale_max",   "augment",   "eval_every",
                                          "workers"};
  return k;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "preset") {
    model.preset = parse_preset(value);
  } else if (key == "stages") {
    model.stages = to_count(key, value);
  } else if (key == "clip_length") {
    model.clip_length = to_count(key, value);
  } else if (key == "joints") {
    model.joints = to_count(key, value);
  } else if (key == "share_recurrent") {
    model.share_recurrent_across_stages = to_flag(key, value);
  } else if (key == "share_all_2d") {
    model.share_all_2d_layers = to_flag(key, value);
  } else if (key == "lr") {
    train.lr = to_real(key, value);
  } else if (key == "decay") {
    train.decay = to_real(key, value);
  } else if (key == "alphas") {
    train.alphas = to_list(key, value);
  } else if (key == "epochs") {
    train.epochs = to_count(key, value);
  } else if (key == "seed") {
    train.seed = to_count(key, value);
  } else if (key == "scale_min") {
    train.scale_min = to_real(key, value);
  } else if (key == "scale_max") {
    train.scale_max = to_real(key, value);
  } else if (key == "augment") {
    train.augment = to_flag(key, value);
  } else if (key == "eval_every") {
    train.eval_every = to_count(key, value);
  } else if (key == "workers") {
    train.workers = to_count(key, value);
  } else {
    throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      const auto [key, value] = parse_assignment(line);
      set(key, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

std::pair<std::string, std::string> parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("expected key=value, got '" + text + "'");
  auto key = trim(text.substr(0, eq));
  if (key.empty()) throw std::invalid_argument("empty key in '" + text + "'");
  return {key, trim(text.substr(eq + 1))};
}

std::vector<std::string> model_config_differences(const ModelConfig& a, const ModelConfig& b) {
  std::vector<std::string> out;
  if (a.preset != b.preset) out.push_back("preset");
  if (a.stages != b.stages) out.push_back("stages");
  if (a.clip_length != b.clip_length) out.push_back("clip_length");
  if (a.joints != b.joints) out.push_back("joints");
  if (a.share_recurrent_across_stages != b.share_recurrent_across_stages) out.push_back("share_recurrent");
  if (a.share_all_2d_layers != b.share_all_2d_layers) out.push_back("share_all_2d");
  return out;
}

}  // namespace rpsm
