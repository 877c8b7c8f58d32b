#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rpsm/model.hpp"
#include "rpsm/train.hpp"

namespace rpsm {

/// Model and training settings for one run. Files are flat `key = value`
/// lines; `#` starts a comment. The same keys are accepted as overrides.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  /// Throws std::invalid_argument on an unknown key or unparsable value.
  void set(const std::string& key, const std::string& value);
  /// Applies every line of the file on top of the current values.
  void merge_file(const std::filesystem::path& path);

  static const std::vector<std::string>& keys();
};

/// Splits "key=value"; throws if there is no '=' or the key is empty.
std::pair<std::string, std::string> parse_assignment(const std::string& text);

/// Names of the config keys whose values differ.
std::vector<std::string> model_config_differences(const ModelConfig& a, const ModelConfig& b);

}  // namespace rpsm
