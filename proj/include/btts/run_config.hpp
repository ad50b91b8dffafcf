#pragma once

#include "btts/inference.hpp"
#include "btts/judge.hpp"
#include "btts/model.hpp"
#include "btts/training.hpp"

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace btts {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every tunable of the pipeline. Corpus paths are command-line only.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  TransferConfig inference;
  JudgeConfig judge;
  std::size_t min_freq = 1;
};

enum class ConfigSection { kModel, kTraining, kLoss, kCorruption, kData, kInference, kJudge };

struct ConfigField {
  std::string key;  // section.name
  ConfigSection section;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

/// All fields in a fixed order.
const std::vector<ConfigField>& config_fields();
const ConfigField& config_field(std::string_view key);

/// Applies one value; throws ConfigError naming the key on bad input.
void set_config_value(RunConfig& cfg, std::string_view key, const std::string& value);

/// INI dialect:
///   # comment        ; comment
///   [section]
///   key = value
/// Keys may also be written fully qualified (section.key) outside a section.
/// Unknown sections or keys and duplicate keys are errors.
void apply_config_text(RunConfig& cfg, std::string_view text);
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

/// Every field with its current value, in the same dialect.
std::string to_config_text(const RunConfig& cfg);

/// Validates every section.
void validate(const RunConfig& cfg);

}  // namespace btts
