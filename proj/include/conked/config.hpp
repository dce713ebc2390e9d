#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "conked/augment.hpp"
#include "conked/geometry.hpp"
#include "conked/keypoints.hpp"
#include "conked/synth.hpp"
#include "conked/training.hpp"

namespace conked {

// Everything a command can be configured with. Files hold one `key = value`
// per line; `#` starts a comment. Keys are listed by config_keys().
struct PipelineConfig {
  std::string dataset;
  std::string output;
  std::string checkpoint;
  std::uint64_t seed = 0;

  PeakConfig peak;
  TargetConfig target;

  int descriptor_dim = 16;
  int hidden_channels = 16;
  TrainConfig train;
  std::size_t max_steps = 0;  // 0: no limit beyond the epoch count

  AugmentationSpec& augmentation() { return train.augmentation; }
  const AugmentationSpec& augmentation() const { return train.augmentation; }

  RansacConfig ransac;

  double precision_tolerance_px = 3.0;
  bool vtkrs = false;

  VesselTreeSpec synth;
  int cases = 0;

  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
};

// Every accepted key with a one-line description, in echo order.
const std::vector<ConfigKey>& config_keys();

// Applies one assignment. Throws invalid_argument on an unknown key or a
// value that does not parse.
void set_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const PipelineConfig& cfg, const std::string& key);

// Parses text on top of `base` (defaults when omitted). Errors name the line.
PipelineConfig parse_config(const std::string& text, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});

// `key = value` for every key, preceded by its help as a comment. Parsing
// the echo reproduces the configuration.
std::string echo_config(const PipelineConfig& cfg);

}  // namespace conked
