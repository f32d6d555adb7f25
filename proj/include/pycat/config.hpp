#pragma once

#include <filesystem>
#include <string>

#include "pycat/data.hpp"
#include "pycat/model.hpp"
#include "pycat/regressor.hpp"

namespace pycat {

/// Everything a run depends on. Text form: one `key = value` per line, `#`
/// starts a comment; see README for the key list.
struct RunConfig {
  ModelConfig model;
  uint64_t seed = 0;
  int64_t frames = 1;  // temporal window T, current frame included

  double lr = 5e-5;
  int64_t batch = 8;
  int64_t steps = 300;
  int64_t log_every = 10;
  int64_t checkpoint_every = 0;  // 0 disables intermediate checkpoints
  bool augment = true;
  AugmentRanges ranges;
  LossWeights loss;

  int64_t train_count = 64;
  int64_t eval_count = 32;
  uint64_t data_seed = 1;
  bool video = false;
  int64_t sequence_length = 8;

  double oks_sigma = 0.05;
};

/// Throws ParseError naming the line for unknown keys, malformed values and
/// out-of-range settings.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical text form; parse_config(format_config(c)) reproduces c.
std::string format_config(const RunConfig& c);

}  // namespace pycat
