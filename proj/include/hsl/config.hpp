#pragma once

#include <string>
#include <vector>

#include "hsl/datapipe.hpp"
#include "hsl/net.hpp"
#include "hsl/trainer.hpp"

namespace hsl {

// Every knob of the pipeline in one place. Keys are flat dotted names; the
// same table backs the config file, the CLI overrides, and --help.
struct RunConfig {
  // generation
  GenParams gen;
  int gen_sections = 4;
  int gen_sections_per_subject = 2;

  // preparation
  int prep_window = 64;
  int prep_stride = 0;  // 0 means window / 2
  double prep_neg_keep_prob = 0.025;
  double prep_split_ratio = 0.9;
  double prep_test_subject_fraction = 0.25;

  NetConfig net;
  TrainConfig train;

  // sweep
  std::string sweep_param = "alpha";
  std::vector<double> sweep_values = {0.0, 0.5, 1.0};

  std::string out_dir = "out";
  std::uint64_t seed = 42;
  std::string precision = "f32";

  int stride_or_default() const { return prep_stride > 0 ? prep_stride : prep_window / 2; }

  void validate() const;
};

// Applies one key=value pair; throws ConfigError on unknown keys or bad
// values.
void apply_key(RunConfig& cfg, const std::string& key, const std::string& value);

// Flat UTF-8 key=value file; '#' starts a comment, blank lines are ignored.
void load_config_file(RunConfig& cfg, const std::string& path);

// One line per key: name, default, description.
std::string config_help();

// Every key rendered as key=value, sorted; identical configs render to
// identical strings.
std::string canonical_config_string(const RunConfig& cfg);

std::string config_hash(const RunConfig& cfg);

}  // namespace hsl
