#pragma once

// Run configuration: a JSON file with one section per pipeline stage.
// Parsing validates everything up front — unknown keys, bad types and
// out-of-range values are all rejected before any work starts. The schema
// is documented in docs/config.md.

#include <cstdint>
#include <string>
#include <vector>

#include "xmask/attacks.hpp"
#include "xmask/benchmark.hpp"
#include "xmask/data_io.hpp"
#include "xmask/mask.hpp"
#include "xmask/metrics.hpp"
#include "xmask/monitor.hpp"
#include "xmask/train.hpp"

namespace xmask {

struct DatasetSpec {
  std::string source = "synthetic";  // synthetic | idx | cifar10
  // synthetic
  std::string kind = "blobs";
  std::size_t count = 2000;
  Shape image_shape = {1, 28, 28};
  std::size_t classes = 10;
  std::uint64_t seed = 7;
  // idx
  std::string images_path, labels_path;
  // cifar10
  std::vector<std::string> batch_paths;
};

struct ModelSpec {
  std::string kind = "mlp";  // mlp | convnet | xunet
  std::vector<std::size_t> hidden = {256, 128};
  std::size_t classes = 10;
  double slu_a = 0.5;
  std::uint64_t init_seed = 42;
};

struct RunConfig {
  DatasetSpec dataset;
  ModelSpec model;
  AttackConfig attack;
  MuteConfig mute;
  MonitorConfig monitor = [] {
    MonitorConfig m;
    m.xai_method = XaiMethod::lrp;
    m.lrp_eps = 1e-3;
    m.calibration = Calibration::clean_percentile;
    return m;
  }();
  TrainConfig train;
  BalanceWeights balance_weights;
  BenchmarkConfig benchmark;
  std::uint64_t seed = 1;
  std::string float_mode = "f32";  // f32 | f64
  std::string out_dir = "out";
  std::size_t jobs = 1;

  // artifact paths consumed by individual commands
  std::string classifier_checkpoint;
  std::string xunet_checkpoint;
  std::string mask_source = "mute";  // none | mute | xunet | constant | file
  double mask_constant = 1.0;
  std::string mask_file;
  std::size_t explain_count = 8;
  std::string explain_method = "ig";
  std::size_t eval_count = 500;
};

// Parses and fully validates a JSON config file; throws std::runtime_error
// with a path-qualified message on any violation.
RunConfig load_run_config(const std::string& path);

// Parses the same schema from a JSON string (used by tests).
RunConfig parse_run_config(const std::string& json_text);

}  // namespace xmask
