#pragma once

#include <string>
#include <vector>

#include "caspgrid/extractor.hpp"
#include "caspgrid/losses.hpp"
#include "caspgrid/model.hpp"
#include "caspgrid/params.hpp"

namespace caspgrid {

inline constexpr const char* kRunConfigSchemaVersion = "caspgrid-config/1";

struct TrainSettings {
  int batch_size = 16;
  int64_t steps = 2000;
  int checkpoint_interval = 500;
  int log_breakdown_interval = 100;
  bool augment = true;
  AugmentConfig augment_cfg;
};

struct EvalSettings {
  std::vector<int> k_values{1, 5, 10};
  double miss_threshold_m = 2.0;
  double parked_displacement_m = 0.5;
};

/// Fully resolved run configuration; a serialized snapshot is written next to
/// every run's outputs.
struct RunConfig {
  uint32_t seed = 1;
  int threads = 1;  // 1 = bit-deterministic single-threaded mode
  RasterConfig raster;
  EnvConfig env;
  ModelConfig model;
  LossConfig loss;
  ExtractorConfig extractor;
  AdamWConfig optimizer;
  TrainSettings train;
  EvalSettings eval;

  void validate() const {
    raster.validate();
    model.validate(raster);
    loss.validate(raster.num_types);
    extractor.validate();
    if (train.batch_size < 1) throw_error(ErrorKind::Config, "train: batch size >= 1");
    if (threads < 0) throw_error(ErrorKind::Config, "threads must be >= 0");
  }
};

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);
RunConfig parse_run_config_json(const std::string& text, const std::string& origin);

}  // namespace caspgrid
