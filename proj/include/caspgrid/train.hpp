#pragma once

#include <string>
#include <vector>

#include "caspgrid/config.hpp"
#include "caspgrid/data.hpp"

namespace caspgrid {

/// One rasterized training batch plus everything the losses need.
struct PreparedBatch {
  ModelInputs<float> inputs;
  std::vector<HeadTargets<float>> scene_targets;  // per object type
  std::vector<HeadTargets<float>> agent_targets;  // per agent instance

  struct AgentInstance {
    int64_t sample = 0;
    std::string agent_id;
    AgentStateGrid state;
    std::vector<Vec2> gt_grid;      // future positions, continuous grid coords
    std::vector<uint8_t> gt_valid;  // in-bounds valid steps
  };
  std::vector<AgentInstance> instances;
};

/// Rasterizes a batch of scenes (objects, environment, masks, GT) into model
/// inputs and stacked loss targets. Agents of interest that are out of bounds
/// at t0 are skipped. Pure; batch members are processed in parallel.
PreparedBatch prepare_batch(const std::vector<const SceneSample*>& scenes,
                            const RunConfig& cfg);

struct TrainOutcome {
  int64_t steps_run = 0;
  std::string final_checkpoint;
  std::vector<double> losses;  // total per step, trajectory term included
};

/// Full training loop: augment -> rasterize -> forward -> loss -> backward ->
/// optimizer step, with line-delimited JSON logging, periodic checkpoints and
/// resume support. Deterministic given (config, dataset, resume point).
TrainOutcome run_training(const RunConfig& cfg, const std::string& dataset_dir,
                          const std::string& out_dir,
                          const std::string& resume_checkpoint = "");

}  // namespace caspgrid
