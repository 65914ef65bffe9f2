#pragma once

#include <vector>

#include "caspgrid/scene.hpp"
#include "caspgrid/tensor.hpp"

namespace caspgrid {

/// Number of per-agent input feature channels: one-hot type (C) + in-cell
/// offsets (2) + velocity (2) + acceleration (2) + heading sin/cos (2) +
/// box size (2).
inline int object_feature_channels(const RasterConfig& cfg) {
  return cfg.num_types + 10;
}

/// Agent states -> input grid I of shape [M, H, W, C+10]. Vector channels are
/// grid-frame components; invalid or out-of-bounds states are skipped. When
/// two agents land in the same cell the one nearer the ego keeps the whole
/// feature vector (ties broken by id order).
GridTensor rasterize_objects(const SceneSample& sample, const RasterConfig& cfg);

/// Environment -> grid E of shape [H, W, K_env]; channel order: semantic
/// layers as configured, then centerline sin/cos, then lidar, then radar.
GridTensor rasterize_environment(const SceneSample& sample, const RasterConfig& cfg,
                                 const EnvConfig& env);

/// One agent's conditioning mask at a pyramid level (cell extent scaled by
/// 2^level): binary position channel plus two in-cell offset channels, shape
/// [H>>level, W>>level, 3]. Throws MaskUnavailable if the agent has no valid
/// in-bounds state at t0.
GridTensor rasterize_agent_masks(const SceneSample& sample, const RasterConfig& cfg,
                                 const std::string& agent_id, int level);

/// Rendered training targets for one head (object type or single agent).
struct HeadGroundTruth {
  GridTensor occupancy;   // [T, H, W], 1 at GT cells, Gaussian halo elsewhere
  GridTensor peak_mask;   // [T, H, W], 1 exactly at GT cells
  GridTensor offsets;     // [T, H, W, 2], valid only where peak_mask = 1
  GridTensor velocities;  // [T, H, W, 2], cells per step, same validity
  std::vector<int> counts;  // in-grid GT objects per future step (N_ct)
};

struct SceneGroundTruth {
  std::vector<HeadGroundTruth> per_type;  // size C
};

struct AgentGroundTruth {
  std::vector<HeadGroundTruth> per_agent;  // follows agents_of_interest order
};

/// Future GT positions -> occupancy targets with a truncated Gaussian halo
/// (radius 3*sigma_g cells, max-combined) plus offset / velocity targets.
SceneGroundTruth render_gt(const SceneSample& sample, const RasterConfig& cfg,
                           double sigma_g);
AgentGroundTruth render_agent_gt(const SceneSample& sample, const RasterConfig& cfg,
                                 double sigma_g);

}  // namespace caspgrid
