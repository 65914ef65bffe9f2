#pragma once

#include <string>
#include <vector>

#include "caspgrid/scene.hpp"
#include "caspgrid/tensor.hpp"

namespace caspgrid {

struct EvalTrajectory {
  std::vector<Vec2> positions;  // world frame, meters, one per future step
  double probability = 0.0;
};

/// Grid context needed to test predictions against the drivable region.
struct DrivableContext {
  GridTensor mask;  // [H, W], 1 = drivable
  Pose2 ego;
  RasterConfig cfg;
};

struct EvalRecord {
  std::string agent_id;
  int object_type = 0;
  std::vector<EvalTrajectory> predictions;  // K modes
  std::vector<Vec2> gt_positions;           // world frame
  std::vector<uint8_t> gt_valid;            // per step
  int drivable_index = -1;                  // into a DrivableContext list, -1 = none

  void validate() const;
};

/// Indices of the top-k modes by probability (ties by mode index).
std::vector<size_t> top_k_modes(const EvalRecord& record, int k);

/// Min over top-k modes of the mean L2 error over valid GT steps.
double min_ade_k(const EvalRecord& record, int k);

/// Min over top-k modes of the L2 error at the last valid GT step.
double min_fde_k(const EvalRecord& record, int k);

/// FDE evaluated at a specific step (0-based); negative when that step has no
/// valid GT.
double min_fde_at_step(const EvalRecord& record, int k, int step);

/// 1 iff min_fde_k exceeds the miss threshold.
int miss_k(const EvalRecord& record, int k, double miss_threshold);

/// Fraction of predicted trajectories with at least one point outside the
/// drivable region (off-grid points count as off-road).
double offroad_rate(const std::vector<EvalRecord>& records,
                    const std::vector<DrivableContext>& contexts);

/// Linear extrapolation of the t0 state: p(t) = p0 + v0 * t * dt. Falls back
/// to the last-two-position difference when the velocity is unusable, and to
/// a standstill when only one valid position exists.
std::vector<Vec2> constant_velocity_baseline(const AgentTrack& track, int num_future,
                                             double dt);

/// Parked-vehicle filter: max displacement over history and GT below the
/// threshold.
bool is_parked(const AgentTrack& track, double displacement_threshold);

}  // namespace caspgrid
