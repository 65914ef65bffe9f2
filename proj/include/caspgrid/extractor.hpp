#pragma once

#include <string>
#include <vector>

#include "caspgrid/model.hpp"
#include "caspgrid/params.hpp"
#include "caspgrid/scene.hpp"

namespace caspgrid {

struct ExtractorConfig {
  double theta_occ = 0.1;   // horizon estimation threshold
  double theta_goal = 0.05; // goal sampling threshold
  int nms_radius = 2;       // Chebyshev suppression radius, cells
  int refine_radius = 2;    // Chebyshev refinement search radius, cells
  int num_goals = 5;        // N modes
  bool horizon_most_points = false;  // literal most-points reading, off by default
  int mlp_hidden = 128;

  void validate() const {
    if (theta_occ <= 0.0 || theta_occ >= 1.0 || theta_goal <= 0.0 || theta_goal >= 1.0)
      throw_error(ErrorKind::Config, "extractor: thresholds must be in (0, 1)");
    if (nms_radius < 1 || refine_radius < 1)
      throw_error(ErrorKind::Config, "extractor: radii must be >= 1");
    if (num_goals < 1) throw_error(ErrorKind::Config, "extractor: N must be >= 1");
    if (mlp_hidden < 1) throw_error(ErrorKind::Config, "extractor: hidden width must be >= 1");
  }
};

struct Goal {
  int64_t h = 0, w = 0;
  double offset_h = 0.0, offset_w = 0.0;  // predicted in-cell offsets at the cell
  double score = 0.0;                     // occupancy at the cell
};

struct TrajectoryMode {
  std::vector<Vec2> positions;       // continuous grid coordinates (h, w), T_T steps
  std::vector<uint8_t> extrapolated; // per step: 1 when replicated beyond horizon
  double probability = 0.0;
};

struct TrajectorySet {
  std::vector<TrajectoryMode> modes;
  int horizon = 1;  // T_h, in steps (1-based)
  bool low_confidence = false;
};

/// Agent state at t0 expressed in grid units for MLP conditioning.
struct AgentStateGrid {
  double pos_h = 0.0, pos_w = 0.0;  // continuous grid coordinate
  double vel_h = 0.0, vel_w = 0.0;  // cells per step
  double acc_h = 0.0, acc_w = 0.0;  // cells per step^2
  double heading_sin = 0.0, heading_cos = 1.0;
};

AgentStateGrid agent_state_grid(const AgentState& state, const Pose2& ego,
                                const RasterConfig& cfg);

/// Largest future step whose grid has a cell above theta_occ (default), or
/// the step with the most super-threshold cells (most_points mode, latest
/// wins ties). Returns 1 and sets low_confidence when no grid qualifies.
int estimate_horizon(const GridTensor& occupancy /*[T,H,W]*/, double theta_occ,
                     bool most_points, bool* low_confidence);

/// Greedy NMS over the horizon grid: repeatedly take the global argmax above
/// theta_goal (ties by h then w), record it, zero the Chebyshev disk of
/// radius nms_radius. May return fewer than n goals.
std::vector<Goal> sample_goals(const GridTensor& occupancy_at_h /*[H,W]*/,
                               const GridTensor& offsets_at_h /*[H,W,2]*/, int n,
                               double theta_goal, int nms_radius);

/// Goal-conditioned trajectory MLP. Output residuals are added to the
/// straight line from the agent position to the goal (reached at the
/// horizon), so zero weights give exact straight-line trajectories.
class TrajectoryMlp {
 public:
  TrajectoryMlp(int hidden, int traj_steps);

  template <typename T>
  void build(ParamStore<T>& store, uint32_t seed) const;

  /// Differentiable residual prediction, shape [1, 2*T_T]; used both for
  /// joint training and (on a non-recording tape) for inference.
  template <typename T>
  Var<T> forward(Tape<T>& g, ParamBinder<T>& params, const AgentStateGrid& state,
                 const Vec2& goal_grid, int horizon, int num_future) const;

  /// Straight-line base positions (equal arc length to the goal at the
  /// horizon, held constant afterwards).
  std::vector<Vec2> base_line(const AgentStateGrid& state, const Vec2& goal_grid,
                              int horizon) const;

  int traj_steps() const { return traj_steps_; }

 private:
  int hidden_;
  int traj_steps_;
};

/// init_trajectories: straight lines to each goal plus MLP residuals.
std::vector<std::vector<Vec2>> init_trajectories(
    const AgentStateGrid& state, const std::vector<Goal>& goals, int horizon,
    int num_future, const TrajectoryMlp& mlp, ParamStore<float>& params);

/// Per-step local refinement against the agent occupancy grids, plus goal
/// score renormalization into mode probabilities.
TrajectorySet refine_trajectories(const std::vector<std::vector<Vec2>>& init,
                                  const std::vector<Goal>& goals,
                                  const GridTensor& occupancy /*[T,H,W]*/,
                                  const GridTensor& offsets /*[T,H,W,2]*/,
                                  int horizon, const ExtractorConfig& cfg);

/// Full pipeline: horizon -> goals -> MLP init -> refinement. Positions past
/// the horizon are replicated from the horizon position and flagged.
TrajectorySet extract(const GridTensor& occupancy /*[T,H,W]*/,
                      const GridTensor& offsets /*[T,H,W,2]*/,
                      const AgentStateGrid& state, const ExtractorConfig& cfg,
                      const TrajectoryMlp& mlp, ParamStore<float>& params);

}  // namespace caspgrid
