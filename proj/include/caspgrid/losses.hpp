#pragma once

#include <string>
#include <utility>
#include <vector>

#include "caspgrid/raster.hpp"
#include "caspgrid/tape.hpp"

namespace caspgrid {

struct LossConfig {
  double alpha = 0.5;   // positive/negative branch balance
  double beta = 4.0;    // halo attenuation exponent
  double gamma = 2.0;   // focal exponent
  double w_offset = 0.1;
  double w_velocity = 0.1;
  std::vector<double> type_weights{0.25, 0.25, 0.1};  // w_c, length >= C
  double w_agents = 0.4;
  double sigma_g = 2.0;      // GT kernel width, cells
  double w_trajectory = 0.1; // joint trajectory-MLP term (outside the grid loss)

  void validate(int num_types) const {
    if (alpha <= 0.0 || alpha >= 1.0)
      throw_error(ErrorKind::Config, "loss: alpha must be in (0, 1)");
    if (beta < 0.0 || gamma < 0.0)
      throw_error(ErrorKind::Config, "loss: beta and gamma must be >= 0");
    if (w_offset < 0.0 || w_velocity < 0.0 || w_agents < 0.0 || w_trajectory < 0.0)
      throw_error(ErrorKind::Config, "loss: weights must be >= 0");
    if (static_cast<int>(type_weights.size()) < num_types)
      throw_error(ErrorKind::Config, "loss: need a type weight per object type");
    for (double w : type_weights)
      if (w < 0.0) throw_error(ErrorKind::Config, "loss: type weights must be >= 0");
  }
};

/// Distance-aware focal loss over one occupancy grid batch [K, H, W].
/// Per slice k:  -1/(counts[k]+1) * sum_hw { Y=1:    alpha*(1-p)^gamma*log(p)
///                                         ; else: (1-alpha)*(1-Y)^beta*p^gamma*log(1-p) }
/// The returned scalar is the sum over k divided by norm_div. Predictions are
/// clamped to [1e-7, 1-1e-7]; clamped cells pass no gradient.
template <typename T>
Var<T> focal_occupancy_loss(Tape<T>& g, Var<T> p, const Tensor<T>& y,
                            const std::vector<int>& counts, const LossConfig& cfg,
                            double norm_div = 1.0);

/// L2 feature loss on masked cells: w_f * sum over {mask=1} of squared h and w
/// component errors, summed over slices and divided by norm_div.
template <typename T>
Var<T> masked_l2_loss(Tape<T>& g, Var<T> pred, const Tensor<T>& target,
                      const Tensor<T>& mask, double w_f, double norm_div = 1.0);

/// Training targets for one head, stacked over batch (or agent instances):
/// per future step t, tensors with leading extent K.
template <typename T>
struct HeadTargets {
  std::vector<Tensor<T>> occupancy;   // T x [K, H, W]
  std::vector<Tensor<T>> peaks;       // T x [K, H, W]
  std::vector<Tensor<T>> offsets;     // T x [K, H, W, 2]
  std::vector<Tensor<T>> velocities;  // T x [K, H, W, 2]
  std::vector<std::vector<int>> counts;  // T x K
};

/// Stacks per-sample rendered GT into per-step batch tensors.
template <typename T>
HeadTargets<T> stack_head_targets(const std::vector<const HeadGroundTruth*>& gts);

struct LossTerm {
  std::string name;
  double value = 0.0;
};

struct LossBreakdown {
  std::vector<LossTerm> terms;  // raw per-(c|a, t, task) values
  double scene = 0.0;           // weighted scene portion of the total
  double agents = 0.0;          // weighted agent portion of the total
  double total = 0.0;
};

/// Scene + agent loss: (1/T) * (sum_c sum_t w_c*(occ+off+vel)
///                              + w_A * sum_a sum_t (occ+off+vel)).
/// scene_heads[c] and agent_head are post-activation [K, H, W, T*5] outputs;
/// agent targets are per instance (K = 1 each). batch_size divides every term
/// (batch-mean). Throws Numerical when any term is non-finite.
template <typename T>
std::pair<Var<T>, LossBreakdown> total_loss(
    Tape<T>& g, const std::vector<Var<T>>& scene_heads,
    const std::vector<HeadTargets<T>>& scene_targets, Var<T> agent_head,
    const std::vector<HeadTargets<T>>& agent_targets, int64_t batch_size,
    int num_future, const LossConfig& cfg);

}  // namespace caspgrid
