#include "caspgrid/extractor.hpp"

#include <algorithm>
#include <cmath>

#include "caspgrid/ops.hpp"

namespace caspgrid {

AgentStateGrid agent_state_grid(const AgentState& state, const Pose2& ego,
                                const RasterConfig& cfg) {
  AgentStateGrid out;
  const GridCoord gc = world_to_grid(state.position, ego, cfg);
  out.pos_h = gc.cont_h;
  out.pos_w = gc.cont_w;
  const double cells_per_step = cfg.dt() / cfg.resolution;
  const Vec2 v = world_vec_to_grid(state.velocity, ego.heading);
  out.vel_h = v.x * cells_per_step;
  out.vel_w = v.y * cells_per_step;
  const Vec2 a = world_vec_to_grid(state.acceleration, ego.heading);
  out.acc_h = a.x * cells_per_step * cfg.dt();
  out.acc_w = a.y * cells_per_step * cfg.dt();
  const double hg = heading_to_grid(state.heading, ego.heading);
  out.heading_sin = std::sin(hg);
  out.heading_cos = std::cos(hg);
  return out;
}

int estimate_horizon(const GridTensor& occupancy, double theta_occ, bool most_points,
                     bool* low_confidence) {
  if (occupancy.rank() != 3)
    throw_error(ErrorKind::Shape, "estimate_horizon: expects [T, H, W]");
  const int64_t t = occupancy.dim(0), cells = occupancy.dim(1) * occupancy.dim(2);
  if (low_confidence) *low_confidence = false;
  int best_step = 0;
  int64_t best_count = 0;
  for (int64_t ti = 0; ti < t; ++ti) {
    int64_t count = 0;
    const float* grid = occupancy.data() + ti * cells;
    for (int64_t i = 0; i < cells; ++i)
      if (grid[i] > theta_occ) ++count;
    if (most_points) {
      if (count > 0 && count >= best_count) {  // latest wins ties
        best_count = count;
        best_step = static_cast<int>(ti) + 1;
      }
    } else if (count > 0) {
      best_step = static_cast<int>(ti) + 1;
    }
  }
  if (best_step == 0) {
    if (low_confidence) *low_confidence = true;
    return 1;
  }
  return best_step;
}

std::vector<Goal> sample_goals(const GridTensor& occupancy_at_h,
                               const GridTensor& offsets_at_h, int n,
                               double theta_goal, int nms_radius) {
  if (occupancy_at_h.rank() != 2)
    throw_error(ErrorKind::Shape, "sample_goals: expects [H, W]");
  const int64_t h = occupancy_at_h.dim(0), w = occupancy_at_h.dim(1);
  if (offsets_at_h.dims() != std::vector<int64_t>{h, w, 2})
    throw_error(ErrorKind::Shape, "sample_goals: offsets must be [H, W, 2]");
  GridTensor work = occupancy_at_h;
  std::vector<Goal> goals;
  while (static_cast<int>(goals.size()) < n) {
    double best = theta_goal;
    int64_t bh = -1, bw = -1;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        const double v = work[i * w + j];
        if (v > best) {  // strict: ties resolved by scan order (h, then w)
          best = v;
          bh = i;
          bw = j;
        }
      }
    if (bh < 0) break;
    Goal goal;
    goal.h = bh;
    goal.w = bw;
    goal.score = occupancy_at_h[bh * w + bw];
    goal.offset_h = offsets_at_h[(bh * w + bw) * 2 + 0];
    goal.offset_w = offsets_at_h[(bh * w + bw) * 2 + 1];
    goals.push_back(goal);
    for (int64_t di = -nms_radius; di <= nms_radius; ++di)
      for (int64_t dj = -nms_radius; dj <= nms_radius; ++dj) {
        const int64_t i = bh + di, j = bw + dj;
        if (i >= 0 && i < h && j >= 0 && j < w) work[i * w + j] = 0.0f;
      }
  }
  return goals;
}

TrajectoryMlp::TrajectoryMlp(int hidden, int traj_steps)
    : hidden_(hidden), traj_steps_(traj_steps) {
  if (hidden < 1 || traj_steps < 1)
    throw_error(ErrorKind::Config, "trajectory mlp: invalid dimensions");
}

template <typename T>
void TrajectoryMlp::build(ParamStore<T>& store, uint32_t seed) const {
  std::mt19937 rng(seed);
  auto& w1 = store.add("trajectory_mlp.fc1.weight", {11, hidden_});
  init_fan_in_uniform(w1.value, rng);
  store.add("trajectory_mlp.fc1.bias", {hidden_});
  auto& w2 = store.add("trajectory_mlp.fc2.weight", {hidden_, hidden_});
  init_fan_in_uniform(w2.value, rng);
  store.add("trajectory_mlp.fc2.bias", {hidden_});
  // Zero-started output layer: trajectories begin as exact straight lines.
  store.add("trajectory_mlp.fc3.weight", {hidden_, 2 * traj_steps_});
  store.add("trajectory_mlp.fc3.bias", {2 * traj_steps_});
}

template <typename T>
Var<T> TrajectoryMlp::forward(Tape<T>& g, ParamBinder<T>& params,
                              const AgentStateGrid& state, const Vec2& goal_grid,
                              int horizon, int num_future) const {
  Tensor<T> in({1, 11});
  const double span = 64.0;  // feature scale for positions, cells
  in[0] = static_cast<T>(state.pos_h / span);
  in[1] = static_cast<T>(state.pos_w / span);
  in[2] = static_cast<T>(state.vel_h);
  in[3] = static_cast<T>(state.vel_w);
  in[4] = static_cast<T>(state.acc_h);
  in[5] = static_cast<T>(state.acc_w);
  in[6] = static_cast<T>(state.heading_sin);
  in[7] = static_cast<T>(state.heading_cos);
  in[8] = static_cast<T>((goal_grid.x - state.pos_h) / span);
  in[9] = static_cast<T>((goal_grid.y - state.pos_w) / span);
  in[10] = static_cast<T>(static_cast<double>(horizon) / num_future);
  auto x = g.leaf(std::move(in));
  x = relu(g, linear(g, x, params("trajectory_mlp.fc1.weight"),
                     params("trajectory_mlp.fc1.bias")));
  x = relu(g, linear(g, x, params("trajectory_mlp.fc2.weight"),
                     params("trajectory_mlp.fc2.bias")));
  return linear(g, x, params("trajectory_mlp.fc3.weight"),
                params("trajectory_mlp.fc3.bias"));
}

std::vector<Vec2> TrajectoryMlp::base_line(const AgentStateGrid& state,
                                           const Vec2& goal_grid, int horizon) const {
  std::vector<Vec2> line(static_cast<size_t>(traj_steps_));
  const Vec2 p0{state.pos_h, state.pos_w};
  for (int k = 0; k < traj_steps_; ++k) {
    const double s =
        static_cast<double>(std::min(k + 1, horizon)) / static_cast<double>(horizon);
    line[static_cast<size_t>(k)] = p0 + (goal_grid - p0) * s;
  }
  return line;
}

std::vector<std::vector<Vec2>> init_trajectories(
    const AgentStateGrid& state, const std::vector<Goal>& goals, int horizon,
    int num_future, const TrajectoryMlp& mlp, ParamStore<float>& params) {
  std::vector<std::vector<Vec2>> out;
  out.reserve(goals.size());
  for (const Goal& goal : goals) {
    const Vec2 goal_pos{static_cast<double>(goal.h) + goal.offset_h,
                        static_cast<double>(goal.w) + goal.offset_w};
    std::vector<Vec2> traj = mlp.base_line(state, goal_pos, horizon);
    Tape<float> tape(/*recording=*/false);
    ParamBinder<float> binder(tape, params);
    auto res = mlp.forward(tape, binder, state, goal_pos, horizon, num_future);
    for (int k = 0; k < mlp.traj_steps(); ++k) {
      traj[static_cast<size_t>(k)].x += static_cast<double>(res->value[2 * k]);
      traj[static_cast<size_t>(k)].y += static_cast<double>(res->value[2 * k + 1]);
    }
    out.push_back(std::move(traj));
  }
  return out;
}

TrajectorySet refine_trajectories(const std::vector<std::vector<Vec2>>& init,
                                  const std::vector<Goal>& goals,
                                  const GridTensor& occupancy,
                                  const GridTensor& offsets, int horizon,
                                  const ExtractorConfig& cfg) {
  const int64_t t = occupancy.dim(0), h = occupancy.dim(1), w = occupancy.dim(2);
  TrajectorySet set;
  set.horizon = horizon;
  double score_sum = 0.0;
  for (const Goal& goal : goals) score_sum += goal.score;
  for (size_t m = 0; m < init.size(); ++m) {
    TrajectoryMode mode;
    mode.positions = init[m];
    mode.extrapolated.assign(mode.positions.size(), 0);
    for (size_t k = 0; k < mode.positions.size(); ++k) {
      const int64_t ti = std::min<int64_t>(static_cast<int64_t>(k), t - 1);
      Vec2& pos = mode.positions[k];
      const int64_t ch = std::clamp<int64_t>(
          static_cast<int64_t>(std::floor(pos.x)), 0, h - 1);
      const int64_t cw = std::clamp<int64_t>(
          static_cast<int64_t>(std::floor(pos.y)), 0, w - 1);
      const float* grid = occupancy.data() + ti * h * w;
      float best = grid[ch * w + cw];
      int64_t bh = ch, bw = cw;
      for (int64_t di = -cfg.refine_radius; di <= cfg.refine_radius; ++di)
        for (int64_t dj = -cfg.refine_radius; dj <= cfg.refine_radius; ++dj) {
          const int64_t i = ch + di, j = cw + dj;
          if (i < 0 || i >= h || j < 0 || j >= w) continue;
          if (grid[i * w + j] > best) {  // strict: uniform grids stay put
            best = grid[i * w + j];
            bh = i;
            bw = j;
          }
        }
      if (bh != ch || bw != cw) {
        const float* off = offsets.data() + (ti * h * w + bh * w + bw) * 2;
        pos.x = static_cast<double>(bh) + static_cast<double>(off[0]);
        pos.y = static_cast<double>(bw) + static_cast<double>(off[1]);
      }
    }
    mode.probability =
        score_sum > 0.0 ? goals[m].score / score_sum
                        : 1.0 / static_cast<double>(init.size());
    set.modes.push_back(std::move(mode));
  }
  return set;
}

TrajectorySet extract(const GridTensor& occupancy, const GridTensor& offsets,
                      const AgentStateGrid& state, const ExtractorConfig& cfg,
                      const TrajectoryMlp& mlp, ParamStore<float>& params) {
  cfg.validate();
  if (occupancy.rank() != 3)
    throw_error(ErrorKind::Shape, "extract: occupancy must be [T, H, W]");
  const int64_t t = occupancy.dim(0), h = occupancy.dim(1), w = occupancy.dim(2);
  if (offsets.dims() != std::vector<int64_t>{t, h, w, 2})
    throw_error(ErrorKind::Shape, "extract: offsets must be [T, H, W, 2]");

  bool low_confidence = false;
  const int horizon =
      estimate_horizon(occupancy, cfg.theta_occ, cfg.horizon_most_points, &low_confidence);

  GridTensor occ_h = GridTensor({h, w});
  GridTensor off_h = GridTensor({h, w, 2});
  const int64_t ti = horizon - 1;
  std::copy_n(occupancy.data() + ti * h * w, h * w, occ_h.data());
  std::copy_n(offsets.data() + ti * h * w * 2, h * w * 2, off_h.data());
  const std::vector<Goal> goals =
      sample_goals(occ_h, off_h, cfg.num_goals, cfg.theta_goal, cfg.nms_radius);

  if (goals.empty()) {
    TrajectorySet set;
    set.horizon = horizon;
    set.low_confidence = true;
    return set;
  }

  const auto init = init_trajectories(state, goals, horizon,
                                      static_cast<int>(t), mlp, params);
  TrajectorySet set = refine_trajectories(init, goals, occupancy, offsets, horizon, cfg);
  set.low_confidence = low_confidence;
  // Beyond the horizon the grids carry no signal; hold the horizon position.
  for (auto& mode : set.modes) {
    for (size_t k = static_cast<size_t>(horizon); k < mode.positions.size(); ++k) {
      mode.positions[k] = mode.positions[static_cast<size_t>(horizon - 1)];
      mode.extrapolated[k] = 1;
    }
  }
  return set;
}

template void TrajectoryMlp::build(ParamStore<float>&, uint32_t) const;
template void TrajectoryMlp::build(ParamStore<double>&, uint32_t) const;
template Var<float> TrajectoryMlp::forward(Tape<float>&, ParamBinder<float>&,
                                           const AgentStateGrid&, const Vec2&, int,
                                           int) const;
template Var<double> TrajectoryMlp::forward(Tape<double>&, ParamBinder<double>&,
                                            const AgentStateGrid&, const Vec2&, int,
                                            int) const;

}  // namespace caspgrid
