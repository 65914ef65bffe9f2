#include "caspgrid/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace caspgrid {

void EvalRecord::validate() const {
  if (predictions.empty())
    throw_error(ErrorKind::Data, "eval record " + agent_id + ": no predictions");
  if (gt_positions.size() != gt_valid.size())
    throw_error(ErrorKind::Data, "eval record " + agent_id + ": GT mask length mismatch");
  bool any = false;
  for (uint8_t v : gt_valid) any = any || v;
  if (!any)
    throw_error(ErrorKind::Data, "eval record " + agent_id + ": no valid GT steps");
}

std::vector<size_t> top_k_modes(const EvalRecord& record, int k) {
  if (k < 1 || static_cast<size_t>(k) > record.predictions.size())
    throw_error(ErrorKind::Data, "top_k_modes: k out of range");
  std::vector<size_t> order(record.predictions.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return record.predictions[a].probability > record.predictions[b].probability;
  });
  order.resize(static_cast<size_t>(k));
  return order;
}

namespace {

int last_valid_step(const EvalRecord& r) {
  for (int i = static_cast<int>(r.gt_valid.size()) - 1; i >= 0; --i)
    if (r.gt_valid[static_cast<size_t>(i)]) return i;
  throw_error(ErrorKind::Data, "eval record has no valid GT steps");
}

double step_error(const EvalTrajectory& pred, const EvalRecord& r, size_t step) {
  if (step >= pred.positions.size())
    throw_error(ErrorKind::Data, "prediction shorter than GT horizon");
  return (pred.positions[step] - r.gt_positions[step]).norm();
}

}  // namespace

double min_ade_k(const EvalRecord& record, int k) {
  record.validate();
  double best = std::numeric_limits<double>::infinity();
  for (size_t mode : top_k_modes(record, k)) {
    double sum = 0.0;
    int n = 0;
    for (size_t s = 0; s < record.gt_valid.size(); ++s) {
      if (!record.gt_valid[s]) continue;
      sum += step_error(record.predictions[mode], record, s);
      ++n;
    }
    best = std::min(best, sum / n);
  }
  return best;
}

double min_fde_k(const EvalRecord& record, int k) {
  record.validate();
  const size_t last = static_cast<size_t>(last_valid_step(record));
  double best = std::numeric_limits<double>::infinity();
  for (size_t mode : top_k_modes(record, k))
    best = std::min(best, step_error(record.predictions[mode], record, last));
  return best;
}

double min_fde_at_step(const EvalRecord& record, int k, int step) {
  if (step < 0 || static_cast<size_t>(step) >= record.gt_valid.size() ||
      !record.gt_valid[static_cast<size_t>(step)])
    return -1.0;
  double best = std::numeric_limits<double>::infinity();
  for (size_t mode : top_k_modes(record, k))
    best = std::min(best, step_error(record.predictions[mode], record,
                                     static_cast<size_t>(step)));
  return best;
}

int miss_k(const EvalRecord& record, int k, double miss_threshold) {
  return min_fde_k(record, k) > miss_threshold ? 1 : 0;
}

double offroad_rate(const std::vector<EvalRecord>& records,
                    const std::vector<DrivableContext>& contexts) {
  int64_t total = 0, offroad = 0;
  for (const auto& r : records) {
    if (r.drivable_index < 0 ||
        static_cast<size_t>(r.drivable_index) >= contexts.size())
      throw_error(ErrorKind::Data, "offroad_rate: record without drivable context");
    const DrivableContext& ctx = contexts[static_cast<size_t>(r.drivable_index)];
    const int64_t w = ctx.mask.dim(1);
    for (const auto& pred : r.predictions) {
      ++total;
      for (const Vec2& p : pred.positions) {
        const GridCoord gc = world_to_grid(p, ctx.ego, ctx.cfg);
        if (!gc.in_bounds || ctx.mask[gc.h * w + gc.w] == 0.0f) {
          ++offroad;
          break;
        }
      }
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(offroad) / static_cast<double>(total);
}

std::vector<Vec2> constant_velocity_baseline(const AgentTrack& track, int num_future,
                                             double dt) {
  const AgentState& cur = track.current();
  Vec2 p0 = cur.position;
  Vec2 v0{0.0, 0.0};
  const bool velocity_usable = cur.valid && std::isfinite(cur.velocity.x) &&
                               std::isfinite(cur.velocity.y);
  if (velocity_usable) {
    v0 = cur.velocity;
  } else {
    // Fall back to the difference of the last two valid positions.
    std::vector<const AgentState*> valid;
    for (const auto& s : track.past)
      if (s.valid) valid.push_back(&s);
    if (valid.size() >= 2) {
      const AgentState* a = valid[valid.size() - 2];
      const AgentState* b = valid.back();
      const double span = b->t - a->t;
      if (span > 0.0) v0 = (b->position - a->position) * (1.0 / span);
      p0 = b->position;
    } else if (valid.size() == 1) {
      p0 = valid.back()->position;  // single position: standstill
    }
  }
  std::vector<Vec2> out(static_cast<size_t>(num_future));
  for (int t = 1; t <= num_future; ++t)
    out[static_cast<size_t>(t - 1)] = p0 + v0 * (t * dt);
  return out;
}

bool is_parked(const AgentTrack& track, double displacement_threshold) {
  const Vec2* anchor = nullptr;
  for (const auto& s : track.past)
    if (s.valid) {
      anchor = &s.position;
      break;
    }
  if (!anchor) return false;
  double max_disp = 0.0;
  for (const auto& s : track.past)
    if (s.valid) max_disp = std::max(max_disp, (s.position - *anchor).norm());
  for (const auto& s : track.future)
    if (s.valid) max_disp = std::max(max_disp, (s.position - *anchor).norm());
  return max_disp < displacement_threshold;
}

}  // namespace caspgrid
