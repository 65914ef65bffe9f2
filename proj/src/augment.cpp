#include <cmath>

#include "caspgrid/data.hpp"

namespace caspgrid {

namespace {

// Applies a point map, a vector map and a heading map to every geometric
// quantity in the scene. The ego pose itself stays fixed: the scene moves
// relative to the anchoring frame.
template <typename PointFn, typename VecFn, typename HeadFn>
SceneSample transform_scene(const SceneSample& in, PointFn point, VecFn vec,
                            HeadFn head) {
  if (in.environment.prebaked)
    throw_error(ErrorKind::Config,
                "augment: prebaked environment layers cannot be re-transformed");
  SceneSample out = in;
  auto map_state = [&](AgentState& s) {
    s.position = point(s.position);
    s.velocity = vec(s.velocity);
    s.acceleration = vec(s.acceleration);
    s.heading = wrap_angle(head(s.heading));
  };
  for (auto& track : out.tracks) {
    for (auto& s : track.past) map_state(s);
    for (auto& s : track.future) map_state(s);
  }
  for (auto& poly : out.environment.drivable_polygons)
    for (auto& v : poly) v = point(v);
  for (auto& lane : out.environment.lanes)
    for (auto& v : lane.centerline) v = point(v);
  for (auto& p : out.environment.lidar_points) p.position = point(p.position);
  for (auto& p : out.environment.radar_points) p.position = point(p.position);
  return out;
}

}  // namespace

SceneSample rotate_scene_about_ego(const SceneSample& sample, double angle) {
  const Vec2 pivot = sample.ego.position;
  return transform_scene(
      sample, [&](const Vec2& p) { return pivot + rotate(p - pivot, angle); },
      [&](const Vec2& v) { return rotate(v, angle); },
      [&](double h) { return h + angle; });
}

SceneSample translate_scene_ego_frame(const SceneSample& sample, const Vec2& delta) {
  const Vec2 shift = rotate(delta, sample.ego.heading);
  return transform_scene(
      sample, [&](const Vec2& p) { return p + shift; },
      [](const Vec2& v) { return v; }, [](double h) { return h; });
}

SceneSample flip_scene_lateral(const SceneSample& sample) {
  const Vec2 pivot = sample.ego.position;
  const double theta = sample.ego.heading;
  auto reflect_vec = [&](const Vec2& v) {
    Vec2 e = rotate(v, -theta);
    e.y = -e.y;
    return rotate(e, theta);
  };
  return transform_scene(
      sample, [&](const Vec2& p) { return pivot + reflect_vec(p - pivot); },
      reflect_vec, [&](double h) { return 2.0 * theta - h; });
}

SceneSample augment(const SceneSample& sample, const AugmentConfig& cfg,
                    std::mt19937& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SceneSample out = sample;
  if (u(rng) < cfg.p_rotate) {
    const double angle = (u(rng) * 2.0 - 1.0) * cfg.rotate_range;
    out = rotate_scene_about_ego(out, angle);
  }
  const Vec2 delta{(u(rng) * 2.0 - 1.0) * cfg.translate_range_m,
                   (u(rng) * 2.0 - 1.0) * cfg.translate_range_m};
  out = translate_scene_ego_frame(out, delta);
  if (u(rng) < cfg.p_flip) out = flip_scene_lateral(out);

  if (cfg.p_drop_agent > 0.0) {
    std::vector<AgentTrack> kept;
    std::vector<std::string> dropped;
    for (auto& track : out.tracks) {
      if (!track.is_ego_anchor && u(rng) < cfg.p_drop_agent)
        dropped.push_back(track.id);
      else
        kept.push_back(std::move(track));
    }
    out.tracks = std::move(kept);
    if (!dropped.empty()) {
      std::vector<std::string> interest;
      for (const auto& id : out.agents_of_interest)
        if (std::find(dropped.begin(), dropped.end(), id) == dropped.end())
          interest.push_back(id);
      out.agents_of_interest = std::move(interest);
    }
  }
  return out;
}

}  // namespace caspgrid
