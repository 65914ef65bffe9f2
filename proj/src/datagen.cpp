#include <algorithm>
#include <cmath>

#include "caspgrid/data.hpp"

namespace caspgrid {

void ScenarioSpec::validate() const {
  if (kind != "straight" && kind != "t_junction" && kind != "four_way" &&
      kind != "roundabout_arc")
    throw_error(ErrorKind::Config, "scenario: unknown kind " + kind);
  if (min_agents < 1 || max_agents < min_agents)
    throw_error(ErrorKind::Config, "scenario: bad agent count range");
  if (min_speed_mps < 0.0 || max_speed_mps < min_speed_mps)
    throw_error(ErrorKind::Config, "scenario: bad speed range");
  double total = 0.0;
  for (const auto& [name, p] : turn_probabilities) {
    if (p < 0.0) throw_error(ErrorKind::Config, "scenario: negative turn probability");
    if (name != "left" && name != "right" && name != "straight")
      throw_error(ErrorKind::Config, "scenario: unknown maneuver " + name);
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw_error(ErrorKind::Config, "scenario: turn probabilities must sum to 1");
  if (lane_halfwidth <= 0.0)
    throw_error(ErrorKind::Config, "scenario: lane halfwidth must be positive");
  if (max_agents_of_interest < 1)
    throw_error(ErrorKind::Config, "scenario: need at least one agent of interest");
}

namespace {

// Densely sampled polyline with arc-length lookup. Straight two-point paths
// interpolate exactly linearly, which keeps constant-velocity scenes exact.
struct Path {
  std::vector<Vec2> pts;
  std::vector<double> cum;

  void finish() {
    cum.resize(pts.size());
    cum[0] = 0.0;
    for (size_t i = 1; i < pts.size(); ++i)
      cum[i] = cum[i - 1] + (pts[i] - pts[i - 1]).norm();
  }

  double length() const { return cum.back(); }

  Vec2 at(double s) const {
    if (s <= 0.0) return pts.front();
    if (s >= cum.back()) return pts.back();
    const auto it = std::upper_bound(cum.begin(), cum.end(), s);
    const size_t i = static_cast<size_t>(it - cum.begin());
    const double seg = cum[i] - cum[i - 1];
    const double t = seg > 0.0 ? (s - cum[i - 1]) / seg : 0.0;
    return pts[i - 1] + (pts[i] - pts[i - 1]) * t;
  }
};

Path line_path(const Vec2& a, const Vec2& b) {
  Path p;
  p.pts = {a, b};
  p.finish();
  return p;
}

void append_line(Path& p, const Vec2& b) { p.pts.push_back(b); }

// Quarter-ish arc appended as a fine polyline.
void append_arc(Path& p, const Vec2& center, double radius, double phi0, double phi1) {
  const int steps = std::max(8, static_cast<int>(std::ceil(std::abs(phi1 - phi0) * radius / 0.05)));
  for (int i = 1; i <= steps; ++i) {
    const double phi = phi0 + (phi1 - phi0) * static_cast<double>(i) / steps;
    p.pts.push_back(center + Vec2{radius * std::sin(phi), -radius * std::cos(phi)});
  }
}

struct RoadFramePlan {
  std::vector<std::vector<Vec2>> drivable;
  std::vector<LanePolyline> lanes;
  std::vector<Path> spawn_paths;  // straight-following paths for extra agents
  Path target_path;
  double target_s0 = 0.0;  // arc length of the target position at t0
  std::string maneuver = "straight";
};

std::vector<Vec2> rect_poly(double x0, double x1, double y0, double y1) {
  return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
}

LanePolyline lane_from_line(const Vec2& a, const Vec2& b, double halfwidth) {
  LanePolyline lane;
  lane.halfwidth = halfwidth;
  const int n = std::max(2, static_cast<int>((b - a).norm() / 5.0));
  for (int i = 0; i <= n; ++i)
    lane.centerline.push_back(a + (b - a) * (static_cast<double>(i) / n));
  return lane;
}

std::string draw_maneuver(const ScenarioSpec& spec,
                          const std::vector<std::string>& available,
                          std::mt19937_64& rng) {
  double total = 0.0;
  for (const auto& name : available) {
    auto it = spec.turn_probabilities.find(name);
    if (it != spec.turn_probabilities.end()) total += it->second;
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x = u(rng) * (total > 0.0 ? total : 1.0);
  for (const auto& name : available) {
    auto it = spec.turn_probabilities.find(name);
    const double p = it != spec.turn_probabilities.end() ? it->second : 0.0;
    if (x < p) return name;
    x -= p;
  }
  return available.back();
}

// Left turn from the eastbound lane (y = -hw) onto the northbound lane
// (x = +hw); right turn onto the southbound lane (x = -hw).
Path turn_path(double hw, const std::string& maneuver, double approach_len,
               double exit_len) {
  Path p;
  if (maneuver == "straight") {
    p.pts = {{-approach_len, -hw}, {exit_len, -hw}};
    p.finish();
    return p;
  }
  if (maneuver == "left") {
    const double r = hw + 7.0;
    const double xc = hw - r;  // arc exits at x = +hw
    p.pts = {{-approach_len, -hw}, {xc, -hw}};
    append_arc(p, {xc, -hw + r}, r, 0.0, M_PI / 2.0);
    append_line(p, {hw, exit_len});
    p.finish();
    return p;
  }
  // right
  const double r = 4.0;
  const double xc = -hw - r;  // arc exits at x = -hw heading -y
  p.pts = {{-approach_len, -hw}, {xc, -hw}};
  const Vec2 center{xc, -hw - r};
  const int steps = 64;
  for (int i = 1; i <= steps; ++i) {
    const double phi = (M_PI / 2.0) * static_cast<double>(i) / steps;
    p.pts.push_back(center + Vec2{r * std::sin(phi), r * std::cos(phi)});
  }
  append_line(p, {-hw, -exit_len});
  p.finish();
  return p;
}

RoadFramePlan plan_scenario(const ScenarioSpec& spec, std::mt19937_64& rng) {
  RoadFramePlan plan;
  const double hw = spec.lane_halfwidth;
  const double road = 2.0 * hw;
  std::uniform_real_distribution<double> u(0.0, 1.0);

  if (spec.kind == "straight") {
    plan.drivable = {rect_poly(-80.0, 110.0, -road, road)};
    plan.lanes = {lane_from_line({-80.0, -hw}, {110.0, -hw}, hw),
                  lane_from_line({110.0, hw}, {-80.0, hw}, hw)};
    plan.target_path = line_path({-80.0, -hw}, {110.0, -hw});
    plan.target_s0 = 80.0;
    plan.spawn_paths = {line_path({-80.0, -hw}, {110.0, -hw}),
                        line_path({110.0, hw}, {-80.0, hw})};
    plan.maneuver = "straight";
    return plan;
  }

  if (spec.kind == "roundabout_arc") {
    const double radius = 15.0 + 10.0 * u(rng);
    const Vec2 center{0.0, radius};
    plan.maneuver = "straight";
    Path ring;
    ring.pts.push_back(center + Vec2{radius * std::sin(-1.2), -radius * std::cos(-1.2)});
    append_arc(ring, center, radius, -1.2, 2.6);
    ring.finish();
    plan.target_path = ring;
    plan.target_s0 = 1.2 * radius;  // t0 at the bottom of the ring, heading +x
    plan.spawn_paths = {ring};
    std::vector<Vec2> disc;
    for (int i = 0; i < 24; ++i) {
      const double a = 2.0 * M_PI * i / 24.0;
      disc.push_back(center + Vec2{(radius + road) * std::cos(a),
                                   (radius + road) * std::sin(a)});
    }
    plan.drivable = {disc};
    LanePolyline lane;
    lane.halfwidth = hw;
    for (size_t i = 0; i < ring.pts.size(); i += 40) lane.centerline.push_back(ring.pts[i]);
    lane.centerline.push_back(ring.pts.back());
    plan.lanes = {lane};
    return plan;
  }

  // t_junction / four_way: main road along x, side road along +y (both for
  // four_way).
  const bool four_way = spec.kind == "four_way";
  plan.drivable = {rect_poly(-80.0, 90.0, -road, road),
                   rect_poly(-road, road, road, 90.0)};
  if (four_way) plan.drivable.push_back(rect_poly(-road, road, -80.0, -road));
  plan.lanes = {lane_from_line({-80.0, -hw}, {90.0, -hw}, hw),
                lane_from_line({90.0, hw}, {-80.0, hw}, hw),
                lane_from_line({hw, road}, {hw, 90.0}, hw),
                lane_from_line({-hw, 90.0}, {-hw, road}, hw)};
  if (four_way) {
    plan.lanes.push_back(lane_from_line({-hw, -road}, {-hw, -80.0}, hw));
    plan.lanes.push_back(lane_from_line({hw, -80.0}, {hw, -road}, hw));
  }
  std::vector<std::string> available{"straight", "left"};
  if (four_way) available.push_back("right");
  plan.maneuver = draw_maneuver(spec, available, rng);
  plan.target_path = turn_path(hw, plan.maneuver, 80.0, 80.0);
  // t0 sits shortly before the junction so the maneuver unfolds in the future.
  plan.target_s0 = 80.0 - (10.0 + 4.0 * u(rng));
  plan.spawn_paths = {line_path({-80.0, -hw}, {90.0, -hw}),
                      line_path({90.0, hw}, {-80.0, hw}),
                      line_path({hw, road}, {hw, 90.0})};
  return plan;
}

AgentTrack sample_track(const Path& path, double s0, double speed, double dt,
                        int num_past, int num_future, const std::string& id, int type,
                        double length, double width) {
  AgentTrack track;
  track.id = id;
  track.type = type;
  // Positions over an extended window so velocity/acceleration are central
  // differences of the same sampled sequence everywhere.
  const int lo = -(num_past - 1) - 1, hi = num_future + 1;
  std::vector<Vec2> pos;
  for (int k = lo; k <= hi; ++k) pos.push_back(path.at(s0 + speed * k * dt));
  auto state_at = [&](int k) {
    const size_t i = static_cast<size_t>(k - lo);
    AgentState s;
    s.t = k * dt;
    s.position = pos[i];
    s.velocity = (pos[i + 1] - pos[i - 1]) * (1.0 / (2.0 * dt));
    s.acceleration = (pos[i + 1] - pos[i] - (pos[i] - pos[i - 1])) * (1.0 / (dt * dt));
    const double sp = s.velocity.norm();
    s.heading = sp > 1e-9 ? std::atan2(s.velocity.y, s.velocity.x) : 0.0;
    s.length = length;
    s.width = width;
    s.valid = true;
    return s;
  };
  for (int k = -(num_past - 1); k <= 0; ++k) track.past.push_back(state_at(k));
  for (int k = 1; k <= num_future; ++k) track.future.push_back(state_at(k));
  return track;
}

}  // namespace

SceneSample generate_scene(const ScenarioSpec& spec, const RasterConfig& cfg,
                           uint64_t seed) {
  spec.validate();
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  RoadFramePlan plan = plan_scenario(spec, rng);
  if (plan.lanes.empty() || plan.drivable.empty())
    throw_error(ErrorKind::Data, "scenario produced no road layout");

  const double dt = cfg.dt();
  const int n_agents =
      spec.min_agents +
      static_cast<int>(u(rng) * (spec.max_agents - spec.min_agents + 1));
  auto draw_speed = [&] {
    return spec.min_speed_mps + u(rng) * (spec.max_speed_mps - spec.min_speed_mps);
  };
  auto draw_size = [&](double& length, double& width) {
    length = 4.0 + u(rng);
    width = 1.8 + 0.4 * u(rng);
  };

  SceneSample sample;
  sample.scenario = spec.kind + ":" + plan.maneuver;
  sample.seed = seed;
  sample.frame_rate_hz = cfg.frame_rate_hz;
  sample.num_past = cfg.num_past;
  sample.num_future = cfg.num_future;

  // Type convention mirrors (ego/target, vehicle, ...): the anchor track is
  // type 0, everything else type 1 when the config has more than one type.
  const int other_type = cfg.num_types > 1 ? 1 : 0;
  double length, width;
  draw_size(length, width);
  AgentTrack target = sample_track(plan.target_path, plan.target_s0, draw_speed(), dt,
                                   cfg.num_past, cfg.num_future, "agent-000", 0,
                                   length, width);
  target.is_ego_anchor = true;
  sample.tracks.push_back(target);

  for (int i = 1; i < n_agents; ++i) {
    const size_t lane_idx = static_cast<size_t>(u(rng) * plan.spawn_paths.size()) %
                            plan.spawn_paths.size();
    const Path& path = plan.spawn_paths[lane_idx];
    const double s0 = 20.0 + u(rng) * std::max(10.0, path.length() - 40.0);
    draw_size(length, width);
    char id[32];
    std::snprintf(id, sizeof(id), "agent-%03d", i);
    AgentTrack track = sample_track(path, s0, draw_speed(), dt, cfg.num_past,
                                    cfg.num_future, id, other_type, length, width);
    sample.tracks.push_back(std::move(track));
  }

  // Environment primitives in the road frame.
  sample.environment.drivable_polygons = plan.drivable;
  sample.environment.lanes = plan.lanes;
  if (spec.emit_points) {
    for (const auto& poly : sample.environment.drivable_polygons)
      for (size_t e = 0; e < poly.size(); ++e) {
        const Vec2 a = poly[e], b = poly[(e + 1) % poly.size()];
        const double len = (b - a).norm();
        for (double s = 0.0; s < len; s += 1.5) {
          const Vec2 p = a + (b - a) * (s / len);
          sample.environment.lidar_points.push_back(
              {{p.x + 0.3 * (u(rng) - 0.5), p.y + 0.3 * (u(rng) - 0.5)},
               -u(rng) * 0.9});
        }
        for (double s = 0.0; s < len; s += 6.0) {
          const Vec2 p = a + (b - a) * (s / len);
          sample.environment.radar_points.push_back(
              {{p.x + 0.6 * (u(rng) - 0.5), p.y + 0.6 * (u(rng) - 0.5)},
               -u(rng) * 0.9});
        }
      }
  }

  // Pose the whole scene with a random rigid transform so world and grid
  // frames genuinely differ.
  const double pose_angle = (u(rng) * 2.0 - 1.0) * M_PI;
  const Vec2 pose_shift{(u(rng) * 2.0 - 1.0) * 50.0, (u(rng) * 2.0 - 1.0) * 50.0};
  auto map_point = [&](const Vec2& p) { return rotate(p, pose_angle) + pose_shift; };
  auto map_state = [&](AgentState& s) {
    s.position = map_point(s.position);
    s.velocity = rotate(s.velocity, pose_angle);
    s.acceleration = rotate(s.acceleration, pose_angle);
    s.heading = wrap_angle(s.heading + pose_angle);
  };
  for (auto& track : sample.tracks) {
    for (auto& s : track.past) map_state(s);
    for (auto& s : track.future) map_state(s);
  }
  for (auto& poly : sample.environment.drivable_polygons)
    for (auto& v : poly) v = map_point(v);
  for (auto& lane : sample.environment.lanes)
    for (auto& v : lane.centerline) v = map_point(v);
  for (auto& p : sample.environment.lidar_points) p.position = map_point(p.position);
  for (auto& p : sample.environment.radar_points) p.position = map_point(p.position);

  const AgentState& anchor = sample.tracks[0].current();
  sample.ego.position = anchor.position;
  sample.ego.heading = anchor.heading;

  // Agents of interest: the target plus nearby in-bounds agents.
  sample.agents_of_interest.push_back(sample.tracks[0].id);
  for (size_t i = 1; i < sample.tracks.size() &&
                     static_cast<int>(sample.agents_of_interest.size()) <
                         spec.max_agents_of_interest;
       ++i) {
    const GridCoord gc =
        world_to_grid(sample.tracks[i].current().position, sample.ego, cfg);
    if (gc.in_bounds) sample.agents_of_interest.push_back(sample.tracks[i].id);
  }
  return sample;
}

}  // namespace caspgrid
