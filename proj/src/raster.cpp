#include "caspgrid/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace caspgrid {

void SceneSample::validate(const RasterConfig& cfg) const {
  int anchors = 0;
  for (const auto& t : tracks) {
    if (t.is_ego_anchor) ++anchors;
    if (static_cast<int>(t.past.size()) != cfg.num_past)
      throw_error(ErrorKind::Data, "track " + t.id + ": expected " +
                                       std::to_string(cfg.num_past) + " past states, got " +
                                       std::to_string(t.past.size()));
    if (static_cast<int>(t.future.size()) > cfg.num_future)
      throw_error(ErrorKind::Data, "track " + t.id + ": more future states than T");
    if (t.type < 0 || t.type >= cfg.num_types)
      throw_error(ErrorKind::Data, "track " + t.id + ": object type out of range");
  }
  if (anchors != 1)
    throw_error(ErrorKind::Data, "scene must have exactly one ego anchor track, found " +
                                     std::to_string(anchors));
  for (const auto& id : agents_of_interest)
    if (!find_track(id))
      throw_error(ErrorKind::Data, "agent of interest " + id + " has no track");
}

namespace {

struct CellWinner {
  double dist = std::numeric_limits<double>::infinity();
  int track = -1;
};

bool wins(const CellWinner& incumbent, double dist, const std::string& id,
          const std::vector<AgentTrack>& tracks) {
  if (incumbent.track < 0) return true;
  if (dist != incumbent.dist) return dist < incumbent.dist;
  return id < tracks[static_cast<size_t>(incumbent.track)].id;
}

void write_agent_features(float* cell, const AgentState& s, const GridCoord& gc,
                          int type, double ego_heading, const RasterConfig& cfg) {
  const int c = cfg.num_types;
  for (int i = 0; i < c; ++i) cell[i] = 0.0f;
  cell[type] = 1.0f;
  cell[c + 0] = static_cast<float>(gc.frac_h);
  cell[c + 1] = static_cast<float>(gc.frac_w);
  const Vec2 v = world_vec_to_grid(s.velocity, ego_heading);
  cell[c + 2] = static_cast<float>(v.x);
  cell[c + 3] = static_cast<float>(v.y);
  const Vec2 a = world_vec_to_grid(s.acceleration, ego_heading);
  cell[c + 4] = static_cast<float>(a.x);
  cell[c + 5] = static_cast<float>(a.y);
  const double hg = heading_to_grid(s.heading, ego_heading);
  cell[c + 6] = static_cast<float>(std::sin(hg));
  cell[c + 7] = static_cast<float>(std::cos(hg));
  cell[c + 8] = static_cast<float>(s.length);
  cell[c + 9] = static_cast<float>(s.width);
}

}  // namespace

GridTensor rasterize_objects(const SceneSample& sample, const RasterConfig& cfg) {
  cfg.validate();
  sample.validate(cfg);
  const int64_t m = cfg.num_past, h = cfg.height_px, w = cfg.width_px;
  const int64_t f = object_feature_channels(cfg);
  GridTensor out({m, h, w, f});
  out.set_axes({"past", "h", "w", "feature"});

  std::vector<CellWinner> winner(static_cast<size_t>(h * w));
  std::vector<GridCoord> coord(static_cast<size_t>(h * w));
  for (int64_t step = 0; step < m; ++step) {
    std::fill(winner.begin(), winner.end(), CellWinner{});
    for (size_t ti = 0; ti < sample.tracks.size(); ++ti) {
      const AgentTrack& track = sample.tracks[ti];
      const AgentState& s = track.past[static_cast<size_t>(step)];
      if (!s.valid) continue;
      const GridCoord gc = world_to_grid(s.position, sample.ego, cfg);
      if (!gc.in_bounds) continue;
      const size_t cell = static_cast<size_t>(gc.h * w + gc.w);
      const double dist = (s.position - sample.ego.position).norm();
      if (wins(winner[cell], dist, track.id, sample.tracks)) {
        winner[cell] = {dist, static_cast<int>(ti)};
        coord[cell] = gc;
      }
    }
    for (int64_t cell = 0; cell < h * w; ++cell) {
      const CellWinner& win = winner[static_cast<size_t>(cell)];
      if (win.track < 0) continue;
      const AgentTrack& track = sample.tracks[static_cast<size_t>(win.track)];
      const AgentState& s = track.past[static_cast<size_t>(step)];
      float* dst = out.data() + (step * h * w + cell) * f;
      write_agent_features(dst, s, coord[static_cast<size_t>(cell)], track.type,
                           sample.ego.heading, cfg);
    }
  }
  return out;
}

namespace {

// Cell-center inside test against a convex polygon, any winding.
bool inside_convex(double ph, double pw, const std::vector<Vec2>& poly_grid) {
  const size_t n = poly_grid.size();
  if (n < 3) return false;
  int sign = 0;
  for (size_t i = 0; i < n; ++i) {
    const Vec2& a = poly_grid[i];
    const Vec2& b = poly_grid[(i + 1) % n];
    const double cross = (b.x - a.x) * (pw - a.y) - (b.y - a.y) * (ph - a.x);
    if (cross > 1e-12) {
      if (sign < 0) return false;
      sign = 1;
    } else if (cross < -1e-12) {
      if (sign > 0) return false;
      sign = -1;
    }
  }
  return true;
}

double point_segment_dist(double ph, double pw, const Vec2& a, const Vec2& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((ph - a.x) * dx + (pw - a.y) * dy) / len2, 0.0, 1.0);
  const double qx = a.x + t * dx, qy = a.y + t * dy;
  return std::hypot(ph - qx, pw - qy);
}

}  // namespace

GridTensor rasterize_environment(const SceneSample& sample, const RasterConfig& cfg,
                                 const EnvConfig& env) {
  cfg.validate();
  const int64_t h = cfg.height_px, w = cfg.width_px;
  const int64_t k = env.num_channels();
  GridTensor out({h, w, k});
  out.set_axes({"h", "w", "channel"});
  const EnvironmentSpec& spec = sample.environment;

  const int64_t orient_base = static_cast<int64_t>(env.semantic_layers.size());
  const int64_t lidar_ch = orient_base + (env.centerline_orientation ? 2 : 0);
  const int64_t radar_ch = lidar_ch + (env.lidar ? 1 : 0);

  if (spec.prebaked) {
    const auto& pb = *spec.prebaked;
    if (pb.height != cfg.height_px || pb.width != cfg.width_px ||
        pb.resolution != cfg.resolution || pb.anchor_h != cfg.anchor_h ||
        pb.anchor_w != cfg.anchor_w)
      throw_error(ErrorKind::Config, "prebaked environment geometry does not match raster config");
    auto copy_layer = [&](const std::string& name, int64_t ch) {
      auto it = pb.layers.find(name);
      if (it == pb.layers.end()) return;  // configured-out source: zeros
      if (static_cast<int64_t>(it->second.size()) != h * w)
        throw_error(ErrorKind::Config, "prebaked layer " + name + " has wrong cell count");
      for (int64_t i = 0; i < h * w; ++i) out[i * k + ch] = it->second[static_cast<size_t>(i)];
    };
    for (size_t s = 0; s < env.semantic_layers.size(); ++s)
      copy_layer(env.semantic_layers[s], static_cast<int64_t>(s));
    if (env.centerline_orientation) {
      copy_layer("centerline_sin", orient_base);
      copy_layer("centerline_cos", orient_base + 1);
    }
    if (env.lidar) copy_layer("lidar", lidar_ch);
    if (env.radar) copy_layer("radar", radar_ch);
    return out;
  }

  // Vertices to continuous grid coordinates once per primitive.
  auto to_grid = [&](const Vec2& p) {
    const GridCoord gc = world_to_grid(p, sample.ego, cfg);
    return Vec2{gc.cont_h, gc.cont_w};
  };

  for (size_t s = 0; s < env.semantic_layers.size(); ++s) {
    const std::string& name = env.semantic_layers[s];
    const int64_t ch = static_cast<int64_t>(s);
    if (name == "drivable") {
      for (const auto& poly : spec.drivable_polygons) {
        std::vector<Vec2> pg;
        pg.reserve(poly.size());
        for (const auto& v : poly) pg.push_back(to_grid(v));
        for (int64_t i = 0; i < h; ++i)
          for (int64_t j = 0; j < w; ++j)
            if (inside_convex(i + 0.5, j + 0.5, pg)) out[(i * w + j) * k + ch] = 1.0f;
      }
    } else if (name == "lane") {
      for (const auto& lane : spec.lanes) {
        if (lane.centerline.size() < 2) continue;
        std::vector<Vec2> cl;
        cl.reserve(lane.centerline.size());
        for (const auto& v : lane.centerline) cl.push_back(to_grid(v));
        const double radius = lane.halfwidth / cfg.resolution;
        for (int64_t i = 0; i < h; ++i)
          for (int64_t j = 0; j < w; ++j) {
            const double ph = i + 0.5, pw = j + 0.5;
            for (size_t e = 0; e + 1 < cl.size(); ++e)
              if (point_segment_dist(ph, pw, cl[e], cl[e + 1]) <= radius) {
                out[(i * w + j) * k + ch] = 1.0f;
                break;
              }
          }
      }
    }
    // Other semantic names have no primitive source; their channels stay zero.
  }

  if (env.centerline_orientation) {
    for (const auto& lane : spec.lanes) {
      if (lane.centerline.size() < 2) continue;
      std::vector<Vec2> cl;
      cl.reserve(lane.centerline.size());
      for (const auto& v : lane.centerline) cl.push_back(to_grid(v));
      for (size_t e = 0; e + 1 < cl.size(); ++e) {
        const Vec2 a = cl[e], b = cl[e + 1];
        const double len = std::hypot(b.x - a.x, b.y - a.y);
        if (len == 0.0) continue;
        const double theta = std::atan2(b.y - a.y, b.x - a.x);
        const float sn = static_cast<float>(std::sin(theta));
        const float cs = static_cast<float>(std::cos(theta));
        const int steps = std::max(1, static_cast<int>(std::ceil(len / 0.25)));
        for (int q = 0; q <= steps; ++q) {
          const double t = static_cast<double>(q) / steps;
          const int64_t ih = static_cast<int64_t>(std::floor(a.x + t * (b.x - a.x)));
          const int64_t iw = static_cast<int64_t>(std::floor(a.y + t * (b.y - a.y)));
          if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;
          out[(ih * w + iw) * k + orient_base] = sn;
          out[(ih * w + iw) * k + orient_base + 1] = cs;
        }
      }
    }
  }

  auto rasterize_points = [&](const std::vector<TimedPoint>& pts, int64_t ch) {
    std::vector<int> counts(static_cast<size_t>(h * w), 0);
    for (const auto& p : pts) {
      if (p.t < -env.point_window_s || p.t > 0.0) continue;
      const GridCoord gc = world_to_grid(p.position, sample.ego, cfg);
      if (!gc.in_bounds) continue;
      ++counts[static_cast<size_t>(gc.h * w + gc.w)];
    }
    for (int64_t i = 0; i < h * w; ++i) {
      const double clipped = std::min(static_cast<double>(counts[static_cast<size_t>(i)]),
                                      env.point_clip);
      out[i * k + ch] = static_cast<float>(clipped / env.point_clip);
    }
  };
  if (env.lidar) rasterize_points(spec.lidar_points, lidar_ch);
  if (env.radar) rasterize_points(spec.radar_points, radar_ch);

  return out;
}

GridTensor rasterize_agent_masks(const SceneSample& sample, const RasterConfig& cfg,
                                 const std::string& agent_id, int level) {
  const AgentTrack* track = sample.find_track(agent_id);
  if (!track)
    throw_error(ErrorKind::MaskUnavailable, "agent mask: no track with id " + agent_id);
  const int64_t scale = int64_t{1} << level;
  if (cfg.height_px % scale || cfg.width_px % scale)
    throw_error(ErrorKind::Config, "agent mask: grid not divisible at level " +
                                       std::to_string(level));
  const int64_t hl = cfg.height_px / scale, wl = cfg.width_px / scale;
  const AgentState& s = track->current();
  if (!s.valid)
    throw_error(ErrorKind::MaskUnavailable, "agent mask: " + agent_id + " invalid at t0");
  const GridCoord gc = world_to_grid(s.position, sample.ego, cfg);
  if (!gc.in_bounds)
    throw_error(ErrorKind::MaskUnavailable,
                "agent mask: " + agent_id + " out of bounds at t0");
  const double lh = gc.cont_h / static_cast<double>(scale);
  const double lw = gc.cont_w / static_cast<double>(scale);
  const int64_t ch = static_cast<int64_t>(std::floor(lh));
  const int64_t cw = static_cast<int64_t>(std::floor(lw));
  GridTensor mask({hl, wl, 3});
  mask.set_axes({"h", "w", "mask"});
  float* cell = mask.data() + (ch * wl + cw) * 3;
  cell[0] = 1.0f;
  cell[1] = static_cast<float>(lh - std::floor(lh));
  cell[2] = static_cast<float>(lw - std::floor(lw));
  return mask;
}

namespace {

struct GtBuilder {
  const RasterConfig& cfg;
  double sigma;
  HeadGroundTruth gt;
  // Winner bookkeeping reuses the rasterizer collision policy for the
  // single-vector offset/velocity targets.
  std::vector<CellWinner> winner;

  explicit GtBuilder(const RasterConfig& c, double sg) : cfg(c), sigma(sg) {
    const int64_t t = cfg.num_future, h = cfg.height_px, w = cfg.width_px;
    gt.occupancy = GridTensor({t, h, w});
    gt.occupancy.set_axes({"t", "h", "w"});
    gt.peak_mask = GridTensor({t, h, w});
    gt.offsets = GridTensor({t, h, w, 2});
    gt.velocities = GridTensor({t, h, w, 2});
    gt.counts.assign(static_cast<size_t>(t), 0);
    winner.assign(static_cast<size_t>(t * h * w), CellWinner{});
  }

  void add(const SceneSample& sample, const AgentTrack& track, int track_index) {
    const int64_t h = cfg.height_px, w = cfg.width_px;
    const int radius = sigma > 0.0 ? static_cast<int>(std::ceil(3.0 * sigma)) : 0;
    for (size_t k = 0; k < track.future.size(); ++k) {
      const AgentState& s = track.future[k];
      if (!s.valid) continue;
      const GridCoord gc = world_to_grid(s.position, sample.ego, cfg);
      if (!gc.in_bounds) continue;
      const int64_t t = static_cast<int64_t>(k);
      ++gt.counts[k];
      const int64_t base = t * h * w + gc.h * w + gc.w;
      gt.occupancy[base] = 1.0f;
      gt.peak_mask[base] = 1.0f;
      const double dist = (s.position - sample.ego.position).norm();
      CellWinner& win = winner[static_cast<size_t>(base)];
      if (wins(win, dist, track.id, sample.tracks)) {
        win = {dist, track_index};
        gt.offsets[base * 2 + 0] = static_cast<float>(gc.frac_h);
        gt.offsets[base * 2 + 1] = static_cast<float>(gc.frac_w);
        const Vec2 v = world_vec_to_grid(s.velocity, sample.ego.heading);
        const double cells_per_step = cfg.dt() / cfg.resolution;
        gt.velocities[base * 2 + 0] = static_cast<float>(v.x * cells_per_step);
        gt.velocities[base * 2 + 1] = static_cast<float>(v.y * cells_per_step);
      }
      // Truncated Gaussian halo, max-combined so peaks stay exactly 1.
      for (int dh = -radius; dh <= radius; ++dh)
        for (int dw = -radius; dw <= radius; ++dw) {
          const double d2 = static_cast<double>(dh) * dh + static_cast<double>(dw) * dw;
          if (d2 == 0.0 || std::sqrt(d2) > 3.0 * sigma) continue;
          const int64_t nh = gc.h + dh, nw = gc.w + dw;
          if (nh < 0 || nh >= h || nw < 0 || nw >= w) continue;
          const float val = static_cast<float>(std::exp(-d2 / (2.0 * sigma * sigma)));
          float& cell = gt.occupancy[t * h * w + nh * w + nw];
          cell = std::max(cell, val);
        }
    }
  }
};

}  // namespace

SceneGroundTruth render_gt(const SceneSample& sample, const RasterConfig& cfg,
                           double sigma_g) {
  cfg.validate();
  SceneGroundTruth out;
  out.per_type.reserve(static_cast<size_t>(cfg.num_types));
  for (int c = 0; c < cfg.num_types; ++c) {
    GtBuilder b(cfg, sigma_g);
    for (size_t ti = 0; ti < sample.tracks.size(); ++ti)
      if (sample.tracks[ti].type == c)
        b.add(sample, sample.tracks[ti], static_cast<int>(ti));
    out.per_type.push_back(std::move(b.gt));
  }
  return out;
}

AgentGroundTruth render_agent_gt(const SceneSample& sample, const RasterConfig& cfg,
                                 double sigma_g) {
  cfg.validate();
  AgentGroundTruth out;
  out.per_agent.reserve(sample.agents_of_interest.size());
  for (const auto& id : sample.agents_of_interest) {
    const AgentTrack* track = sample.find_track(id);
    if (!track) throw_error(ErrorKind::Data, "agent of interest " + id + " has no track");
    GtBuilder b(cfg, sigma_g);
    int idx = 0;
    for (size_t ti = 0; ti < sample.tracks.size(); ++ti)
      if (&sample.tracks[ti] == track) idx = static_cast<int>(ti);
    b.add(sample, *track, idx);
    out.per_agent.push_back(std::move(b.gt));
  }
  return out;
}

}  // namespace caspgrid
