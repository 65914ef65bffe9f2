#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "caspgrid/geometry.hpp"

namespace caspgrid {

struct AgentState {
  double t = 0.0;        // seconds relative to t0
  Vec2 position;         // world frame, m
  Vec2 velocity;         // world frame, m/s
  Vec2 acceleration;     // world frame, m/s^2
  double heading = 0.0;  // rad, [-pi, pi)
  double length = 0.0;   // bounding box, m
  double width = 0.0;
  bool valid = true;
};

struct AgentTrack {
  std::string id;
  int type = 0;  // object type index, < C
  bool is_ego_anchor = false;
  std::vector<AgentState> past;    // exactly M states, oldest first, last at t0
  std::vector<AgentState> future;  // up to T states, t = dt .. T*dt

  const AgentState& current() const { return past.back(); }
};

struct LanePolyline {
  std::vector<Vec2> centerline;  // world frame
  double halfwidth = 1.75;       // lane surface ribbon, m
};

struct TimedPoint {
  Vec2 position;
  double t = 0.0;  // seconds relative to t0 (past points are negative)
};

/// Environment as world-frame primitives, optionally with prebaked grid
/// layers for scenes converted from external sources. Prebaked layers must
/// match the raster geometry and cannot be re-augmented.
struct EnvironmentSpec {
  std::vector<std::vector<Vec2>> drivable_polygons;  // convex, world frame
  std::vector<LanePolyline> lanes;
  std::vector<TimedPoint> lidar_points;
  std::vector<TimedPoint> radar_points;

  struct Prebaked {
    int height = 0, width = 0;
    double resolution = 0.0;
    double anchor_h = 0.0, anchor_w = 0.0;
    std::map<std::string, std::vector<float>> layers;  // row-major H*W
  };
  std::optional<Prebaked> prebaked;
};

struct SceneSample {
  std::string scenario;  // generator kind or free-form tag
  uint64_t seed = 0;
  Pose2 ego;  // at t0
  std::vector<AgentTrack> tracks;
  std::vector<std::string> agents_of_interest;
  EnvironmentSpec environment;
  double frame_rate_hz = 2.0;
  int num_past = 3;
  int num_future = 12;

  const AgentTrack* find_track(const std::string& id) const {
    for (const auto& t : tracks)
      if (t.id == id) return &t;
    return nullptr;
  }

  /// Structural checks against a raster config; throws on violation.
  void validate(const RasterConfig& cfg) const;
};

/// Which environment channels exist and how point layers are normalized.
/// The channel layout is a pure function of this config; missing sources
/// leave their channels zero.
struct EnvConfig {
  std::vector<std::string> semantic_layers{"drivable", "lane"};
  bool centerline_orientation = true;
  bool lidar = false;
  bool radar = false;
  double point_clip = 10.0;    // counts clipped here, then divided by it
  double point_window_s = 1.0; // aggregate points with t in [-window, 0]

  int num_channels() const {
    return static_cast<int>(semantic_layers.size()) +
           (centerline_orientation ? 2 : 0) + (lidar ? 1 : 0) + (radar ? 1 : 0);
  }
};

}  // namespace caspgrid
