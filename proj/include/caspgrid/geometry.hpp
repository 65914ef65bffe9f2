#pragma once

#include <cmath>
#include <cstdint>

#include "caspgrid/errors.hpp"

namespace caspgrid {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double norm() const { return std::hypot(x, y); }
};

inline Vec2 rotate(const Vec2& v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

inline double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0) a += 2.0 * M_PI;
  return a - M_PI;  // [-pi, pi)
}

struct Pose2 {
  Vec2 position;
  double heading = 0.0;  // rad
};

/// Grid geometry and timing. The anchor pixel is where the ego sits; grid h
/// runs against the ego's forward axis (driving moves content toward row 0)
/// and grid w against the ego's left axis.
struct RasterConfig {
  int height_px = 152;
  int width_px = 96;
  double resolution = 1.0;  // meters per cell
  double anchor_h = 122.0;  // cells
  double anchor_w = 48.0;
  int num_past = 3;       // M, includes t0
  int num_future = 12;    // T
  double frame_rate_hz = 2.0;
  int num_types = 3;   // C
  int num_goals = 5;   // N
  int traj_steps = 12; // T_T

  double dt() const { return 1.0 / frame_rate_hz; }

  void validate() const {
    if (height_px <= 0 || width_px <= 0)
      throw_error(ErrorKind::Config, "raster: H and W must be positive");
    if (resolution <= 0) throw_error(ErrorKind::Config, "raster: resolution must be positive");
    if (anchor_h < 0 || anchor_h >= height_px || anchor_w < 0 || anchor_w >= width_px)
      throw_error(ErrorKind::Config, "raster: anchor outside the grid");
    if (num_past < 1 || num_future < 1)
      throw_error(ErrorKind::Config, "raster: M and T must be >= 1");
    if (frame_rate_hz <= 0) throw_error(ErrorKind::Config, "raster: frame rate must be positive");
    if (num_types < 1 || num_goals < 1 || traj_steps < 1)
      throw_error(ErrorKind::Config, "raster: C, N and T_T must be >= 1");
  }
};

struct GridCoord {
  int64_t h = 0, w = 0;            // integer cell (floor of continuous coord)
  double frac_h = 0.0, frac_w = 0.0;  // in-cell offset in [0, 1)
  double cont_h = 0.0, cont_w = 0.0;  // continuous grid coordinate
  bool in_bounds = false;
};

/// World position -> grid coordinate, anchored at the ego pose.
GridCoord world_to_grid(const Vec2& p, const Pose2& ego, const RasterConfig& cfg);

/// Inverse of world_to_grid on the continuous coordinate.
Vec2 grid_to_world(double cont_h, double cont_w, const Pose2& ego,
                   const RasterConfig& cfg);

/// World-frame vector -> (h, w) components in the grid frame (no resolution
/// scaling; a velocity stays in m/s).
Vec2 world_vec_to_grid(const Vec2& v, double ego_heading);
Vec2 grid_vec_to_world(const Vec2& v, double ego_heading);

/// World heading -> heading measured in grid axes (atan2 over (h, w)).
double heading_to_grid(double world_heading, double ego_heading);

}  // namespace caspgrid
