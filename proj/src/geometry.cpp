#include "caspgrid/geometry.hpp"

namespace caspgrid {

GridCoord world_to_grid(const Vec2& p, const Pose2& ego, const RasterConfig& cfg) {
  if (!std::isfinite(p.x) || !std::isfinite(p.y))
    throw_error(ErrorKind::RejectedInput, "world_to_grid: non-finite position");
  if (!std::isfinite(ego.heading))
    throw_error(ErrorKind::RejectedInput, "world_to_grid: non-finite ego heading");
  const Vec2 e = rotate(p - ego.position, -ego.heading);  // ego frame: x fwd, y left
  GridCoord c;
  c.cont_h = cfg.anchor_h - e.x / cfg.resolution;
  c.cont_w = cfg.anchor_w - e.y / cfg.resolution;
  const double fh = std::floor(c.cont_h), fw = std::floor(c.cont_w);
  c.h = static_cast<int64_t>(fh);
  c.w = static_cast<int64_t>(fw);
  c.frac_h = c.cont_h - fh;
  c.frac_w = c.cont_w - fw;
  c.in_bounds = c.cont_h >= 0.0 && c.cont_h < cfg.height_px && c.cont_w >= 0.0 &&
                c.cont_w < cfg.width_px;
  return c;
}

Vec2 grid_to_world(double cont_h, double cont_w, const Pose2& ego,
                   const RasterConfig& cfg) {
  const Vec2 e{(cfg.anchor_h - cont_h) * cfg.resolution,
               (cfg.anchor_w - cont_w) * cfg.resolution};
  return ego.position + rotate(e, ego.heading);
}

Vec2 world_vec_to_grid(const Vec2& v, double ego_heading) {
  const Vec2 e = rotate(v, -ego_heading);
  return {-e.x, -e.y};  // grid h axis = -forward, w axis = -left
}

Vec2 grid_vec_to_world(const Vec2& v, double ego_heading) {
  return rotate(Vec2{-v.x, -v.y}, ego_heading);
}

double heading_to_grid(double world_heading, double ego_heading) {
  const Vec2 dir = world_vec_to_grid({std::cos(world_heading), std::sin(world_heading)},
                                     ego_heading);
  return std::atan2(dir.y, dir.x);
}

}  // namespace caspgrid
