#include "caspgrid/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "caspgrid/raster.hpp"

namespace caspgrid {

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_error(ErrorKind::Io, "cannot write " + path);
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.rgb.data()),
           static_cast<std::streamsize>(img.rgb.size()));
  if (!os) throw_error(ErrorKind::Io, "write failed: " + path);
}

namespace {

struct Rgb {
  uint8_t r, g, b;
};

// Hue ramp red (0) -> magenta (300 degrees), matching the early-to-late time
// coloring of the occupancy maps.
Rgb time_color(int step, int num_steps) {
  const double hue =
      300.0 * (num_steps > 1 ? static_cast<double>(step) / (num_steps - 1) : 0.0);
  const double hh = hue / 60.0;
  const double f = hh - std::floor(hh);
  const uint8_t q = static_cast<uint8_t>(255.0 * (1.0 - f));
  const uint8_t t = static_cast<uint8_t>(255.0 * f);
  switch (static_cast<int>(hh) % 6) {
    case 0: return {255, t, 0};
    case 1: return {q, 255, 0};
    case 2: return {0, 255, t};
    case 3: return {0, q, 255};
    case 4: return {t, 0, 255};
    default: return {255, 0, q};
  }
}

void blend(Image& img, int x, int y, Rgb c, double alpha) {
  if (x < 0 || x >= img.width || y < 0 || y >= img.height) return;
  uint8_t* p = img.pixel(x, y);
  p[0] = static_cast<uint8_t>((1.0 - alpha) * p[0] + alpha * c.r);
  p[1] = static_cast<uint8_t>((1.0 - alpha) * p[1] + alpha * c.g);
  p[2] = static_cast<uint8_t>((1.0 - alpha) * p[2] + alpha * c.b);
}

void fill_cell(Image& img, int scale, int64_t h, int64_t w, Rgb c, double alpha) {
  for (int dy = 0; dy < scale; ++dy)
    for (int dx = 0; dx < scale; ++dx)
      blend(img, static_cast<int>(w) * scale + dx, static_cast<int>(h) * scale + dy, c,
            alpha);
}

// Continuous grid coordinate -> pixel center.
void grid_to_pixel(double ch, double cw, int scale, int& x, int& y) {
  x = static_cast<int>(std::lround(cw * scale));
  y = static_cast<int>(std::lround(ch * scale));
}

void draw_line(Image& img, int x0, int y0, int x1, int y1, Rgb c, double alpha) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    blend(img, x0, y0, c, alpha);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void draw_dot(Image& img, int x, int y, Rgb c, double alpha, int radius) {
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      blend(img, x + dx, y + dy, c, alpha);
}

}  // namespace

Image render_scene(const SceneSample& scene, const RunConfig& cfg,
                   const SceneOutput* scene_out,
                   const std::vector<TrajectorySet>* trajectories,
                   const RenderOptions& opt) {
  const int64_t h = cfg.raster.height_px, w = cfg.raster.width_px;
  Image img;
  img.width = static_cast<int>(w) * opt.scale;
  img.height = static_cast<int>(h) * opt.scale;
  img.rgb.assign(static_cast<size_t>(img.width) * img.height * 3, 30);

  // Environment background.
  const GridTensor env = rasterize_environment(scene, cfg.raster, cfg.env);
  const int64_t k = cfg.env.num_channels();
  int64_t drivable_ch = -1, lane_ch = -1;
  for (size_t i = 0; i < cfg.env.semantic_layers.size(); ++i) {
    if (cfg.env.semantic_layers[i] == "drivable") drivable_ch = static_cast<int64_t>(i);
    if (cfg.env.semantic_layers[i] == "lane") lane_ch = static_cast<int64_t>(i);
  }
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      if (drivable_ch >= 0 && env[(i * w + j) * k + drivable_ch] > 0.5f)
        fill_cell(img, opt.scale, i, j, {90, 90, 90}, 1.0);
      if (lane_ch >= 0 && env[(i * w + j) * k + lane_ch] > 0.5f)
        fill_cell(img, opt.scale, i, j, {110, 110, 110}, 1.0);
    }

  // Scene occupancy, all types combined, early steps drawn first.
  if (scene_out && opt.draw_occupancy) {
    const int64_t c = scene_out->occupancy.dim(0), t = scene_out->occupancy.dim(1);
    for (int64_t ti = 0; ti < t; ++ti) {
      const Rgb col = time_color(static_cast<int>(ti), static_cast<int>(t));
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
          float occ = 0.0f;
          for (int64_t ci = 0; ci < c; ++ci)
            occ = std::max(occ, scene_out->occupancy[((ci * t + ti) * h + i) * w + j]);
          if (occ > opt.occupancy_floor)
            fill_cell(img, opt.scale, i, j, col, std::min(1.0, 0.85 * occ));
        }
    }
  }

  // Past tracks in black.
  if (opt.draw_past) {
    for (const auto& track : scene.tracks) {
      int px = -1, py = -1;
      for (const auto& s : track.past) {
        if (!s.valid) continue;
        const GridCoord gc = world_to_grid(s.position, scene.ego, cfg.raster);
        if (!gc.in_bounds) continue;
        int x, y;
        grid_to_pixel(gc.cont_h, gc.cont_w, opt.scale, x, y);
        if (px >= 0) draw_line(img, px, py, x, y, {0, 0, 0}, 0.9);
        draw_dot(img, x, y, {0, 0, 0}, 0.9, 1);
        px = x;
        py = y;
      }
    }
  }

  // Predicted trajectories; opacity carries the mode probability.
  if (trajectories && opt.draw_trajectories) {
    for (const auto& set : *trajectories) {
      for (const auto& mode : set.modes) {
        const double alpha = 0.25 + 0.75 * std::clamp(mode.probability, 0.0, 1.0);
        int px = -1, py = -1;
        for (size_t s = 0; s < mode.positions.size(); ++s) {
          int x, y;
          grid_to_pixel(mode.positions[s].x, mode.positions[s].y, opt.scale, x, y);
          const Rgb col =
              time_color(static_cast<int>(s), static_cast<int>(mode.positions.size()));
          if (px >= 0) draw_line(img, px, py, x, y, col, alpha);
          draw_dot(img, x, y, col, alpha, 1);
          px = x;
          py = y;
        }
      }
    }
  }

  // GT future positions last so the overlay color is exact at GT cells.
  if (opt.draw_gt) {
    for (const auto& track : scene.tracks)
      for (const auto& s : track.future) {
        if (!s.valid) continue;
        const GridCoord gc = world_to_grid(s.position, scene.ego, cfg.raster);
        if (!gc.in_bounds) continue;
        fill_cell(img, opt.scale, gc.h, gc.w, {0, 200, 0}, 1.0);
      }
  }
  return img;
}

}  // namespace caspgrid
