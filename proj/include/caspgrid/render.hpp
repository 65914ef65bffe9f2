#pragma once

#include <string>
#include <vector>

#include "caspgrid/config.hpp"
#include "caspgrid/extractor.hpp"
#include "caspgrid/model.hpp"
#include "caspgrid/scene.hpp"

namespace caspgrid {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel

  uint8_t* pixel(int x, int y) { return rgb.data() + 3 * (y * width + x); }
};

void write_ppm(const std::string& path, const Image& img);

struct RenderOptions {
  int scale = 4;           // pixels per grid cell
  double occupancy_floor = 0.05;  // hide near-zero probabilities
  bool draw_occupancy = true;
  bool draw_gt = true;
  bool draw_past = true;
  bool draw_trajectories = true;
};

/// Composes drivable/lane background, per-step occupancy heatmaps (early
/// steps red, late steps magenta), past tracks, predicted trajectories
/// (opacity follows mode probability) and GT overlays (green, drawn last).
Image render_scene(const SceneSample& scene, const RunConfig& cfg,
                   const SceneOutput* scene_out,
                   const std::vector<TrajectorySet>* trajectories,
                   const RenderOptions& opt);

}  // namespace caspgrid
