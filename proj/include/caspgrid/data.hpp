#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "caspgrid/scene.hpp"

namespace caspgrid {

struct ScenarioSpec {
  std::string kind = "straight";  // straight | t_junction | four_way | roundabout_arc
  int min_agents = 1;
  int max_agents = 4;
  double min_speed_mps = 3.0;
  double max_speed_mps = 8.0;
  std::map<std::string, double> turn_probabilities{{"left", 0.3},
                                                   {"right", 0.2},
                                                   {"straight", 0.5}};
  double lane_halfwidth = 1.75;
  int max_agents_of_interest = 2;
  bool emit_points = true;  // synthetic lidar/radar returns along road edges
  uint64_t seed = 0;

  void validate() const;
};

/// Lays out lanes and drivable area for the scenario kind, spawns agents with
/// kinematically consistent histories and futures (velocity and acceleration
/// are finite differences of the sampled positions), draws junction maneuvers
/// from the turn table. Deterministic per (spec, seed).
SceneSample generate_scene(const ScenarioSpec& spec, const RasterConfig& cfg,
                           uint64_t seed);

struct AugmentConfig {
  double p_rotate = 0.75;
  double rotate_range = M_PI / 3.0;  // angle drawn uniform in +/- range
  double translate_range_m = 3.0;    // per axis, ego frame
  double p_flip = 0.5;
  double p_drop_agent = 0.1;  // per non-target track
};

/// Rotation about the ego, ego-frame translation, reflection across the
/// ego's longitudinal axis, and agent dropping; every geometric quantity
/// (positions, headings, velocities, accelerations, lanes, points, GT) is
/// transformed consistently.
SceneSample augment(const SceneSample& sample, const AugmentConfig& cfg,
                    std::mt19937& rng);

// Individual transforms, exposed for property tests.
SceneSample rotate_scene_about_ego(const SceneSample& sample, double angle);
SceneSample translate_scene_ego_frame(const SceneSample& sample, const Vec2& delta);
SceneSample flip_scene_lateral(const SceneSample& sample);

// ---- scene files and datasets ----

inline constexpr const char* kSceneSchemaVersion = "caspgrid-scene/1";
inline constexpr const char* kDatasetSchemaVersion = "caspgrid-dataset/1";
inline constexpr const char* kScenarioSchemaVersion = "caspgrid-scenario/1";

void save_scene(const SceneSample& sample, const std::string& path);
SceneSample load_scene(const std::string& path);

ScenarioSpec load_scenario_spec(const std::string& path);

struct ManifestEntry {
  std::string file;
  std::string split;  // "train" | "val"
};

void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& dir);
std::vector<ManifestEntry> load_manifest(const std::string& dir);

/// Loads a dataset split into memory and iterates deterministic shuffled
/// batches. Shuffle order depends only on (shuffle_seed, epoch).
class Dataset {
 public:
  Dataset(const std::string& dir, const std::string& split);

  size_t size() const { return scenes_.size(); }
  const SceneSample& scene(size_t i) const { return scenes_.at(i); }

  std::vector<size_t> batch_indices(int64_t step, int batch_size,
                                    uint64_t shuffle_seed) const;

 private:
  std::vector<SceneSample> scenes_;
};

}  // namespace caspgrid
