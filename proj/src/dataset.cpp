#include <algorithm>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "caspgrid/data.hpp"

namespace caspgrid {

namespace {

using nlohmann::json;

json vec2_json(const Vec2& v) { return json::array({v.x, v.y}); }

Vec2 vec2_from(const json& j) {
  if (!j.is_array() || j.size() != 2)
    throw_error(ErrorKind::Data, "scene: expected [x, y] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

json state_json(const AgentState& s) {
  return json{{"t", s.t},
              {"position", vec2_json(s.position)},
              {"velocity", vec2_json(s.velocity)},
              {"acceleration", vec2_json(s.acceleration)},
              {"heading", s.heading},
              {"size", json::array({s.length, s.width})},
              {"valid", s.valid}};
}

AgentState state_from(const json& j) {
  AgentState s;
  s.t = j.at("t").get<double>();
  s.position = vec2_from(j.at("position"));
  s.velocity = vec2_from(j.at("velocity"));
  s.acceleration = vec2_from(j.at("acceleration"));
  s.heading = j.at("heading").get<double>();
  const auto& size = j.at("size");
  s.length = size.at(0).get<double>();
  s.width = size.at(1).get<double>();
  s.valid = j.at("valid").get<bool>();
  return s;
}

json scene_to_json(const SceneSample& sample) {
  json tracks = json::array();
  for (const auto& t : sample.tracks) {
    json past = json::array(), future = json::array();
    for (const auto& s : t.past) past.push_back(state_json(s));
    for (const auto& s : t.future) future.push_back(state_json(s));
    tracks.push_back(json{{"id", t.id},
                          {"type", t.type},
                          {"is_ego_anchor", t.is_ego_anchor},
                          {"past", std::move(past)},
                          {"future", std::move(future)}});
  }
  json lanes = json::array();
  for (const auto& lane : sample.environment.lanes) {
    json pts = json::array();
    for (const auto& v : lane.centerline) pts.push_back(vec2_json(v));
    lanes.push_back(json{{"centerline", std::move(pts)}, {"halfwidth", lane.halfwidth}});
  }
  json polys = json::array();
  for (const auto& poly : sample.environment.drivable_polygons) {
    json pts = json::array();
    for (const auto& v : poly) pts.push_back(vec2_json(v));
    polys.push_back(std::move(pts));
  }
  auto points_json = [](const std::vector<TimedPoint>& pts) {
    json arr = json::array();
    for (const auto& p : pts) arr.push_back(json::array({p.position.x, p.position.y, p.t}));
    return arr;
  };
  json environment{{"drivable_polygons", std::move(polys)},
                   {"lanes", std::move(lanes)},
                   {"lidar_points", points_json(sample.environment.lidar_points)},
                   {"radar_points", points_json(sample.environment.radar_points)}};
  if (sample.environment.prebaked) {
    const auto& pb = *sample.environment.prebaked;
    json layers = json::object();
    for (const auto& [name, data] : pb.layers) layers[name] = data;
    environment["prebaked"] = json{{"height", pb.height},
                                   {"width", pb.width},
                                   {"resolution", pb.resolution},
                                   {"anchor", json::array({pb.anchor_h, pb.anchor_w})},
                                   {"layers", std::move(layers)}};
  } else {
    environment["prebaked"] = nullptr;
  }
  return json{{"version", kSceneSchemaVersion},
              {"scenario", sample.scenario},
              {"seed", sample.seed},
              {"frame_rate_hz", sample.frame_rate_hz},
              {"num_past", sample.num_past},
              {"num_future", sample.num_future},
              {"ego", json{{"position", vec2_json(sample.ego.position)},
                           {"heading", sample.ego.heading}}},
              {"tracks", std::move(tracks)},
              {"agents_of_interest", sample.agents_of_interest},
              {"environment", std::move(environment)}};
}

SceneSample scene_from_json(const json& j) {
  if (!j.contains("version") || j.at("version").get<std::string>() != kSceneSchemaVersion)
    throw_error(ErrorKind::Data,
                std::string("scene: unsupported schema version, expected ") +
                    kSceneSchemaVersion);
  SceneSample sample;
  sample.scenario = j.value("scenario", std::string{});
  sample.seed = j.value("seed", uint64_t{0});
  sample.frame_rate_hz = j.at("frame_rate_hz").get<double>();
  sample.num_past = j.at("num_past").get<int>();
  sample.num_future = j.at("num_future").get<int>();
  sample.ego.position = vec2_from(j.at("ego").at("position"));
  sample.ego.heading = j.at("ego").at("heading").get<double>();
  for (const auto& tj : j.at("tracks")) {
    AgentTrack t;
    t.id = tj.at("id").get<std::string>();
    t.type = tj.at("type").get<int>();
    t.is_ego_anchor = tj.at("is_ego_anchor").get<bool>();
    for (const auto& sj : tj.at("past")) t.past.push_back(state_from(sj));
    for (const auto& sj : tj.at("future")) t.future.push_back(state_from(sj));
    sample.tracks.push_back(std::move(t));
  }
  sample.agents_of_interest =
      j.at("agents_of_interest").get<std::vector<std::string>>();
  const auto& ej = j.at("environment");
  for (const auto& pj : ej.at("drivable_polygons")) {
    std::vector<Vec2> poly;
    for (const auto& vj : pj) poly.push_back(vec2_from(vj));
    sample.environment.drivable_polygons.push_back(std::move(poly));
  }
  for (const auto& lj : ej.at("lanes")) {
    LanePolyline lane;
    lane.halfwidth = lj.at("halfwidth").get<double>();
    for (const auto& vj : lj.at("centerline")) lane.centerline.push_back(vec2_from(vj));
    sample.environment.lanes.push_back(std::move(lane));
  }
  auto points_from = [](const json& arr) {
    std::vector<TimedPoint> out;
    for (const auto& pj : arr) {
      if (!pj.is_array() || pj.size() != 3)
        throw_error(ErrorKind::Data, "scene: expected [x, y, t] point");
      out.push_back({{pj[0].get<double>(), pj[1].get<double>()}, pj[2].get<double>()});
    }
    return out;
  };
  sample.environment.lidar_points = points_from(ej.at("lidar_points"));
  sample.environment.radar_points = points_from(ej.at("radar_points"));
  if (ej.contains("prebaked") && !ej.at("prebaked").is_null()) {
    const auto& pj = ej.at("prebaked");
    EnvironmentSpec::Prebaked pb;
    pb.height = pj.at("height").get<int>();
    pb.width = pj.at("width").get<int>();
    pb.resolution = pj.at("resolution").get<double>();
    pb.anchor_h = pj.at("anchor").at(0).get<double>();
    pb.anchor_w = pj.at("anchor").at(1).get<double>();
    for (const auto& [name, data] : pj.at("layers").items())
      pb.layers[name] = data.get<std::vector<float>>();
    sample.environment.prebaked = std::move(pb);
  }
  return sample;
}

json parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw_error(ErrorKind::Io, "cannot open " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw_error(ErrorKind::Data, "parse error in " + path + " at byte " +
                                     std::to_string(e.byte) + ": " + e.what());
  }
}

}  // namespace

void save_scene(const SceneSample& sample, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw_error(ErrorKind::Io, "cannot write " + path);
  os << scene_to_json(sample).dump(1) << "\n";
  if (!os) throw_error(ErrorKind::Io, "write failed: " + path);
}

SceneSample load_scene(const std::string& path) {
  try {
    return scene_from_json(parse_file(path));
  } catch (const json::exception& e) {
    throw_error(ErrorKind::Data, "scene " + path + ": " + e.what());
  }
}

ScenarioSpec load_scenario_spec(const std::string& path) {
  const json j = parse_file(path);
  try {
    if (!j.contains("version") ||
        j.at("version").get<std::string>() != kScenarioSchemaVersion)
      throw_error(ErrorKind::Data,
                  std::string("scenario: unsupported schema version, expected ") +
                      kScenarioSchemaVersion);
    ScenarioSpec spec;
    spec.kind = j.at("kind").get<std::string>();
    if (j.contains("agent_count")) {
      spec.min_agents = j.at("agent_count").at(0).get<int>();
      spec.max_agents = j.at("agent_count").at(1).get<int>();
    }
    if (j.contains("speed_mps")) {
      spec.min_speed_mps = j.at("speed_mps").at(0).get<double>();
      spec.max_speed_mps = j.at("speed_mps").at(1).get<double>();
    }
    if (j.contains("turn_probabilities")) {
      spec.turn_probabilities.clear();
      for (const auto& [name, p] : j.at("turn_probabilities").items())
        spec.turn_probabilities[name] = p.get<double>();
    }
    spec.lane_halfwidth = j.value("lane_halfwidth", spec.lane_halfwidth);
    spec.max_agents_of_interest =
        j.value("max_agents_of_interest", spec.max_agents_of_interest);
    spec.emit_points = j.value("emit_points", spec.emit_points);
    spec.seed = j.value("seed", spec.seed);
    spec.validate();
    return spec;
  } catch (const json::exception& e) {
    throw_error(ErrorKind::Data, "scenario " + path + ": " + e.what());
  }
}

void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& dir) {
  json scenes = json::array();
  for (const auto& e : entries)
    scenes.push_back(json{{"file", e.file}, {"split", e.split}});
  json j{{"version", kDatasetSchemaVersion}, {"scenes", std::move(scenes)}};
  const std::string path = dir + "/manifest.json";
  std::ofstream os(path);
  if (!os) throw_error(ErrorKind::Io, "cannot write " + path);
  os << j.dump(1) << "\n";
}

std::vector<ManifestEntry> load_manifest(const std::string& dir) {
  const json j = parse_file(dir + "/manifest.json");
  try {
    if (j.at("version").get<std::string>() != kDatasetSchemaVersion)
      throw_error(ErrorKind::Data, "dataset: unsupported manifest version");
    std::vector<ManifestEntry> out;
    for (const auto& sj : j.at("scenes"))
      out.push_back({sj.at("file").get<std::string>(), sj.at("split").get<std::string>()});
    return out;
  } catch (const json::exception& e) {
    throw_error(ErrorKind::Data, std::string("manifest: ") + e.what());
  }
}

Dataset::Dataset(const std::string& dir, const std::string& split) {
  for (const auto& entry : load_manifest(dir)) {
    if (entry.split != split) continue;
    scenes_.push_back(load_scene(dir + "/" + entry.file));
  }
  if (scenes_.empty())
    throw_error(ErrorKind::Data, "dataset " + dir + " has no scenes in split " + split);
}

std::vector<size_t> Dataset::batch_indices(int64_t step, int batch_size,
                                           uint64_t shuffle_seed) const {
  const int64_t n = static_cast<int64_t>(scenes_.size());
  std::vector<size_t> batch;
  batch.reserve(static_cast<size_t>(batch_size));
  int64_t cached_epoch = -1;
  std::vector<size_t> order(static_cast<size_t>(n));
  for (int64_t pos = step * batch_size; pos < (step + 1) * batch_size; ++pos) {
    const int64_t epoch = pos / n;
    if (epoch != cached_epoch) {
      std::iota(order.begin(), order.end(), size_t{0});
      std::mt19937 rng(static_cast<uint32_t>(shuffle_seed + 0x9e3779b9ull * epoch));
      std::shuffle(order.begin(), order.end(), rng);
      cached_epoch = epoch;
    }
    batch.push_back(order[static_cast<size_t>(pos % n)]);
  }
  return batch;
}

}  // namespace caspgrid
