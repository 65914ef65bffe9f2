#include "caspgrid/config.hpp"

#include <fstream>

#include <json.hpp>

namespace caspgrid {

namespace {

using nlohmann::json;

json run_config_to_json(const RunConfig& c) {
  json j;
  j["version"] = kRunConfigSchemaVersion;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["raster"] = {{"height", c.raster.height_px},
                 {"width", c.raster.width_px},
                 {"resolution", c.raster.resolution},
                 {"anchor", {c.raster.anchor_h, c.raster.anchor_w}},
                 {"num_past", c.raster.num_past},
                 {"num_future", c.raster.num_future},
                 {"frame_rate_hz", c.raster.frame_rate_hz},
                 {"num_types", c.raster.num_types},
                 {"num_goals", c.raster.num_goals},
                 {"traj_steps", c.raster.traj_steps}};
  j["environment"] = {{"semantic_layers", c.env.semantic_layers},
                      {"centerline_orientation", c.env.centerline_orientation},
                      {"lidar", c.env.lidar},
                      {"radar", c.env.radar},
                      {"point_clip", c.env.point_clip},
                      {"point_window_s", c.env.point_window_s}};
  j["model"] = {{"pyramid_widths",
                 {c.model.pyramid_widths[0], c.model.pyramid_widths[1],
                  c.model.pyramid_widths[2], c.model.pyramid_widths[3]}},
                {"deform_channels", c.model.deform_channels},
                {"split_width", c.model.split_width},
                {"agent_width", c.model.agent_width},
                {"kernel_size", c.model.kernel_size},
                {"bifpn_depth", c.model.bifpn_depth},
                {"dropout", c.model.dropout},
                {"bn_momentum", c.model.bn_momentum},
                {"max_agents", c.model.max_agents}};
  j["loss"] = {{"alpha", c.loss.alpha},
               {"beta", c.loss.beta},
               {"gamma", c.loss.gamma},
               {"w_offset", c.loss.w_offset},
               {"w_velocity", c.loss.w_velocity},
               {"type_weights", c.loss.type_weights},
               {"w_agents", c.loss.w_agents},
               {"sigma_g", c.loss.sigma_g},
               {"w_trajectory", c.loss.w_trajectory}};
  j["extractor"] = {{"theta_occ", c.extractor.theta_occ},
                    {"theta_goal", c.extractor.theta_goal},
                    {"nms_radius", c.extractor.nms_radius},
                    {"refine_radius", c.extractor.refine_radius},
                    {"num_goals", c.extractor.num_goals},
                    {"horizon_most_points", c.extractor.horizon_most_points},
                    {"mlp_hidden", c.extractor.mlp_hidden}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"weight_decay", c.optimizer.weight_decay}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"steps", c.train.steps},
                {"checkpoint_interval", c.train.checkpoint_interval},
                {"log_breakdown_interval", c.train.log_breakdown_interval},
                {"augment", c.train.augment},
                {"p_rotate", c.train.augment_cfg.p_rotate},
                {"rotate_range", c.train.augment_cfg.rotate_range},
                {"translate_range_m", c.train.augment_cfg.translate_range_m},
                {"p_flip", c.train.augment_cfg.p_flip},
                {"p_drop_agent", c.train.augment_cfg.p_drop_agent}};
  j["eval"] = {{"k_values", c.eval.k_values},
               {"miss_threshold_m", c.eval.miss_threshold_m},
               {"parked_displacement_m", c.eval.parked_displacement_m}};
  return j;
}

RunConfig run_config_from_json(const json& j, const std::string& origin) {
  if (!j.contains("version") ||
      j.at("version").get<std::string>() != kRunConfigSchemaVersion)
    throw_error(ErrorKind::Config, origin + ": unsupported config version, expected " +
                                       std::string(kRunConfigSchemaVersion));
  RunConfig c;
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  if (j.contains("raster")) {
    const auto& r = j.at("raster");
    c.raster.height_px = r.value("height", c.raster.height_px);
    c.raster.width_px = r.value("width", c.raster.width_px);
    c.raster.resolution = r.value("resolution", c.raster.resolution);
    if (r.contains("anchor")) {
      c.raster.anchor_h = r.at("anchor").at(0).get<double>();
      c.raster.anchor_w = r.at("anchor").at(1).get<double>();
    }
    c.raster.num_past = r.value("num_past", c.raster.num_past);
    c.raster.num_future = r.value("num_future", c.raster.num_future);
    c.raster.frame_rate_hz = r.value("frame_rate_hz", c.raster.frame_rate_hz);
    c.raster.num_types = r.value("num_types", c.raster.num_types);
    c.raster.num_goals = r.value("num_goals", c.raster.num_goals);
    c.raster.traj_steps = r.value("traj_steps", c.raster.traj_steps);
  }
  if (j.contains("environment")) {
    const auto& e = j.at("environment");
    if (e.contains("semantic_layers"))
      c.env.semantic_layers = e.at("semantic_layers").get<std::vector<std::string>>();
    c.env.centerline_orientation =
        e.value("centerline_orientation", c.env.centerline_orientation);
    c.env.lidar = e.value("lidar", c.env.lidar);
    c.env.radar = e.value("radar", c.env.radar);
    c.env.point_clip = e.value("point_clip", c.env.point_clip);
    c.env.point_window_s = e.value("point_window_s", c.env.point_window_s);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    if (m.contains("pyramid_widths")) {
      const auto& pw = m.at("pyramid_widths");
      if (pw.size() != kPyramidLevels)
        throw_error(ErrorKind::Config, origin + ": pyramid_widths must have 4 entries");
      for (int l = 0; l < kPyramidLevels; ++l)
        c.model.pyramid_widths[static_cast<size_t>(l)] = pw.at(l).get<int>();
    }
    c.model.deform_channels = m.value("deform_channels", c.model.deform_channels);
    c.model.split_width = m.value("split_width", c.model.split_width);
    c.model.agent_width = m.value("agent_width", c.model.agent_width);
    c.model.kernel_size = m.value("kernel_size", c.model.kernel_size);
    c.model.bifpn_depth = m.value("bifpn_depth", c.model.bifpn_depth);
    c.model.dropout = m.value("dropout", c.model.dropout);
    c.model.bn_momentum = m.value("bn_momentum", c.model.bn_momentum);
    c.model.max_agents = m.value("max_agents", c.model.max_agents);
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    c.loss.alpha = l.value("alpha", c.loss.alpha);
    c.loss.beta = l.value("beta", c.loss.beta);
    c.loss.gamma = l.value("gamma", c.loss.gamma);
    c.loss.w_offset = l.value("w_offset", c.loss.w_offset);
    c.loss.w_velocity = l.value("w_velocity", c.loss.w_velocity);
    if (l.contains("type_weights"))
      c.loss.type_weights = l.at("type_weights").get<std::vector<double>>();
    c.loss.w_agents = l.value("w_agents", c.loss.w_agents);
    c.loss.sigma_g = l.value("sigma_g", c.loss.sigma_g);
    c.loss.w_trajectory = l.value("w_trajectory", c.loss.w_trajectory);
  }
  if (j.contains("extractor")) {
    const auto& e = j.at("extractor");
    c.extractor.theta_occ = e.value("theta_occ", c.extractor.theta_occ);
    c.extractor.theta_goal = e.value("theta_goal", c.extractor.theta_goal);
    c.extractor.nms_radius = e.value("nms_radius", c.extractor.nms_radius);
    c.extractor.refine_radius = e.value("refine_radius", c.extractor.refine_radius);
    c.extractor.num_goals = e.value("num_goals", c.extractor.num_goals);
    c.extractor.horizon_most_points =
        e.value("horizon_most_points", c.extractor.horizon_most_points);
    c.extractor.mlp_hidden = e.value("mlp_hidden", c.extractor.mlp_hidden);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.optimizer.lr = o.value("lr", c.optimizer.lr);
    c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
    c.optimizer.eps = o.value("eps", c.optimizer.eps);
    c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.steps = t.value("steps", c.train.steps);
    c.train.checkpoint_interval =
        t.value("checkpoint_interval", c.train.checkpoint_interval);
    c.train.log_breakdown_interval =
        t.value("log_breakdown_interval", c.train.log_breakdown_interval);
    c.train.augment = t.value("augment", c.train.augment);
    c.train.augment_cfg.p_rotate = t.value("p_rotate", c.train.augment_cfg.p_rotate);
    c.train.augment_cfg.rotate_range =
        t.value("rotate_range", c.train.augment_cfg.rotate_range);
    c.train.augment_cfg.translate_range_m =
        t.value("translate_range_m", c.train.augment_cfg.translate_range_m);
    c.train.augment_cfg.p_flip = t.value("p_flip", c.train.augment_cfg.p_flip);
    c.train.augment_cfg.p_drop_agent =
        t.value("p_drop_agent", c.train.augment_cfg.p_drop_agent);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    if (e.contains("k_values")) c.eval.k_values = e.at("k_values").get<std::vector<int>>();
    c.eval.miss_threshold_m = e.value("miss_threshold_m", c.eval.miss_threshold_m);
    c.eval.parked_displacement_m =
        e.value("parked_displacement_m", c.eval.parked_displacement_m);
  }
  c.validate();
  return c;
}

}  // namespace

RunConfig parse_run_config_json(const std::string& text, const std::string& origin) {
  try {
    return run_config_from_json(json::parse(text), origin);
  } catch (const json::parse_error& e) {
    throw_error(ErrorKind::Config, origin + ": parse error at byte " +
                                       std::to_string(e.byte) + ": " + e.what());
  } catch (const json::exception& e) {
    throw_error(ErrorKind::Config, origin + ": " + e.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw_error(ErrorKind::Io, "cannot open config " + path);
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  return parse_run_config_json(text, path);
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw_error(ErrorKind::Io, "cannot write config " + path);
  os << run_config_to_json(cfg).dump(1) << "\n";
}

}  // namespace caspgrid
