#include "caspgrid/evalrun.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "caspgrid/extractor.hpp"
#include "caspgrid/parallel.hpp"
#include "caspgrid/train.hpp"

namespace caspgrid {

namespace {

// Grid-frame trajectory -> world-frame eval trajectory.
EvalTrajectory to_world(const TrajectoryMode& mode, const Pose2& ego,
                        const RasterConfig& cfg) {
  EvalTrajectory out;
  out.probability = mode.probability;
  out.positions.reserve(mode.positions.size());
  for (const Vec2& p : mode.positions)
    out.positions.push_back(grid_to_world(p.x, p.y, ego, cfg));
  return out;
}

}  // namespace

EvalOutcome run_evaluation(const RunConfig& cfg, const std::string& dataset_dir,
                           const std::string& split, const std::string& checkpoint) {
  cfg.validate();
  ThreadPool::instance().set_threads(cfg.threads);
  Dataset dataset(dataset_dir, split);

  ParamStore<float> store;
  CaspnetModel<float> model(cfg.model, cfg.raster, cfg.env);
  model.build(store, cfg.seed);
  TrajectoryMlp mlp(cfg.extractor.mlp_hidden, cfg.raster.traj_steps);
  mlp.build(store, cfg.seed + 1);
  load_checkpoint(checkpoint, store);

  EvalOutcome outcome;
  std::mt19937 rng(cfg.seed);  // unused in eval mode, required by the interface

  for (size_t si = 0; si < dataset.size(); ++si) {
    const SceneSample& scene = dataset.scene(si);
    PreparedBatch batch = prepare_batch({&scene}, cfg);

    Tape<float> tape(/*recording=*/false);
    ParamBinder<float> binder(tape, store);
    ForwardResult<float> fwd =
        model.forward(tape, binder, batch.inputs, /*training=*/false, rng);
    AgentOutput agents = model.agent_output_for_sample(fwd, batch.inputs, 0);

    DrivableContext ctx;
    ctx.cfg = cfg.raster;
    ctx.ego = scene.ego;
    ctx.mask = GridTensor({cfg.raster.height_px, cfg.raster.width_px});
    {
      const GridTensor env = rasterize_environment(scene, cfg.raster, cfg.env);
      const int64_t k = cfg.env.num_channels();
      int64_t drivable_ch = -1;
      for (size_t i = 0; i < cfg.env.semantic_layers.size(); ++i)
        if (cfg.env.semantic_layers[i] == "drivable")
          drivable_ch = static_cast<int64_t>(i);
      for (int64_t i = 0; i < ctx.mask.numel(); ++i)
        ctx.mask[i] = drivable_ch >= 0 ? env[i * k + drivable_ch] : 1.0f;
    }
    outcome.contexts.push_back(std::move(ctx));
    const int ctx_index = static_cast<int>(outcome.contexts.size()) - 1;

    const int64_t t = cfg.raster.num_future, h = cfg.raster.height_px,
                  w = cfg.raster.width_px;
    for (size_t a = 0; a < batch.instances.size(); ++a) {
      const auto& inst = batch.instances[a];
      const AgentTrack* track = scene.find_track(inst.agent_id);
      if (is_parked(*track, cfg.eval.parked_displacement_m)) {
        ++outcome.parked_excluded;
        continue;
      }
      bool any_valid = false;
      for (const auto& s : track->future) any_valid = any_valid || s.valid;
      if (!any_valid) continue;

      GridTensor occ({t, h, w});
      GridTensor off({t, h, w, 2});
      std::copy_n(agents.occupancy.data() + static_cast<int64_t>(a) * t * h * w,
                  t * h * w, occ.data());
      std::copy_n(agents.offsets.data() + static_cast<int64_t>(a) * t * h * w * 2,
                  t * h * w * 2, off.data());
      TrajectorySet set = extract(occ, off, inst.state, cfg.extractor, mlp, store);

      EvalRecord record;
      record.agent_id = inst.agent_id;
      record.object_type = track->type;
      record.drivable_index = ctx_index;
      for (int k = 0; k < cfg.raster.num_future; ++k) {
        const bool valid = k < static_cast<int>(track->future.size()) &&
                           track->future[static_cast<size_t>(k)].valid;
        record.gt_valid.push_back(valid ? 1 : 0);
        record.gt_positions.push_back(
            valid ? track->future[static_cast<size_t>(k)].position : Vec2{});
      }
      if (set.modes.empty()) {
        // No goal cleared the threshold; hold the current position so the
        // record stays well-defined.
        ++outcome.extraction_fallbacks;
        EvalTrajectory hold;
        hold.probability = 1.0;
        hold.positions.assign(static_cast<size_t>(cfg.raster.num_future),
                              track->current().position);
        record.predictions.push_back(std::move(hold));
      } else {
        for (const auto& mode : set.modes)
          record.predictions.push_back(to_world(mode, scene.ego, cfg.raster));
      }
      outcome.model_records.push_back(std::move(record));

      EvalRecord cv = outcome.model_records.back();
      cv.predictions.clear();
      EvalTrajectory cv_traj;
      cv_traj.probability = 1.0;
      cv_traj.positions =
          constant_velocity_baseline(*track, cfg.raster.num_future, cfg.raster.dt());
      cv.predictions.push_back(std::move(cv_traj));
      outcome.cv_records.push_back(std::move(cv));
      ++outcome.agents_evaluated;
    }
  }

  outcome.rows = aggregate_metrics(outcome.model_records, outcome.contexts, cfg.eval,
                                   "model", cfg.raster.num_future);
  const auto cv_rows = aggregate_metrics(outcome.cv_records, outcome.contexts, cfg.eval,
                                         "constant_velocity", cfg.raster.num_future);
  outcome.rows.insert(outcome.rows.end(), cv_rows.begin(), cv_rows.end());
  return outcome;
}

std::vector<EvalReportRow> aggregate_metrics(
    const std::vector<EvalRecord>& records,
    const std::vector<DrivableContext>& contexts, const EvalSettings& settings,
    const std::string& method, int num_future) {
  std::vector<EvalReportRow> rows;
  if (records.empty()) return rows;

  std::vector<int> types;
  for (const auto& r : records)
    if (std::find(types.begin(), types.end(), r.object_type) == types.end())
      types.push_back(r.object_type);
  std::sort(types.begin(), types.end());

  auto emit_group = [&](const std::string& label,
                        const std::vector<const EvalRecord*>& group) {
    for (int k : settings.k_values) {
      double ade = 0.0, fde = 0.0;
      int64_t misses = 0;
      for (const EvalRecord* r : group) {
        const int k_eff = std::min<int>(k, static_cast<int>(r->predictions.size()));
        ade += min_ade_k(*r, k_eff);
        fde += min_fde_k(*r, k_eff);
        misses += miss_k(*r, k_eff, settings.miss_threshold_m);
      }
      const double n = static_cast<double>(group.size());
      rows.push_back({method, label, k, "minADE", -1, ade / n,
                      static_cast<int64_t>(group.size())});
      rows.push_back({method, label, k, "minFDE", -1, fde / n,
                      static_cast<int64_t>(group.size())});
      rows.push_back({method, label, k, "MR", -1, static_cast<double>(misses) / n,
                      static_cast<int64_t>(group.size())});
    }
    // Per-horizon FDE curves for k in {1, 5}.
    for (int k : {1, 5}) {
      for (int step = 0; step < num_future; ++step) {
        double sum = 0.0;
        int64_t n = 0;
        for (const EvalRecord* r : group) {
          const int k_eff = std::min<int>(k, static_cast<int>(r->predictions.size()));
          const double v = min_fde_at_step(*r, k_eff, step);
          if (v >= 0.0) {
            sum += v;
            ++n;
          }
        }
        if (n > 0)
          rows.push_back({method, label, k, "minFDE", step + 1, sum / static_cast<double>(n), n});
      }
    }
  };

  std::vector<const EvalRecord*> all;
  for (const auto& r : records) all.push_back(&r);
  emit_group("all", all);
  for (int type : types) {
    std::vector<const EvalRecord*> group;
    for (const auto& r : records)
      if (r.object_type == type) group.push_back(&r);
    emit_group("type" + std::to_string(type), group);
  }

  rows.push_back({method, "all", 0, "OR", -1, offroad_rate(records, contexts),
                  static_cast<int64_t>(records.size())});
  return rows;
}

void write_eval_rows_ldjson(const std::vector<EvalReportRow>& rows, std::ostream& os) {
  for (const auto& r : rows)
    os << nlohmann::json{{"method", r.method},
                         {"object_type", r.object_type},
                         {"k", r.k},
                         {"metric", r.metric},
                         {"horizon_steps", r.horizon_steps},
                         {"value", r.value},
                         {"count", r.count}}
              .dump()
       << "\n";
}

void write_eval_rows_table(const std::vector<EvalReportRow>& rows, std::ostream& os) {
  os << std::left << std::setw(18) << "method" << std::setw(10) << "type"
     << std::setw(4) << "k" << std::setw(8) << "metric" << std::setw(9) << "horizon"
     << std::setw(12) << "value" << "count\n";
  for (const auto& r : rows) {
    std::ostringstream hz;
    if (r.horizon_steps < 0)
      hz << "full";
    else
      hz << r.horizon_steps;
    os << std::left << std::setw(18) << r.method << std::setw(10) << r.object_type
       << std::setw(4) << r.k << std::setw(8) << r.metric << std::setw(9) << hz.str()
       << std::setw(12) << std::setprecision(6) << r.value << r.count << "\n";
  }
}

}  // namespace caspgrid
