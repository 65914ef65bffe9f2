#include "caspgrid/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "caspgrid/parallel.hpp"

namespace caspgrid {

namespace {

struct PreparedSample {
  GridTensor objects;      // [M, H, W, F]
  GridTensor environment;  // [H, W, K]
  SceneGroundTruth scene_gt;
  AgentGroundTruth agent_gt;
  std::vector<std::array<GridTensor, kPyramidLevels>> masks;
  std::vector<PreparedBatch::AgentInstance> instances;
};

PreparedSample prepare_sample(const SceneSample& scene, const RunConfig& cfg,
                              int64_t slot) {
  PreparedSample out;
  out.objects = rasterize_objects(scene, cfg.raster);
  out.environment = rasterize_environment(scene, cfg.raster, cfg.env);
  out.scene_gt = render_gt(scene, cfg.raster, cfg.loss.sigma_g);
  AgentGroundTruth all_agent_gt = render_agent_gt(scene, cfg.raster, cfg.loss.sigma_g);

  int taken = 0;
  for (size_t a = 0; a < scene.agents_of_interest.size(); ++a) {
    if (taken >= cfg.model.max_agents) break;
    const std::string& id = scene.agents_of_interest[a];
    std::array<GridTensor, kPyramidLevels> masks;
    try {
      for (int l = 0; l < kPyramidLevels; ++l)
        masks[static_cast<size_t>(l)] = rasterize_agent_masks(scene, cfg.raster, id, l);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::MaskUnavailable) continue;  // off-grid at t0
      throw;
    }
    const AgentTrack* track = scene.find_track(id);
    PreparedBatch::AgentInstance inst;
    inst.sample = slot;
    inst.agent_id = id;
    inst.state = agent_state_grid(track->current(), scene.ego, cfg.raster);
    inst.gt_valid.assign(static_cast<size_t>(cfg.raster.num_future), 0);
    inst.gt_grid.assign(static_cast<size_t>(cfg.raster.num_future), Vec2{});
    for (size_t k = 0; k < track->future.size(); ++k) {
      const AgentState& s = track->future[k];
      if (!s.valid) continue;
      const GridCoord gc = world_to_grid(s.position, scene.ego, cfg.raster);
      if (!gc.in_bounds) continue;
      inst.gt_valid[k] = 1;
      inst.gt_grid[k] = {gc.cont_h, gc.cont_w};
    }
    out.masks.push_back(std::move(masks));
    out.instances.push_back(std::move(inst));
    // Keep the GT for this instance aligned with the instance list.
    out.agent_gt.per_agent.push_back(std::move(all_agent_gt.per_agent[a]));
    ++taken;
  }
  return out;
}

}  // namespace

PreparedBatch prepare_batch(const std::vector<const SceneSample*>& scenes,
                            const RunConfig& cfg) {
  const int64_t n = static_cast<int64_t>(scenes.size());
  if (n == 0) throw_error(ErrorKind::Data, "prepare_batch: empty batch");
  std::vector<PreparedSample> prepared(static_cast<size_t>(n));
  parallel_for(n, [&](int64_t b0, int64_t b1) {
    for (int64_t i = b0; i < b1; ++i)
      prepared[static_cast<size_t>(i)] = prepare_sample(*scenes[static_cast<size_t>(i)], cfg, i);
  });

  const int64_t m = cfg.raster.num_past, h = cfg.raster.height_px,
                w = cfg.raster.width_px;
  const int64_t f = object_feature_channels(cfg.raster);
  const int64_t k_env = cfg.env.num_channels();

  PreparedBatch batch;
  batch.inputs.objects = Tensor<float>({n, m, h, w, f});
  batch.inputs.environment = Tensor<float>({n, h, w, k_env});
  for (int64_t i = 0; i < n; ++i) {
    std::copy_n(prepared[static_cast<size_t>(i)].objects.data(), m * h * w * f,
                batch.inputs.objects.data() + i * m * h * w * f);
    std::copy_n(prepared[static_cast<size_t>(i)].environment.data(), h * w * k_env,
                batch.inputs.environment.data() + i * h * w * k_env);
  }

  // Scene targets stacked per type across the batch.
  for (int c = 0; c < cfg.raster.num_types; ++c) {
    std::vector<const HeadGroundTruth*> gts;
    for (int64_t i = 0; i < n; ++i)
      gts.push_back(&prepared[static_cast<size_t>(i)].scene_gt.per_type[static_cast<size_t>(c)]);
    batch.scene_targets.push_back(stack_head_targets<float>(gts));
  }

  // Agent instances flattened across the batch, one target set each.
  for (int64_t i = 0; i < n; ++i) {
    PreparedSample& ps = prepared[static_cast<size_t>(i)];
    for (size_t a = 0; a < ps.instances.size(); ++a) {
      batch.inputs.agent_sample_index.push_back(i);
      batch.inputs.agent_masks.push_back(std::move(ps.masks[a]));
      batch.agent_targets.push_back(
          stack_head_targets<float>({&ps.agent_gt.per_agent[a]}));
      batch.instances.push_back(std::move(ps.instances[a]));
    }
  }
  return batch;
}

namespace {

using nlohmann::json;

// Mean L2 trajectory term for one agent instance (averaged over valid steps),
// built on the tape so the MLP trains jointly with the network.
Var<float> instance_trajectory_loss(Tape<float>& tape, ParamBinder<float>& binder,
                                    const TrajectoryMlp& mlp,
                                    const PreparedBatch::AgentInstance& inst,
                                    int num_future) {
  int last_valid = -1;
  int n_valid = 0;
  for (size_t k = 0; k < inst.gt_valid.size(); ++k)
    if (inst.gt_valid[k]) {
      last_valid = static_cast<int>(k);
      ++n_valid;
    }
  if (last_valid < 0) return nullptr;
  const int horizon = last_valid + 1;
  const Vec2 goal = inst.gt_grid[static_cast<size_t>(last_valid)];

  const int tt = mlp.traj_steps();
  auto residual = mlp.forward(tape, binder, inst.state, goal, horizon, num_future);
  const std::vector<Vec2> line = mlp.base_line(inst.state, goal, horizon);
  Tensor<float> line_t({1, 2 * tt});
  Tensor<float> target({1, 2 * tt});
  Tensor<float> weight({1, 2 * tt});
  const float wv = 1.0f / static_cast<float>(n_valid);
  for (int k = 0; k < tt; ++k) {
    line_t[2 * k] = static_cast<float>(line[static_cast<size_t>(k)].x);
    line_t[2 * k + 1] = static_cast<float>(line[static_cast<size_t>(k)].y);
    if (k < static_cast<int>(inst.gt_valid.size()) && inst.gt_valid[static_cast<size_t>(k)]) {
      target[2 * k] = static_cast<float>(inst.gt_grid[static_cast<size_t>(k)].x);
      target[2 * k + 1] = static_cast<float>(inst.gt_grid[static_cast<size_t>(k)].y);
      weight[2 * k] = wv;
      weight[2 * k + 1] = wv;
    }
  }
  auto pred = add(tape, residual, tape.leaf(std::move(line_t)));
  auto diff = sub(tape, pred, tape.leaf(std::move(target)));
  return weighted_sum_all(tape, mul(tape, diff, diff), std::move(weight));
}

std::string checkpoint_path(const std::string& out_dir, const std::string& tag) {
  return out_dir + "/checkpoint_" + tag + ".ckpt";
}

}  // namespace

TrainOutcome run_training(const RunConfig& cfg, const std::string& dataset_dir,
                          const std::string& out_dir,
                          const std::string& resume_checkpoint) {
  cfg.validate();
  ThreadPool::instance().set_threads(cfg.threads);
  std::filesystem::create_directories(out_dir);
  save_run_config(cfg, out_dir + "/run_config.json");

  Dataset dataset(dataset_dir, "train");

  ParamStore<float> store;
  CaspnetModel<float> model(cfg.model, cfg.raster, cfg.env);
  model.build(store, cfg.seed);
  TrajectoryMlp mlp(cfg.extractor.mlp_hidden, cfg.raster.traj_steps);
  mlp.build(store, cfg.seed + 1);

  CheckpointMeta meta;
  if (!resume_checkpoint.empty()) meta = load_checkpoint(resume_checkpoint, store);

  std::ofstream log(out_dir + "/loss_log.jsonl",
                    resume_checkpoint.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw_error(ErrorKind::Io, "cannot write loss log in " + out_dir);

  std::mt19937 dropout_rng(cfg.seed ^ 0xd0d0d0d0u);
  TrainOutcome outcome;
  const int64_t first_step = static_cast<int64_t>(meta.train_step);

  for (int64_t step = first_step; step < cfg.train.steps; ++step) {
    const std::vector<size_t> idx =
        dataset.batch_indices(step, cfg.train.batch_size, cfg.seed);

    // Per-sample augmentation with per-slot RNG streams: deterministic under
    // any thread count.
    std::vector<SceneSample> scenes(idx.size());
    parallel_for(static_cast<int64_t>(idx.size()), [&](int64_t b0, int64_t b1) {
      for (int64_t i = b0; i < b1; ++i) {
        const SceneSample& base = dataset.scene(idx[static_cast<size_t>(i)]);
        if (cfg.train.augment) {
          std::mt19937 rng(static_cast<uint32_t>(cfg.seed + 0x51ed2700u +
                                                 step * 1315423911ll + i * 2654435761ll));
          scenes[static_cast<size_t>(i)] = augment(base, cfg.train.augment_cfg, rng);
        } else {
          scenes[static_cast<size_t>(i)] = base;
        }
      }
    });
    std::vector<const SceneSample*> scene_ptrs;
    for (const auto& s : scenes) scene_ptrs.push_back(&s);
    PreparedBatch batch = prepare_batch(scene_ptrs, cfg);

    Tape<float> tape;
    ParamBinder<float> binder(tape, store);
    ForwardResult<float> fwd =
        model.forward(tape, binder, batch.inputs, /*training=*/true, dropout_rng);

    auto [grid_loss, breakdown] =
        total_loss(tape, fwd.scene_heads, batch.scene_targets, fwd.agent_head,
                   batch.agent_targets, cfg.train.batch_size, cfg.raster.num_future,
                   cfg.loss);

    Var<float> loss = grid_loss;
    double traj_value = 0.0;
    if (cfg.loss.w_trajectory > 0.0) {
      Var<float> traj_sum;
      for (const auto& inst : batch.instances) {
        auto li = instance_trajectory_loss(tape, binder, mlp, inst,
                                           cfg.raster.num_future);
        if (li) traj_sum = traj_sum ? add(tape, traj_sum, li) : li;
      }
      if (traj_sum) {
        auto traj_term = scale(tape, traj_sum,
                               cfg.loss.w_trajectory / cfg.train.batch_size);
        traj_value = static_cast<double>(traj_term->value[0]);
        if (!std::isfinite(traj_value))
          throw_error(ErrorKind::Numerical, "trajectory loss is non-finite");
        loss = add(tape, loss, traj_term);
      }
    }

    const double total = static_cast<double>(loss->value[0]);
    tape.backward(loss);
    binder.flush_gradients();
    adamw_step(store, cfg.optimizer, static_cast<int64_t>(meta.adam_step) + 1);
    ++meta.adam_step;
    meta.train_step = static_cast<uint64_t>(step + 1);

    log << json{{"step", step},
                {"loss", total},
                {"scene", breakdown.scene},
                {"agents", breakdown.agents},
                {"trajectory", traj_value}}
            .dump()
        << "\n";
    if (cfg.train.log_breakdown_interval > 0 &&
        step % cfg.train.log_breakdown_interval == 0) {
      for (const auto& term : breakdown.terms)
        log << json{{"step", step}, {"term", term.name}, {"value", term.value}}.dump()
            << "\n";
    }
    outcome.losses.push_back(total);

    if (cfg.train.checkpoint_interval > 0 &&
        (step + 1) % cfg.train.checkpoint_interval == 0)
      save_checkpoint(checkpoint_path(out_dir, "step" + std::to_string(step + 1)),
                      store, meta);
  }

  outcome.steps_run = cfg.train.steps - first_step;
  outcome.final_checkpoint = checkpoint_path(out_dir, "final");
  save_checkpoint(outcome.final_checkpoint, store, meta);
  return outcome;
}

}  // namespace caspgrid
