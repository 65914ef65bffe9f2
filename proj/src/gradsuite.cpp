#include "caspgrid/gradsuite.hpp"

#include <cmath>
#include <functional>

#include "caspgrid/data.hpp"
#include "caspgrid/losses.hpp"
#include "caspgrid/model.hpp"
#include "caspgrid/ops.hpp"
#include "caspgrid/train.hpp"

namespace caspgrid {

namespace {

using D = double;
using BuildFn = std::function<Var<D>(Tape<D>&, std::vector<Var<D>>&)>;

std::vector<double> flatten(const std::vector<Tensor<D>>& ts) {
  std::vector<double> out;
  for (const auto& t : ts)
    out.insert(out.end(), t.storage().begin(), t.storage().end());
  return out;
}

std::vector<Tensor<D>> unflatten(const std::vector<Tensor<D>>& like,
                                 const std::vector<double>& theta) {
  std::vector<Tensor<D>> out;
  size_t k = 0;
  for (const auto& t : like) {
    Tensor<D> c(t.dims());
    for (int64_t i = 0; i < c.numel(); ++i) c[i] = theta[k++];
    out.push_back(std::move(c));
  }
  return out;
}

// Checks one kernel: a fixed random probe turns the output into a scalar,
// backward supplies the analytic gradient, and central differences probe it.
FdReport check_kernel(const std::vector<Tensor<D>>& inputs, const BuildFn& build,
                      double h, double tol, int64_t max_coords, std::mt19937& rng,
                      const std::vector<uint8_t>* mask = nullptr) {
  Tensor<D> probe;
  {
    Tape<D> tape(false);
    std::vector<Var<D>> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t));
    auto out = build(tape, vars);
    std::mt19937 prng(12345);
    probe = Tensor<D>::uniform(out->value.dims(), -1.0, 1.0, prng);
  }
  auto f = [&](const std::vector<double>& theta) {
    auto ts = unflatten(inputs, theta);
    Tape<D> tape(false);
    std::vector<Var<D>> vars;
    for (auto& t : ts) vars.push_back(tape.leaf(std::move(t)));
    auto out = build(tape, vars);
    double s = 0.0;
    for (int64_t i = 0; i < out->value.numel(); ++i) s += out->value[i] * probe[i];
    return s;
  };
  const std::vector<double> theta0 = flatten(inputs);
  std::vector<double> analytic;
  {
    auto ts = unflatten(inputs, theta0);
    Tape<D> tape(true);
    std::vector<Var<D>> vars;
    for (auto& t : ts) vars.push_back(tape.leaf(std::move(t), /*requires_grad=*/true));
    auto out = build(tape, vars);
    auto s = weighted_sum_all(tape, out, probe);
    tape.backward(s);
    for (const auto& v : vars) {
      if (v->has_grad())
        analytic.insert(analytic.end(), v->grad.storage().begin(),
                        v->grad.storage().end());
      else
        analytic.insert(analytic.end(), static_cast<size_t>(v->value.numel()), 0.0);
    }
  }
  return finite_diff_check(f, theta0, analytic, h, tol, max_coords, rng, mask);
}

Tensor<D> rand_t(std::vector<int64_t> dims, std::mt19937& rng, double lo = -1.0,
                 double hi = 1.0) {
  return Tensor<D>::uniform(std::move(dims), lo, hi, rng);
}

// Keeps every |x| above margin so relu/maxpool stay away from their kinks
// under a +/- h probe.
Tensor<D> rand_away_from_zero(std::vector<int64_t> dims, std::mt19937& rng,
                              double margin = 5e-3) {
  Tensor<D> t = rand_t(std::move(dims), rng);
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (std::abs(t[i]) < margin) t[i] = t[i] < 0 ? -margin : margin;
  }
  return t;
}

FdReport check_end_to_end_loss(double h, double tol, std::mt19937& rng);

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(double h, double tol, uint64_t seed,
                                               bool include_end_to_end) {
  std::mt19937 rng(static_cast<uint32_t>(seed));
  std::vector<GradSuiteEntry> entries;
  auto run = [&](const std::string& name, const std::vector<Tensor<D>>& inputs,
                 const BuildFn& build, int64_t max_coords = 200,
                 const std::vector<uint8_t>* mask = nullptr) {
    entries.push_back({name, check_kernel(inputs, build, h, tol, max_coords, rng, mask)});
  };

  run("relu", {rand_away_from_zero({3, 7}, rng)},
      [](Tape<D>& g, std::vector<Var<D>>& v) { return relu(g, v[0]); });
  run("sigmoid", {rand_t({3, 7}, rng, -3.0, 3.0)},
      [](Tape<D>& g, std::vector<Var<D>>& v) { return sigmoid(g, v[0]); });
  run("tanh", {rand_t({3, 7}, rng, -3.0, 3.0)},
      [](Tape<D>& g, std::vector<Var<D>>& v) { return tanh_act(g, v[0]); });
  run("softmax", {rand_t({4, 6}, rng, -2.0, 2.0)},
      [](Tape<D>& g, std::vector<Var<D>>& v) { return softmax_last(g, v[0]); });
  run("linear", {rand_t({3, 5}, rng), rand_t({5, 4}, rng), rand_t({4}, rng)},
      [](Tape<D>& g, std::vector<Var<D>>& v) { return linear(g, v[0], v[1], v[2]); });
  run("concat_slice", {rand_t({2, 3, 4}, rng), rand_t({2, 3, 2}, rng)},
      [](Tape<D>& g, std::vector<Var<D>>& v) {
        return slice_last(g, concat_last(g, {v[0], v[1]}), 2, 3);
      });
  run("conv2d",
      {rand_t({2, 6, 5, 3}, rng), rand_t({3, 3, 3, 4}, rng), rand_t({4}, rng)},
      [](Tape<D>& g, std::vector<Var<D>>& v) {
        return conv2d(g, v[0], v[1], v[2], 1, 1);
      });
  run("conv2d_stride2",
      {rand_t({1, 8, 6, 2}, rng), rand_t({3, 3, 2, 3}, rng), rand_t({3}, rng)},
      [](Tape<D>& g, std::vector<Var<D>>& v) {
        return conv2d(g, v[0], v[1], v[2], 2, 1);
      });
  run("maxpool2d", {rand_away_from_zero({2, 4, 6, 3}, rng, 1e-2)},
      [](Tape<D>& g, std::vector<Var<D>>& v) { return maxpool2d(g, v[0]); });
  run("upsample_bilinear", {rand_t({2, 4, 3, 3}, rng)},
      [](Tape<D>& g, std::vector<Var<D>>& v) { return upsample_bilinear2x(g, v[0]); });
  run("batchnorm2d",
      {rand_t({3, 4, 4, 2}, rng), rand_t({2}, rng, 0.5, 1.5), rand_t({2}, rng)},
      [](Tape<D>& g, std::vector<Var<D>>& v) {
        return batchnorm2d(g, v[0], v[1], v[2], nullptr, nullptr, /*training=*/true);
      });
  {
    // Dropout with a replayed mask: reseeding inside the build keeps f pure.
    run("dropout", {rand_t({4, 9}, rng)}, [](Tape<D>& g, std::vector<Var<D>>& v) {
      std::mt19937 local(99);
      return dropout(g, v[0], 0.3, true, local);
    });
  }
  {
    // Offsets with fractional parts in [0.1, 0.4]: sampling positions stay
    // clear of the bilinear knots, so every coordinate is checkable.
    Tensor<D> offs({1, 5, 4, 18});
    std::uniform_real_distribution<double> frac(0.1, 0.4);
    std::uniform_int_distribution<int> whole(-2, 1);
    for (int64_t i = 0; i < offs.numel(); ++i)
      offs[i] = static_cast<double>(whole(rng)) + frac(rng);
    run("deform_conv2d",
        {rand_t({1, 5, 4, 3}, rng), rand_t({3, 3, 3, 4}, rng), rand_t({4}, rng),
         std::move(offs), rand_t({1, 5, 4, 9}, rng, 0.2, 0.9)},
        [](Tape<D>& g, std::vector<Var<D>>& v) {
          return deform_conv2d(g, v[0], v[1], v[2], v[3], v[4], 1, 1);
        },
        260);
  }
  run("conv_gru_step",
      {rand_t({1, 4, 4, 3}, rng), rand_t({1, 4, 4, 3}, rng),
       rand_t({3, 3, 6, 3}, rng), rand_t({3}, rng), rand_t({3, 3, 6, 3}, rng),
       rand_t({3}, rng), rand_t({3, 3, 6, 3}, rng), rand_t({3}, rng)},
      [](Tape<D>& g, std::vector<Var<D>>& v) {
        ConvGruParams<D> p{v[2], v[3], v[4], v[5], v[6], v[7]};
        return conv_gru_step(g, v[0], v[1], p, 1);
      },
      260);
  run("bifpn_node",
      {rand_t({1, 4, 4, 3}, rng), rand_t({1, 4, 4, 3}, rng), rand_t({1, 4, 4, 3}, rng),
       rand_t({3}, rng, 0.5, 1.5)},
      [](Tape<D>& g, std::vector<Var<D>>& v) {
        return fast_normalized_sum<D>(g, {v[0], v[1], v[2]}, v[3]);
      });
  run("head_activation", {rand_t({1, 3, 3, 10}, rng, -2.0, 2.0)},
      [](Tape<D>& g, std::vector<Var<D>>& v) { return head_activation(g, v[0]); });
  {
    Tensor<D> y({1, 5, 5});
    std::uniform_real_distribution<double> halo(0.0, 0.9);
    for (int64_t i = 0; i < y.numel(); ++i) y[i] = halo(rng);
    y[6] = 1.0;
    y[18] = 1.0;
    LossConfig lc;
    run("focal_occupancy_loss", {rand_t({1, 5, 5}, rng, 0.1, 0.9)},
        [y, lc](Tape<D>& g, std::vector<Var<D>>& v) {
          return focal_occupancy_loss(g, v[0], y, {2}, lc, 1.0);
        });
  }
  {
    Tensor<D> target = rand_t({1, 4, 4, 2}, rng);
    Tensor<D> mask({1, 4, 4});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = u(rng) < 0.4 ? 1.0 : 0.0;
    run("masked_l2_loss", {rand_t({1, 4, 4, 2}, rng)},
        [target, mask](Tape<D>& g, std::vector<Var<D>>& v) {
          return masked_l2_loss(g, v[0], target, mask, 0.1, 1.0);
        });
  }
  if (include_end_to_end)
    entries.push_back({"total_loss_end_to_end", check_end_to_end_loss(h, tol, rng)});
  return entries;
}

namespace {

// End-to-end check on a 24x16 toy configuration: the whole network plus the
// grid loss, differentiated with respect to every trainable parameter.
FdReport check_end_to_end_loss(double h, double tol, std::mt19937& rng) {
  RasterConfig rc;
  rc.height_px = 24;
  rc.width_px = 16;
  rc.resolution = 1.0;
  rc.anchor_h = 18;
  rc.anchor_w = 8;
  rc.num_past = 2;
  rc.num_future = 3;
  rc.num_types = 2;
  rc.num_goals = 2;
  rc.traj_steps = 3;

  EnvConfig env;
  env.semantic_layers = {"drivable", "lane"};
  env.centerline_orientation = true;

  ModelConfig mc;
  mc.pyramid_widths = {4, 6, 8, 10};
  mc.deform_channels = 8;
  mc.split_width = 4;
  mc.agent_width = 6;
  mc.bifpn_depth = 1;
  mc.dropout = 0.0;  // checked separately; keeps f deterministic

  LossConfig lc;
  lc.type_weights = {0.25, 0.25};

  ScenarioSpec spec;
  spec.kind = "straight";
  spec.min_agents = 2;
  spec.max_agents = 2;
  spec.min_speed_mps = 2.0;
  spec.max_speed_mps = 4.0;
  const SceneSample scene = generate_scene(spec, rc, 11);

  RunConfig cfg;
  cfg.raster = rc;
  cfg.env = env;
  cfg.model = mc;
  cfg.loss = lc;
  PreparedBatch batch = prepare_batch({&scene}, cfg);

  ModelInputs<D> inputs;
  inputs.objects = batch.inputs.objects.cast<D>();
  inputs.environment = batch.inputs.environment.cast<D>();
  inputs.agent_sample_index = batch.inputs.agent_sample_index;
  for (const auto& masks : batch.inputs.agent_masks) {
    std::array<Tensor<D>, kPyramidLevels> cast;
    for (int l = 0; l < kPyramidLevels; ++l)
      cast[static_cast<size_t>(l)] = masks[static_cast<size_t>(l)].cast<D>();
    inputs.agent_masks.push_back(std::move(cast));
  }

  std::vector<HeadTargets<D>> scene_targets;
  std::vector<const HeadGroundTruth*> gt_ptrs;
  const SceneGroundTruth scene_gt = render_gt(scene, rc, lc.sigma_g);
  for (const auto& gt : scene_gt.per_type) scene_targets.push_back(stack_head_targets<D>({&gt}));
  const AgentGroundTruth agent_gt = render_agent_gt(scene, rc, lc.sigma_g);
  std::vector<HeadTargets<D>> agent_targets;
  for (size_t a = 0; a < batch.inputs.agent_sample_index.size(); ++a)
    agent_targets.push_back(stack_head_targets<D>({&agent_gt.per_agent[a]}));

  CaspnetModel<D> model(mc, rc, env);
  ParamStore<D> store;
  model.build(store, 5);

  auto evaluate = [&](ParamStore<D>& s, bool with_grad) {
    Tape<D> tape(with_grad);
    ParamBinder<D> binder(tape, s);
    std::mt19937 dummy(1);
    ForwardResult<D> fwd = model.forward(tape, binder, inputs, /*training=*/true, dummy);
    auto [loss, bd] = total_loss(tape, fwd.scene_heads, scene_targets, fwd.agent_head,
                                 agent_targets, 1, rc.num_future, lc);
    (void)bd;
    if (with_grad) {
      tape.backward(loss);
      binder.flush_gradients();
    }
    return static_cast<double>(loss->value[0]);
  };

  const std::vector<double> theta0 = store.trainable_to_vector();
  auto f = [&](const std::vector<double>& theta) {
    ParamStore<D> copy = store;
    copy.trainable_from_vector(theta);
    return evaluate(copy, false);
  };
  ParamStore<D> grad_store = store;
  grad_store.zero_grads();
  evaluate(grad_store, true);
  const std::vector<double> analytic = grad_store.grads_to_vector();
  return finite_diff_check(f, theta0, analytic, h, tol, 120, rng);
}

}  // namespace

}  // namespace caspgrid
