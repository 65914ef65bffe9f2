#include "caspgrid/model.hpp"

#include <cmath>

namespace caspgrid {

template <typename T>
CaspnetModel<T>::CaspnetModel(ModelConfig mc, RasterConfig rc, EnvConfig env)
    : mc_(mc), rc_(rc), env_(env), env_channels_(env.num_channels()) {
  rc_.validate();
  mc_.validate(rc_);
}

// ---- registration -----------------------------------------------------------

template <typename T>
void CaspnetModel<T>::register_conv(ParamStore<T>& s, const std::string& name, int k,
                                    int cin, int cout, bool zero_init) {
  auto& w = s.add(name + ".weight", {k, k, cin, cout});
  if (!zero_init) init_fan_in_uniform(w.value, *init_rng_);
  s.add(name + ".bias", {cout});
}

template <typename T>
void CaspnetModel<T>::register_bn(ParamStore<T>& s, const std::string& name, int c) {
  auto& gamma = s.add(name + ".gamma", {c});
  gamma.value.fill(T(1));
  s.add(name + ".beta", {c});
  s.add(name + ".running_mean", {c}, /*trainable=*/false);
  auto& rv = s.add(name + ".running_var", {c}, /*trainable=*/false);
  rv.value.fill(T(1));
}

template <typename T>
void CaspnetModel<T>::register_block(ParamStore<T>& s, const std::string& name, int k,
                                     int cin, int cout) {
  register_conv(s, name + ".conv", k, cin, cout);
  register_bn(s, name + ".bn", cout);
}

template <typename T>
void CaspnetModel<T>::register_bifpn(ParamStore<T>& s, const std::string& prefix,
                                     int width) {
  const int k = mc_.kernel_size;
  for (int d = 0; d < mc_.bifpn_depth; ++d) {
    const std::string dp = prefix + ".d" + std::to_string(d);
    for (int l = 2; l >= 0; --l) {
      const std::string n = dp + ".td" + std::to_string(l);
      auto& lam = s.add(n + ".lambda", {2});
      lam.value.fill(T(1));
      register_block(s, n, k, width, width);
    }
    for (int l = 1; l <= 3; ++l) {
      const std::string n = dp + ".bu" + std::to_string(l);
      auto& lam = s.add(n + ".lambda", {l == 3 ? 2 : 3});
      lam.value.fill(T(1));
      register_block(s, n, k, width, width);
    }
  }
}

template <typename T>
void CaspnetModel<T>::register_ladder(ParamStore<T>& s, const std::string& prefix,
                                      int width, int head_out) {
  const int k = mc_.kernel_size;
  register_block(s, prefix + ".ladder3", k, width, width);
  for (int l = 2; l >= 0; --l)
    register_block(s, prefix + ".ladder" + std::to_string(l), k, 2 * width, width);
  register_conv(s, prefix + ".head", 1, width, head_out);
}

template <typename T>
void CaspnetModel<T>::build(ParamStore<T>& store, uint32_t seed) {
  std::mt19937 rng(seed);
  init_rng_ = &rng;
  const int k = mc_.kernel_size;
  const int taps = k * k;
  const auto& w = mc_.pyramid_widths;
  const int c = rc_.num_types;
  const int head_out = rc_.num_future * 5;

  // Object encoder: one FPN shared over the M frames, plus a ConvGRU per
  // level for temporal fusion. Environment encoder: a plain FPN.
  const int in_c = input_channels();
  for (int l = 0; l < kPyramidLevels; ++l)
    register_block(store, "object_encoder.level" + std::to_string(l), k,
                   l == 0 ? in_c : w[static_cast<size_t>(l - 1)],
                   w[static_cast<size_t>(l)]);
  for (int l = 0; l < kPyramidLevels; ++l) {
    const std::string n = "object_encoder.gru.level" + std::to_string(l);
    const int wl = w[static_cast<size_t>(l)];
    for (const char* gate : {"z", "r", "h"}) {
      auto& gw = store.add(n + ".w" + gate, {k, k, 2 * wl, wl});
      init_fan_in_uniform(gw.value, rng);
      store.add(n + ".b" + gate, {wl});
    }
  }
  for (int l = 0; l < kPyramidLevels; ++l)
    register_block(store, "environment_encoder.level" + std::to_string(l), k,
                   l == 0 ? env_channels_ : w[static_cast<size_t>(l - 1)],
                   w[static_cast<size_t>(l)]);

  auto register_decoder_front = [&](const std::string& prefix, int proj_in_extra,
                                    int proj_out) {
    for (int l = 0; l < kPyramidLevels; ++l) {
      const std::string n = prefix + ".level" + std::to_string(l);
      const int fused_c = 2 * w[static_cast<size_t>(l)];
      // Zero-started offset/modulation predictor: the deformable block
      // degenerates to a plain convolution at initialization.
      register_conv(store, n + ".offset_conv", k, fused_c, 3 * taps, /*zero_init=*/true);
      register_conv(store, n + ".deform", k, fused_c, mc_.deform_channels);
      register_bn(store, n + ".bn", mc_.deform_channels);
      register_conv(store, n + ".proj", 1, mc_.deform_channels + proj_in_extra, proj_out);
    }
  };

  register_decoder_front("scene_decoder", 0, c * mc_.split_width);
  register_bifpn(store, "scene_decoder.bifpn", c * mc_.split_width);
  for (int ci = 0; ci < c; ++ci)
    register_ladder(store, "scene_decoder.type" + std::to_string(ci), mc_.split_width,
                    head_out);

  register_decoder_front("agent_decoder", 3, mc_.agent_width);
  register_bifpn(store, "agent_decoder.bifpn", mc_.agent_width);
  register_ladder(store, "agent_decoder", mc_.agent_width, head_out);

  init_rng_ = nullptr;
}

// ---- forward ----------------------------------------------------------------

template <typename T>
Var<T> CaspnetModel<T>::conv_block(Tape<T>& g, ParamBinder<T>& p, Var<T> x,
                                   const std::string& name, bool training,
                                   std::mt19937& rng, bool use_dropout) const {
  const int pad = (mc_.kernel_size - 1) / 2;
  auto y = conv2d(g, x, p(name + ".conv.weight"), p(name + ".conv.bias"), 1, pad);
  y = batchnorm2d(g, y, p(name + ".bn.gamma"), p(name + ".bn.beta"),
                  p.buffer(name + ".bn.running_mean"), p.buffer(name + ".bn.running_var"),
                  training, mc_.bn_momentum);
  y = relu(g, y);
  if (use_dropout && mc_.dropout > 0.0) y = dropout(g, y, mc_.dropout, training, rng);
  return y;
}

template <typename T>
typename CaspnetModel<T>::Pyramid CaspnetModel<T>::fpn_encode(
    Tape<T>& g, ParamBinder<T>& p, Var<T> x, const std::string& prefix, bool training,
    std::mt19937& rng) const {
  Pyramid out;
  Var<T> cur = x;
  for (int l = 0; l < kPyramidLevels; ++l) {
    if (l > 0) cur = maxpool2d(g, cur);
    cur = conv_block(g, p, cur, prefix + ".level" + std::to_string(l), training, rng,
                     /*use_dropout=*/true);
    out.level[static_cast<size_t>(l)] = cur;
  }
  return out;
}

template <typename T>
typename CaspnetModel<T>::Pyramid CaspnetModel<T>::object_encoder(
    Tape<T>& g, ParamBinder<T>& p, Var<T> objects, bool training,
    std::mt19937& rng) const {
  const int64_t m = objects->value.dim(1);
  if (m < 1) throw_error(ErrorKind::Config, "object encoder: M must be >= 1");
  const int pad = (mc_.kernel_size - 1) / 2;
  Pyramid hidden;
  for (int64_t frame = 0; frame < m; ++frame) {
    auto x = select_frame(g, objects, frame);
    Pyramid feats = fpn_encode(g, p, x, "object_encoder", training, rng);
    for (int l = 0; l < kPyramidLevels; ++l) {
      auto& h = hidden.level[static_cast<size_t>(l)];
      if (!h) h = g.leaf(Tensor<T>(feats.level[static_cast<size_t>(l)]->value.dims()));
      const std::string n = "object_encoder.gru.level" + std::to_string(l);
      ConvGruParams<T> gp{p(n + ".wz"), p(n + ".bz"), p(n + ".wr"),
                          p(n + ".br"), p(n + ".wh"), p(n + ".bh")};
      h = conv_gru_step(g, feats.level[static_cast<size_t>(l)], h, gp, pad);
    }
  }
  return hidden;
}

template <typename T>
typename CaspnetModel<T>::Pyramid CaspnetModel<T>::environment_encoder(
    Tape<T>& g, ParamBinder<T>& p, Var<T> env, bool training, std::mt19937& rng) const {
  if (env->value.dims().back() != env_channels_)
    throw_error(ErrorKind::Config,
                "environment encoder: expected " + std::to_string(env_channels_) +
                    " channels, got " + std::to_string(env->value.dims().back()));
  return fpn_encode(g, p, env, "environment_encoder", training, rng);
}

template <typename T>
typename CaspnetModel<T>::Pyramid CaspnetModel<T>::fuse_features(
    Tape<T>& g, const Pyramid& obj, const Pyramid& env) const {
  Pyramid out;
  for (int l = 0; l < kPyramidLevels; ++l)
    out.level[static_cast<size_t>(l)] = concat_last(
        g, {obj.level[static_cast<size_t>(l)], env.level[static_cast<size_t>(l)]});
  return out;
}

template <typename T>
typename CaspnetModel<T>::Pyramid CaspnetModel<T>::deform_block(
    Tape<T>& g, ParamBinder<T>& p, const Pyramid& fused, const std::string& prefix,
    bool training, std::mt19937& rng) const {
  (void)rng;
  const int pad = (mc_.kernel_size - 1) / 2;
  const int taps = mc_.kernel_size * mc_.kernel_size;
  Pyramid out;
  for (int l = 0; l < kPyramidLevels; ++l) {
    const std::string n = prefix + ".level" + std::to_string(l);
    auto x = fused.level[static_cast<size_t>(l)];
    auto om =
        conv2d(g, x, p(n + ".offset_conv.weight"), p(n + ".offset_conv.bias"), 1, pad);
    auto offs = slice_last(g, om, 0, 2 * taps);
    auto mod = sigmoid(g, slice_last(g, om, 2 * taps, taps));
    auto y = deform_conv2d(g, x, p(n + ".deform.weight"), p(n + ".deform.bias"), offs,
                           mod, 1, pad);
    y = batchnorm2d(g, y, p(n + ".bn.gamma"), p(n + ".bn.beta"),
                    p.buffer(n + ".bn.running_mean"), p.buffer(n + ".bn.running_var"),
                    training, mc_.bn_momentum);
    out.level[static_cast<size_t>(l)] = relu(g, y);
  }
  return out;
}

template <typename T>
typename CaspnetModel<T>::Pyramid CaspnetModel<T>::bifpn(Tape<T>& g, ParamBinder<T>& p,
                                                         Pyramid levels,
                                                         const std::string& prefix,
                                                         bool training,
                                                         std::mt19937& rng) const {
  for (int d = 0; d < mc_.bifpn_depth; ++d) {
    const std::string dp = prefix + ".d" + std::to_string(d);
    std::array<Var<T>, kPyramidLevels> td;
    td[3] = levels.level[3];
    for (int l = 2; l >= 0; --l) {
      const std::string n = dp + ".td" + std::to_string(l);
      auto fusedv = fast_normalized_sum<T>(
          g,
          {levels.level[static_cast<size_t>(l)],
           upsample_bilinear2x(g, td[static_cast<size_t>(l + 1)])},
          p(n + ".lambda"));
      td[static_cast<size_t>(l)] =
          conv_block(g, p, fusedv, n, training, rng, /*use_dropout=*/false);
    }
    Pyramid out;
    out.level[0] = td[0];
    for (int l = 1; l <= 3; ++l) {
      const std::string n = dp + ".bu" + std::to_string(l);
      std::vector<Var<T>> inputs;
      inputs.push_back(levels.level[static_cast<size_t>(l)]);
      if (l < 3) inputs.push_back(td[static_cast<size_t>(l)]);
      inputs.push_back(maxpool2d(g, out.level[static_cast<size_t>(l - 1)]));
      auto fusedv = fast_normalized_sum<T>(g, inputs, p(n + ".lambda"));
      out.level[static_cast<size_t>(l)] =
          conv_block(g, p, fusedv, n, training, rng, /*use_dropout=*/false);
    }
    levels = out;
  }
  return levels;
}

template <typename T>
Var<T> CaspnetModel<T>::grid_decoder(Tape<T>& g, ParamBinder<T>& p,
                                     const std::array<Var<T>, kPyramidLevels>& groups,
                                     const std::string& prefix, bool training,
                                     std::mt19937& rng) const {
  auto x = conv_block(g, p, groups[3], prefix + ".ladder3", training, rng, false);
  for (int l = 2; l >= 0; --l) {
    auto up = upsample_bilinear2x(g, x);
    auto cat = concat_last(g, {up, groups[static_cast<size_t>(l)]});
    x = conv_block(g, p, cat, prefix + ".ladder" + std::to_string(l), training, rng,
                   false);
  }
  auto head = conv2d(g, x, p(prefix + ".head.weight"), p(prefix + ".head.bias"), 1, 0);
  return head_activation(g, head);
}

template <typename T>
ForwardResult<T> CaspnetModel<T>::forward(Tape<T>& tape, ParamBinder<T>& params,
                                          const ModelInputs<T>& in, bool training,
                                          std::mt19937& rng) const {
  if (in.objects.rank() != 5 || in.objects.dim(1) != rc_.num_past ||
      in.objects.dim(2) != rc_.height_px || in.objects.dim(3) != rc_.width_px ||
      in.objects.dim(4) != input_channels())
    throw_error(ErrorKind::Config, "model forward: object grid has shape " +
                                       in.objects.shape_string());
  if (in.environment.rank() != 4 || in.environment.dim(0) != in.objects.dim(0) ||
      in.environment.dim(1) != rc_.height_px || in.environment.dim(2) != rc_.width_px)
    throw_error(ErrorKind::Config, "model forward: environment grid has shape " +
                                       in.environment.shape_string());
  if (in.agent_sample_index.size() != in.agent_masks.size())
    throw_error(ErrorKind::Config, "model forward: agent index/mask count mismatch");

  auto objects = tape.leaf(in.objects);
  auto environment = tape.leaf(in.environment);

  Pyramid obj = object_encoder(tape, params, objects, training, rng);
  Pyramid env = environment_encoder(tape, params, environment, training, rng);
  Pyramid fused = fuse_features(tape, obj, env);

  ForwardResult<T> result;

  // Scene decoder: deformable block, projection to C*split_width, BiFPN,
  // channel split, one grid-decoder ladder per object type.
  {
    Pyramid d = deform_block(tape, params, fused, "scene_decoder", training, rng);
    Pyramid proj;
    for (int l = 0; l < kPyramidLevels; ++l) {
      const std::string n = "scene_decoder.level" + std::to_string(l);
      proj.level[static_cast<size_t>(l)] =
          conv2d(tape, d.level[static_cast<size_t>(l)], params(n + ".proj.weight"),
                 params(n + ".proj.bias"), 1, 0);
    }
    Pyramid fusedp = bifpn(tape, params, proj, "scene_decoder.bifpn", training, rng);
    for (int c = 0; c < rc_.num_types; ++c) {
      std::array<Var<T>, kPyramidLevels> groups;
      for (int l = 0; l < kPyramidLevels; ++l)
        groups[static_cast<size_t>(l)] =
            slice_last(tape, fusedp.level[static_cast<size_t>(l)],
                       static_cast<int64_t>(c) * mc_.split_width, mc_.split_width);
      result.scene_heads.push_back(grid_decoder(
          tape, params, groups, "scene_decoder.type" + std::to_string(c), training, rng));
    }
  }

  // Agent decoder: shared encoder features pass through the agent deformable
  // block, get replicated per agent instance, conditioned on the per-level
  // masks, then share one BiFPN + ladder across instances.
  if (!in.agent_sample_index.empty()) {
    Pyramid d = deform_block(tape, params, fused, "agent_decoder", training, rng);
    Pyramid stacked;
    for (int l = 0; l < kPyramidLevels; ++l) {
      auto inst =
          gather_rows(tape, d.level[static_cast<size_t>(l)], in.agent_sample_index);
      const int64_t hl = rc_.height_px >> l, wl = rc_.width_px >> l;
      Tensor<T> masks({static_cast<int64_t>(in.agent_masks.size()), hl, wl, 3});
      for (size_t a = 0; a < in.agent_masks.size(); ++a) {
        const Tensor<T>& src = in.agent_masks[a][static_cast<size_t>(l)];
        if (src.dims() != std::vector<int64_t>{hl, wl, 3})
          throw_error(ErrorKind::MaskUnavailable,
                      "agent mask for instance " + std::to_string(a) +
                          " missing or mis-sized at level " + std::to_string(l));
        std::copy_n(src.data(), src.numel(),
                    masks.data() + static_cast<int64_t>(a) * src.numel());
      }
      auto cat = concat_last(tape, {inst, tape.leaf(std::move(masks))});
      const std::string n = "agent_decoder.level" + std::to_string(l);
      stacked.level[static_cast<size_t>(l)] =
          conv2d(tape, cat, params(n + ".proj.weight"), params(n + ".proj.bias"), 1, 0);
    }
    Pyramid fusedp = bifpn(tape, params, stacked, "agent_decoder.bifpn", training, rng);
    result.agent_head =
        grid_decoder(tape, params, fusedp.level, "agent_decoder", training, rng);
  }
  return result;
}

namespace {

template <typename T>
void copy_head_to_output(const Tensor<T>& head, int64_t row, int64_t out_index,
                         int64_t t_steps, GridTensor& occ, GridTensor& off,
                         GridTensor& vel) {
  const int64_t h = head.dim(1), w = head.dim(2), stride_c = head.dim(3);
  for (int64_t ti = 0; ti < t_steps; ++ti)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        const T* px = head.data() + ((row * h + i) * w + j) * stride_c + ti * 5;
        const int64_t base = ((out_index * t_steps + ti) * h + i) * w + j;
        occ[base] = static_cast<float>(px[0]);
        off[base * 2 + 0] = static_cast<float>(px[1]);
        off[base * 2 + 1] = static_cast<float>(px[2]);
        vel[base * 2 + 0] = static_cast<float>(px[3]);
        vel[base * 2 + 1] = static_cast<float>(px[4]);
      }
}

}  // namespace

template <typename T>
SceneOutput CaspnetModel<T>::scene_output_for_sample(const ForwardResult<T>& r,
                                                     int64_t n) const {
  const int64_t c = static_cast<int64_t>(r.scene_heads.size());
  const int64_t t = rc_.num_future, h = rc_.height_px, w = rc_.width_px;
  SceneOutput out;
  out.occupancy = GridTensor({c, t, h, w});
  out.occupancy.set_axes({"type", "t", "h", "w"});
  out.offsets = GridTensor({c, t, h, w, 2});
  out.velocities = GridTensor({c, t, h, w, 2});
  for (int64_t ci = 0; ci < c; ++ci)
    copy_head_to_output(r.scene_heads[static_cast<size_t>(ci)]->value, n, ci, t,
                        out.occupancy, out.offsets, out.velocities);
  return out;
}

template <typename T>
AgentOutput CaspnetModel<T>::agent_output_for_sample(const ForwardResult<T>& r,
                                                     const ModelInputs<T>& in,
                                                     int64_t n) const {
  std::vector<int64_t> rows;
  for (size_t i = 0; i < in.agent_sample_index.size(); ++i)
    if (in.agent_sample_index[i] == n) rows.push_back(static_cast<int64_t>(i));
  const int64_t a = static_cast<int64_t>(rows.size());
  const int64_t t = rc_.num_future, h = rc_.height_px, w = rc_.width_px;
  AgentOutput out;
  out.occupancy = GridTensor({a, t, h, w});
  out.occupancy.set_axes({"agent", "t", "h", "w"});
  out.offsets = GridTensor({a, t, h, w, 2});
  out.velocities = GridTensor({a, t, h, w, 2});
  for (int64_t ai = 0; ai < a; ++ai)
    copy_head_to_output(r.agent_head->value, rows[static_cast<size_t>(ai)], ai, t,
                        out.occupancy, out.offsets, out.velocities);
  return out;
}

SceneOutput ensemble_average(const std::vector<SceneOutput>& outputs) {
  if (outputs.empty()) throw_error(ErrorKind::Shape, "ensemble_average: no inputs");
  SceneOutput mean = outputs[0];
  for (size_t i = 1; i < outputs.size(); ++i) {
    check_same_dims(outputs[i].occupancy, mean.occupancy, "ensemble_average");
    check_same_dims(outputs[i].offsets, mean.offsets, "ensemble_average");
    check_same_dims(outputs[i].velocities, mean.velocities, "ensemble_average");
    for (int64_t j = 0; j < mean.occupancy.numel(); ++j)
      mean.occupancy[j] += outputs[i].occupancy[j];
    for (int64_t j = 0; j < mean.offsets.numel(); ++j)
      mean.offsets[j] += outputs[i].offsets[j];
    for (int64_t j = 0; j < mean.velocities.numel(); ++j)
      mean.velocities[j] += outputs[i].velocities[j];
  }
  const float inv = 1.0f / static_cast<float>(outputs.size());
  for (int64_t j = 0; j < mean.occupancy.numel(); ++j) mean.occupancy[j] *= inv;
  for (int64_t j = 0; j < mean.offsets.numel(); ++j) mean.offsets[j] *= inv;
  for (int64_t j = 0; j < mean.velocities.numel(); ++j) mean.velocities[j] *= inv;
  return mean;
}

template class CaspnetModel<float>;
template class CaspnetModel<double>;

}  // namespace caspgrid
