#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "caspgrid/ops.hpp"
#include "caspgrid/params.hpp"
#include "caspgrid/raster.hpp"

namespace caspgrid {

inline constexpr int kPyramidLevels = 4;

struct ModelConfig {
  std::array<int, kPyramidLevels> pyramid_widths{16, 32, 64, 128};
  int deform_channels = 64;  // per-level width after the deformable block
  int split_width = 24;      // per-type group width; BiFPN runs at C*split_width
  int agent_width = 24;      // agent decoder BiFPN / ladder width
  int kernel_size = 3;
  int bifpn_depth = 1;
  double dropout = 0.1;
  double bn_momentum = 0.1;
  int max_agents = 8;

  void validate(const RasterConfig& rc) const {
    for (int w : pyramid_widths)
      if (w < 1) throw_error(ErrorKind::Config, "model: pyramid widths must be >= 1");
    if (deform_channels < 1 || split_width < 1 || agent_width < 1)
      throw_error(ErrorKind::Config, "model: channel widths must be >= 1");
    if (kernel_size % 2 != 1 || kernel_size < 1)
      throw_error(ErrorKind::Config, "model: kernel size must be odd");
    if (bifpn_depth < 1) throw_error(ErrorKind::Config, "model: bifpn depth must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
      throw_error(ErrorKind::Config, "model: dropout must be in [0, 1)");
    if (rc.height_px % 8 || rc.width_px % 8)
      throw_error(ErrorKind::Config, "model: grid extents must be divisible by 8");
    if (rc.num_past < 1) throw_error(ErrorKind::Config, "model: M must be >= 1");
  }
};

/// Rasterized, batched model inputs. Agent instances across the batch are
/// flattened: instance i belongs to batch sample agent_sample_index[i] and
/// carries one conditioning mask per pyramid level.
template <typename T>
struct ModelInputs {
  Tensor<T> objects;      // [N, M, H, W, F_in]
  Tensor<T> environment;  // [N, H, W, K_env]
  std::vector<int64_t> agent_sample_index;
  std::vector<std::array<Tensor<T>, kPyramidLevels>> agent_masks;
};

/// Raw differentiable head outputs, post-activation. Per-pixel channel layout
/// is t*5 + {occupancy, offset_h, offset_w, velocity_h, velocity_w}.
template <typename T>
struct ForwardResult {
  std::vector<Var<T>> scene_heads;  // C entries, each [N, H, W, T*5]
  Var<T> agent_head;                // [sum(A), H, W, T*5]; null when no instances
};

struct SceneOutput {
  GridTensor occupancy;   // [C, T, H, W], post-sigmoid
  GridTensor offsets;     // [C, T, H, W, 2], in (0, 1)
  GridTensor velocities;  // [C, T, H, W, 2], cells per step
};

struct AgentOutput {
  GridTensor occupancy;   // [A, T, H, W]
  GridTensor offsets;     // [A, T, H, W, 2]
  GridTensor velocities;  // [A, T, H, W, 2]
};

template <typename T>
class CaspnetModel {
 public:
  CaspnetModel(ModelConfig mc, RasterConfig rc, EnvConfig env);

  /// Registers every parameter and buffer into `store` and initializes them.
  void build(ParamStore<T>& store, uint32_t seed);

  /// Full pass: object encoder, environment encoder, per-level fusion, scene
  /// and agent decoders. `training` switches batchnorm/dropout behavior.
  ForwardResult<T> forward(Tape<T>& tape, ParamBinder<T>& params,
                           const ModelInputs<T>& in, bool training,
                           std::mt19937& rng) const;

  const ModelConfig& config() const { return mc_; }
  const RasterConfig& raster() const { return rc_; }
  int env_channels() const { return env_channels_; }
  int input_channels() const { return object_feature_channels(rc_); }

  SceneOutput scene_output_for_sample(const ForwardResult<T>& r, int64_t n) const;
  AgentOutput agent_output_for_sample(const ForwardResult<T>& r,
                                      const ModelInputs<T>& in, int64_t n) const;

 private:
  struct Pyramid {
    std::array<Var<T>, kPyramidLevels> level;
  };

  Var<T> conv_block(Tape<T>& g, ParamBinder<T>& p, Var<T> x, const std::string& name,
                    bool training, std::mt19937& rng, bool use_dropout) const;
  Pyramid fpn_encode(Tape<T>& g, ParamBinder<T>& p, Var<T> x,
                     const std::string& prefix, bool training, std::mt19937& rng) const;
  Pyramid object_encoder(Tape<T>& g, ParamBinder<T>& p, Var<T> objects, bool training,
                         std::mt19937& rng) const;
  Pyramid environment_encoder(Tape<T>& g, ParamBinder<T>& p, Var<T> env, bool training,
                              std::mt19937& rng) const;
  Pyramid fuse_features(Tape<T>& g, const Pyramid& obj, const Pyramid& env) const;
  Pyramid deform_block(Tape<T>& g, ParamBinder<T>& p, const Pyramid& fused,
                       const std::string& prefix, bool training, std::mt19937& rng) const;
  Pyramid bifpn(Tape<T>& g, ParamBinder<T>& p, Pyramid levels, const std::string& prefix,
                bool training, std::mt19937& rng) const;
  Var<T> grid_decoder(Tape<T>& g, ParamBinder<T>& p,
                      const std::array<Var<T>, kPyramidLevels>& groups,
                      const std::string& prefix, bool training, std::mt19937& rng) const;

  void register_conv(ParamStore<T>& s, const std::string& name, int k, int cin, int cout,
                     bool zero_init = false);
  void register_bn(ParamStore<T>& s, const std::string& name, int c);
  void register_block(ParamStore<T>& s, const std::string& name, int k, int cin, int cout);
  void register_bifpn(ParamStore<T>& s, const std::string& prefix, int width);
  void register_ladder(ParamStore<T>& s, const std::string& prefix, int width,
                       int head_out);

  ModelConfig mc_;
  RasterConfig rc_;
  EnvConfig env_;
  int env_channels_ = 0;
  std::mt19937* init_rng_ = nullptr;  // only valid inside build()
};

/// Arithmetic mean of scene outputs from independently trained models.
SceneOutput ensemble_average(const std::vector<SceneOutput>& outputs);

}  // namespace caspgrid
