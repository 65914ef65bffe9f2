#include "caspgrid/losses.hpp"

#include <cmath>

#include "caspgrid/ops.hpp"

namespace caspgrid {

namespace {

constexpr double kClampEps = 1e-7;

// pow with fast paths for the conventional exponents.
template <typename T>
inline T powt(T base, double e) {
  if (e == 2.0) return base * base;
  if (e == 4.0) {
    const T b2 = base * base;
    return b2 * b2;
  }
  if (e == 1.0) return base;
  if (e == 0.0) return T(1);
  return static_cast<T>(std::pow(static_cast<double>(base), e));
}

}  // namespace

template <typename T>
Var<T> focal_occupancy_loss(Tape<T>& g, Var<T> p, const Tensor<T>& y,
                            const std::vector<int>& counts, const LossConfig& cfg,
                            double norm_div) {
  if (y.rank() != 3)
    throw_error(ErrorKind::Shape, "focal loss: targets must be [K, H, W]");
  if (p->value.numel() != y.numel())
    throw_error(ErrorKind::Shape, "focal loss: prediction/target size mismatch");
  const int64_t k = y.dim(0);
  const int64_t cells = y.dim(1) * y.dim(2);
  if (static_cast<int64_t>(counts.size()) != k)
    throw_error(ErrorKind::Shape, "focal loss: one count per slice required");

  const T alpha = static_cast<T>(cfg.alpha);
  const T one_m_alpha = static_cast<T>(1.0 - cfg.alpha);
  const T lo = static_cast<T>(kClampEps), hi = static_cast<T>(1.0 - kClampEps);

  auto out = g.leaf(Tensor<T>({1}), p->requires_grad);
  double acc = 0.0;
  for (int64_t s = 0; s < k; ++s) {
    const T* ps = p->value.data() + s * cells;
    const T* ys = y.data() + s * cells;
    T slice = T(0);
    for (int64_t i = 0; i < cells; ++i) {
      const T pc = std::min(std::max(ps[i], lo), hi);
      if (ys[i] == T(1))
        slice += alpha * powt(T(1) - pc, cfg.gamma) * std::log(pc);
      else
        slice += one_m_alpha * powt(T(1) - ys[i], cfg.beta) * powt(pc, cfg.gamma) *
                 std::log(T(1) - pc);
    }
    acc += -static_cast<double>(slice) / (counts[static_cast<size_t>(s)] + 1.0);
  }
  out->value[0] = static_cast<T>(acc / norm_div);

  if (out->requires_grad) {
    auto yp = std::make_shared<Tensor<T>>(y);
    auto cp = std::make_shared<std::vector<int>>(counts);
    g.record([p, out, yp, cp, k, cells, alpha, one_m_alpha, lo, hi,
              gamma = cfg.gamma, beta = cfg.beta, norm_div] {
      if (!out->has_grad()) return;
      p->ensure_grad();
      const T go = out->grad[0];
      for (int64_t s = 0; s < k; ++s) {
        const T* ps = p->value.data() + s * cells;
        const T* ys = yp->data() + s * cells;
        T* gp = p->grad.data() + s * cells;
        const T sc = go * static_cast<T>(
                              -1.0 / (((*cp)[static_cast<size_t>(s)] + 1.0) * norm_div));
        for (int64_t i = 0; i < cells; ++i) {
          const T raw = ps[i];
          if (raw < lo || raw > hi) continue;  // clamped: no gradient
          const T pc = raw;
          T d;
          if (ys[i] == T(1)) {
            const T q = T(1) - pc;
            d = alpha * (powt(q, gamma) / pc -
                         static_cast<T>(gamma) * powt(q, gamma - 1.0) * std::log(pc));
          } else {
            const T halo = powt(T(1) - ys[i], beta);
            d = one_m_alpha * halo *
                (static_cast<T>(gamma) * powt(pc, gamma - 1.0) * std::log(T(1) - pc) -
                 powt(pc, gamma) / (T(1) - pc));
          }
          gp[i] += sc * d;
        }
      }
    });
  }
  return out;
}

template <typename T>
Var<T> masked_l2_loss(Tape<T>& g, Var<T> pred, const Tensor<T>& target,
                      const Tensor<T>& mask, double w_f, double norm_div) {
  if (pred->value.numel() != target.numel())
    throw_error(ErrorKind::Shape, "masked l2: prediction/target size mismatch");
  if (target.numel() != mask.numel() * 2)
    throw_error(ErrorKind::Shape, "masked l2: expects 2 feature channels per cell");
  const int64_t cells = mask.numel();
  auto out = g.leaf(Tensor<T>({1}), pred->requires_grad);
  double acc = 0.0;
  for (int64_t i = 0; i < cells; ++i) {
    if (mask[i] == T(0)) continue;
    const T dh = pred->value[2 * i] - target[2 * i];
    const T dw = pred->value[2 * i + 1] - target[2 * i + 1];
    acc += static_cast<double>(dh * dh + dw * dw);
  }
  out->value[0] = static_cast<T>(w_f * acc / norm_div);

  if (out->requires_grad) {
    auto tp = std::make_shared<Tensor<T>>(target);
    auto mp = std::make_shared<Tensor<T>>(mask);
    g.record([pred, out, tp, mp, cells, w_f, norm_div] {
      if (!out->has_grad()) return;
      pred->ensure_grad();
      const T sc = out->grad[0] * static_cast<T>(2.0 * w_f / norm_div);
      for (int64_t i = 0; i < cells; ++i) {
        if ((*mp)[i] == T(0)) continue;
        pred->grad[2 * i] += sc * (pred->value[2 * i] - (*tp)[2 * i]);
        pred->grad[2 * i + 1] += sc * (pred->value[2 * i + 1] - (*tp)[2 * i + 1]);
      }
    });
  }
  return out;
}

template <typename T>
HeadTargets<T> stack_head_targets(const std::vector<const HeadGroundTruth*>& gts) {
  if (gts.empty()) throw_error(ErrorKind::Shape, "stack_head_targets: no inputs");
  const int64_t t = gts[0]->occupancy.dim(0);
  const int64_t h = gts[0]->occupancy.dim(1);
  const int64_t w = gts[0]->occupancy.dim(2);
  const int64_t k = static_cast<int64_t>(gts.size());
  HeadTargets<T> out;
  out.occupancy.assign(static_cast<size_t>(t), Tensor<T>({k, h, w}));
  out.peaks.assign(static_cast<size_t>(t), Tensor<T>({k, h, w}));
  out.offsets.assign(static_cast<size_t>(t), Tensor<T>({k, h, w, 2}));
  out.velocities.assign(static_cast<size_t>(t), Tensor<T>({k, h, w, 2}));
  out.counts.assign(static_cast<size_t>(t), std::vector<int>(static_cast<size_t>(k)));
  for (int64_t s = 0; s < k; ++s) {
    const HeadGroundTruth& gt = *gts[static_cast<size_t>(s)];
    if (gt.occupancy.dims() != gts[0]->occupancy.dims())
      throw_error(ErrorKind::Shape, "stack_head_targets: inconsistent GT shapes");
    const int64_t cells = h * w;
    for (int64_t ti = 0; ti < t; ++ti) {
      for (int64_t i = 0; i < cells; ++i) {
        out.occupancy[static_cast<size_t>(ti)][s * cells + i] =
            static_cast<T>(gt.occupancy[ti * cells + i]);
        out.peaks[static_cast<size_t>(ti)][s * cells + i] =
            static_cast<T>(gt.peak_mask[ti * cells + i]);
      }
      for (int64_t i = 0; i < cells * 2; ++i) {
        out.offsets[static_cast<size_t>(ti)][s * cells * 2 + i] =
            static_cast<T>(gt.offsets[ti * cells * 2 + i]);
        out.velocities[static_cast<size_t>(ti)][s * cells * 2 + i] =
            static_cast<T>(gt.velocities[ti * cells * 2 + i]);
      }
      out.counts[static_cast<size_t>(ti)][static_cast<size_t>(s)] =
          gt.counts[static_cast<size_t>(ti)];
    }
  }
  return out;
}

namespace {

template <typename T>
double term_value(const Var<T>& v, const std::string& name) {
  const double x = static_cast<double>(v->value[0]);
  if (!std::isfinite(x))
    throw_error(ErrorKind::Numerical, "loss term " + name + " is non-finite");
  return x;
}

}  // namespace

template <typename T>
std::pair<Var<T>, LossBreakdown> total_loss(
    Tape<T>& g, const std::vector<Var<T>>& scene_heads,
    const std::vector<HeadTargets<T>>& scene_targets, Var<T> agent_head,
    const std::vector<HeadTargets<T>>& agent_targets, int64_t batch_size,
    int num_future, const LossConfig& cfg) {
  cfg.validate(static_cast<int>(scene_heads.size()));
  if (scene_heads.size() != scene_targets.size())
    throw_error(ErrorKind::Shape, "total_loss: one target set per scene head");
  const double n = static_cast<double>(batch_size);
  LossBreakdown bd;
  Var<T> scene_sum;
  Var<T> agent_sum;

  auto add_head_terms = [&](Var<T> head, const HeadTargets<T>& tg,
                            const std::string& label, double weight, Var<T>& acc) {
    Var<T> head_sum;
    for (int t = 0; t < num_future; ++t) {
      auto p_occ = slice_last(g, head, static_cast<int64_t>(t) * 5, 1);
      auto l_occ = focal_occupancy_loss(g, p_occ, tg.occupancy[static_cast<size_t>(t)],
                                        tg.counts[static_cast<size_t>(t)], cfg, n);
      auto p_off = slice_last(g, head, static_cast<int64_t>(t) * 5 + 1, 2);
      auto l_off = masked_l2_loss(g, p_off, tg.offsets[static_cast<size_t>(t)],
                                  tg.peaks[static_cast<size_t>(t)], cfg.w_offset, n);
      auto p_vel = slice_last(g, head, static_cast<int64_t>(t) * 5 + 3, 2);
      auto l_vel = masked_l2_loss(g, p_vel, tg.velocities[static_cast<size_t>(t)],
                                  tg.peaks[static_cast<size_t>(t)], cfg.w_velocity, n);
      const std::string base = label + ".t" + std::to_string(t);
      bd.terms.push_back({base + ".occupancy", term_value(l_occ, base)});
      bd.terms.push_back({base + ".offset", term_value(l_off, base)});
      bd.terms.push_back({base + ".velocity", term_value(l_vel, base)});
      auto step = add(g, add(g, l_occ, l_off), l_vel);
      head_sum = head_sum ? add(g, head_sum, step) : step;
    }
    auto weighted = scale(g, head_sum, weight);
    acc = acc ? add(g, acc, weighted) : weighted;
  };

  for (size_t c = 0; c < scene_heads.size(); ++c)
    add_head_terms(scene_heads[c], scene_targets[c], "scene.type" + std::to_string(c),
                   cfg.type_weights[c], scene_sum);

  if (agent_head) {
    for (size_t a = 0; a < agent_targets.size(); ++a) {
      auto row = gather_rows(g, agent_head, {static_cast<int64_t>(a)});
      add_head_terms(row, agent_targets[a], "agent." + std::to_string(a), 1.0,
                     agent_sum);
    }
  } else if (!agent_targets.empty()) {
    throw_error(ErrorKind::Shape, "total_loss: agent targets without agent head");
  }

  const double inv_t = 1.0 / static_cast<double>(num_future);
  Var<T> total;
  if (scene_sum) {
    auto scene_term = scale(g, scene_sum, inv_t);
    bd.scene = term_value(scene_term, "scene");
    total = scene_term;
  }
  if (agent_sum) {
    auto agent_term = scale(g, agent_sum, cfg.w_agents * inv_t);
    bd.agents = term_value(agent_term, "agents");
    total = total ? add(g, total, agent_term) : agent_term;
  }
  if (!total) total = g.leaf(Tensor<T>({1}), false);
  bd.total = static_cast<double>(total->value[0]);
  if (!std::isfinite(bd.total))
    throw_error(ErrorKind::Numerical, "total loss is non-finite");
  return {total, bd};
}

#define CASPGRID_INSTANTIATE(T)                                                        \
  template Var<T> focal_occupancy_loss(Tape<T>&, Var<T>, const Tensor<T>&,             \
                                       const std::vector<int>&, const LossConfig&,     \
                                       double);                                        \
  template Var<T> masked_l2_loss(Tape<T>&, Var<T>, const Tensor<T>&, const Tensor<T>&, \
                                 double, double);                                      \
  template HeadTargets<T> stack_head_targets(                                          \
      const std::vector<const HeadGroundTruth*>&);                                     \
  template std::pair<Var<T>, LossBreakdown> total_loss(                                \
      Tape<T>&, const std::vector<Var<T>>&, const std::vector<HeadTargets<T>>&,        \
      Var<T>, const std::vector<HeadTargets<T>>&, int64_t, int, const LossConfig&);

CASPGRID_INSTANTIATE(float)
CASPGRID_INSTANTIATE(double)
#undef CASPGRID_INSTANTIATE

}  // namespace caspgrid
