#include <cmath>

#include "caspgrid/ops.hpp"

namespace caspgrid {

template <typename T>
Var<T> fast_normalized_sum(Tape<T>& g, std::vector<Var<T>> xs, Var<T> lambda,
                           double eps) {
  if (xs.empty()) throw_error(ErrorKind::Shape, "fast_normalized_sum: no inputs");
  const int64_t k = static_cast<int64_t>(xs.size());
  if (lambda->value.numel() != k)
    throw_error(ErrorKind::Shape, "fast_normalized_sum: lambda extent != input count");
  for (const auto& x : xs) check_same_dims(x->value, xs[0]->value, "fast_normalized_sum");

  bool needs = lambda->requires_grad;
  for (const auto& x : xs) needs = needs || x->requires_grad;
  auto out = g.leaf(Tensor<T>(xs[0]->value.dims()), needs);

  std::vector<T> r(k), wgt(k);
  T denom = static_cast<T>(eps);
  for (int64_t i = 0; i < k; ++i) {
    r[i] = lambda->value[i] > T(0) ? lambda->value[i] : T(0);
    denom += r[i];
  }
  for (int64_t i = 0; i < k; ++i) wgt[i] = r[i] / denom;
  const int64_t n = out->value.numel();
  for (int64_t i = 0; i < k; ++i) {
    const T wi = wgt[i];
    if (wi == T(0)) continue;
    const T* xi = xs[static_cast<size_t>(i)]->value.data();
    T* o = out->value.data();
    for (int64_t j = 0; j < n; ++j) o[j] += wi * xi[j];
  }

  if (out->requires_grad)
    g.record([xs, lambda, out, wgt, denom, k, n] {
      if (!out->has_grad()) return;
      const T* go = out->grad.data();
      // c_i = <dout, x_i> feeds both the lambda gradient terms.
      std::vector<T> cdot(static_cast<size_t>(k), T(0));
      const bool need_lambda = lambda->requires_grad;
      for (int64_t i = 0; i < k; ++i) {
        const auto& x = xs[static_cast<size_t>(i)];
        if (x->requires_grad) {
          x->ensure_grad();
          const T wi = wgt[static_cast<size_t>(i)];
          T* gx = x->grad.data();
          for (int64_t j = 0; j < n; ++j) gx[j] += wi * go[j];
        }
        if (need_lambda) {
          const T* xi = x->value.data();
          T s = T(0);
          for (int64_t j = 0; j < n; ++j) s += go[j] * xi[j];
          cdot[static_cast<size_t>(i)] = s;
        }
      }
      if (need_lambda) {
        lambda->ensure_grad();
        T wc = T(0);
        for (int64_t i = 0; i < k; ++i) wc += wgt[static_cast<size_t>(i)] * cdot[static_cast<size_t>(i)];
        for (int64_t i = 0; i < k; ++i)
          if (lambda->value[i] > T(0))
            lambda->grad[i] += (cdot[static_cast<size_t>(i)] - wc) / denom;
      }
    });
  return out;
}

template <typename T>
Var<T> head_activation(Tape<T>& g, Var<T> x) {
  const int64_t c = x->value.dims().back();
  if (c % 5 != 0)
    throw_error(ErrorKind::Shape, "head_activation: channel count must be T*5");
  auto out = g.leaf(Tensor<T>(x->value.dims()), x->requires_grad);
  const int64_t n = x->value.numel();
  for (int64_t i = 0; i < n; ++i) {
    const int64_t ch = i % c;
    if (ch % 5 < 3)
      out->value[i] = T(1) / (T(1) + std::exp(-x->value[i]));
    else
      out->value[i] = x->value[i];
  }
  if (out->requires_grad)
    g.record([x, out, n, c] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const int64_t ch = i % c;
        if (ch % 5 < 3) {
          const T y = out->value[i];
          x->grad[i] += out->grad[i] * y * (T(1) - y);
        } else {
          x->grad[i] += out->grad[i];
        }
      }
    });
  return out;
}

template <typename T>
Var<T> conv_gru_step(Tape<T>& g, Var<T> x, Var<T> h, const ConvGruParams<T>& p, int pad) {
  if (x->value.rank() != 4 || h->value.rank() != 4 ||
      x->value.dim(0) != h->value.dim(0) || x->value.dim(1) != h->value.dim(1) ||
      x->value.dim(2) != h->value.dim(2))
    throw_error(ErrorKind::Shape, "conv_gru_step: x and h must share N,H,W");
  auto xh = concat_last(g, {x, h});
  auto z = sigmoid(g, conv2d(g, xh, p.wz, p.bz, 1, pad));
  auto r = sigmoid(g, conv2d(g, xh, p.wr, p.br, 1, pad));
  auto xrh = concat_last(g, {x, mul(g, r, h)});
  auto hc = tanh_act(g, conv2d(g, xrh, p.wh, p.bh, 1, pad));
  // h' = (1 - z) * h + z * hc = h + z * (hc - h)
  return add(g, h, mul(g, z, sub(g, hc, h)));
}

#define CASPGRID_INSTANTIATE(T)                                                     \
  template Var<T> fast_normalized_sum(Tape<T>&, std::vector<Var<T>>, Var<T>, double); \
  template Var<T> head_activation(Tape<T>&, Var<T>);                                \
  template Var<T> conv_gru_step(Tape<T>&, Var<T>, Var<T>, const ConvGruParams<T>&, int);

CASPGRID_INSTANTIATE(float)
CASPGRID_INSTANTIATE(double)
#undef CASPGRID_INSTANTIATE

}  // namespace caspgrid
