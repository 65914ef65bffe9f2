#include <cmath>

#include "caspgrid/ops.hpp"

namespace caspgrid {

template <typename T>
Var<T> batchnorm2d(Tape<T>& g, Var<T> x, Var<T> gamma, Var<T> beta,
                   Tensor<T>* running_mean, Tensor<T>* running_var, bool training,
                   double momentum, double eps) {
  if (x->value.rank() != 4) throw_error(ErrorKind::Shape, "batchnorm2d: expects [N,H,W,C]");
  const int64_t c = x->value.dim(3);
  const int64_t m = x->value.numel() / c;
  if (gamma->value.numel() != c || beta->value.numel() != c)
    throw_error(ErrorKind::Shape, "batchnorm2d: gamma/beta extent mismatch");

  auto out = g.leaf(Tensor<T>(x->value.dims()),
                    any_requires_grad<T>({&x, &gamma, &beta}));
  auto mean = std::make_shared<Tensor<T>>(std::vector<int64_t>{c});
  auto istd = std::make_shared<Tensor<T>>(std::vector<int64_t>{c});

  if (training) {
    Tensor<T> var({c});
    for (int64_t r = 0; r < m; ++r) {
      const T* xr = x->value.data() + r * c;
      for (int64_t ch = 0; ch < c; ++ch) (*mean)[ch] += xr[ch];
    }
    for (int64_t ch = 0; ch < c; ++ch) (*mean)[ch] /= static_cast<T>(m);
    for (int64_t r = 0; r < m; ++r) {
      const T* xr = x->value.data() + r * c;
      for (int64_t ch = 0; ch < c; ++ch) {
        const T d = xr[ch] - (*mean)[ch];
        var[ch] += d * d;
      }
    }
    for (int64_t ch = 0; ch < c; ++ch) var[ch] /= static_cast<T>(m);
    for (int64_t ch = 0; ch < c; ++ch)
      (*istd)[ch] = T(1) / std::sqrt(var[ch] + static_cast<T>(eps));
    if (running_mean && running_var) {
      const T mom = static_cast<T>(momentum);
      const T unbias = m > 1 ? static_cast<T>(m) / static_cast<T>(m - 1) : T(1);
      for (int64_t ch = 0; ch < c; ++ch) {
        (*running_mean)[ch] = (T(1) - mom) * (*running_mean)[ch] + mom * (*mean)[ch];
        (*running_var)[ch] = (T(1) - mom) * (*running_var)[ch] + mom * var[ch] * unbias;
      }
    }
  } else {
    if (!running_mean || !running_var)
      throw_error(ErrorKind::Config, "batchnorm2d: eval mode needs running statistics");
    for (int64_t ch = 0; ch < c; ++ch) {
      (*mean)[ch] = (*running_mean)[ch];
      (*istd)[ch] = T(1) / std::sqrt((*running_var)[ch] + static_cast<T>(eps));
    }
  }

  for (int64_t r = 0; r < m; ++r) {
    const T* xr = x->value.data() + r * c;
    T* yr = out->value.data() + r * c;
    for (int64_t ch = 0; ch < c; ++ch)
      yr[ch] = gamma->value[ch] * (xr[ch] - (*mean)[ch]) * (*istd)[ch] + beta->value[ch];
  }

  if (out->requires_grad)
    g.record([x, gamma, beta, out, mean, istd, m, c, training] {
      if (!out->has_grad()) return;
      // Per-channel reductions of dy and dy*xhat serve all three gradients.
      Tensor<T> sum_dy({c}), sum_dy_xhat({c});
      for (int64_t r = 0; r < m; ++r) {
        const T* dyr = out->grad.data() + r * c;
        const T* xr = x->value.data() + r * c;
        for (int64_t ch = 0; ch < c; ++ch) {
          const T xhat = (xr[ch] - (*mean)[ch]) * (*istd)[ch];
          sum_dy[ch] += dyr[ch];
          sum_dy_xhat[ch] += dyr[ch] * xhat;
        }
      }
      if (beta->requires_grad) {
        beta->ensure_grad();
        for (int64_t ch = 0; ch < c; ++ch) beta->grad[ch] += sum_dy[ch];
      }
      if (gamma->requires_grad) {
        gamma->ensure_grad();
        for (int64_t ch = 0; ch < c; ++ch) gamma->grad[ch] += sum_dy_xhat[ch];
      }
      if (x->requires_grad) {
        x->ensure_grad();
        const T inv_m = T(1) / static_cast<T>(m);
        for (int64_t r = 0; r < m; ++r) {
          const T* dyr = out->grad.data() + r * c;
          const T* xr = x->value.data() + r * c;
          T* dxr = x->grad.data() + r * c;
          for (int64_t ch = 0; ch < c; ++ch) {
            const T sc = gamma->value[ch] * (*istd)[ch];
            if (training) {
              const T xhat = (xr[ch] - (*mean)[ch]) * (*istd)[ch];
              dxr[ch] += sc * (dyr[ch] - inv_m * sum_dy[ch] -
                               inv_m * xhat * sum_dy_xhat[ch]);
            } else {
              dxr[ch] += sc * dyr[ch];  // running stats are constants
            }
          }
        }
      }
    });
  return out;
}

template <typename T>
Var<T> dropout(Tape<T>& g, Var<T> x, double rate, bool training, std::mt19937& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw_error(ErrorKind::Config, "dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  auto out = g.leaf(Tensor<T>(x->value.dims()), x->requires_grad);
  const T inv_keep = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<Tensor<T>>(x->value.dims());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int64_t n = x->value.numel();
  for (int64_t i = 0; i < n; ++i) {
    const T mk = u(rng) < rate ? T(0) : inv_keep;
    (*mask)[i] = mk;
    out->value[i] = x->value[i] * mk;
  }
  if (out->requires_grad)
    g.record([x, out, mask, n] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (int64_t i = 0; i < n; ++i) x->grad[i] += out->grad[i] * (*mask)[i];
    });
  return out;
}

#define CASPGRID_INSTANTIATE(T)                                                     \
  template Var<T> batchnorm2d(Tape<T>&, Var<T>, Var<T>, Var<T>, Tensor<T>*,         \
                              Tensor<T>*, bool, double, double);                    \
  template Var<T> dropout(Tape<T>&, Var<T>, double, bool, std::mt19937&);

CASPGRID_INSTANTIATE(float)
CASPGRID_INSTANTIATE(double)
#undef CASPGRID_INSTANTIATE

}  // namespace caspgrid
