#include <Eigen/Dense>
#include <cmath>

#include "caspgrid/ops.hpp"

namespace caspgrid {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatRM<T>>;

template <typename T>
void accumulate(Var<T>& v, const Tensor<T>& delta) {
  v->ensure_grad();
  T* g = v->grad.data();
  const T* d = delta.data();
  const int64_t n = delta.numel();
  for (int64_t i = 0; i < n; ++i) g[i] += d[i];
}

template <typename T>
int64_t row_block(const Tensor<T>& t, size_t from_axis) {
  int64_t n = 1;
  for (size_t i = from_axis; i < t.rank(); ++i) n *= t.dim(i);
  return n;
}

}  // namespace

template <typename T>
Var<T> add(Tape<T>& g, Var<T> a, Var<T> b) {
  check_same_dims(a->value, b->value, "add");
  auto out = g.leaf(Tensor<T>(a->value.dims()), any_requires_grad<T>({&a, &b}));
  const int64_t n = out->value.numel();
  for (int64_t i = 0; i < n; ++i) out->value[i] = a->value[i] + b->value[i];
  if (out->requires_grad)
    g.record([a, b, out] {
      if (!out->has_grad()) return;
      if (a->requires_grad) accumulate(const_cast<Var<T>&>(a), out->grad);
      if (b->requires_grad) accumulate(const_cast<Var<T>&>(b), out->grad);
    });
  return out;
}

template <typename T>
Var<T> sub(Tape<T>& g, Var<T> a, Var<T> b) {
  check_same_dims(a->value, b->value, "sub");
  auto out = g.leaf(Tensor<T>(a->value.dims()), any_requires_grad<T>({&a, &b}));
  const int64_t n = out->value.numel();
  for (int64_t i = 0; i < n; ++i) out->value[i] = a->value[i] - b->value[i];
  if (out->requires_grad)
    g.record([a, b, out] {
      if (!out->has_grad()) return;
      if (a->requires_grad) accumulate(const_cast<Var<T>&>(a), out->grad);
      if (b->requires_grad) {
        b->ensure_grad();
        const int64_t n = out->grad.numel();
        for (int64_t i = 0; i < n; ++i) b->grad[i] -= out->grad[i];
      }
    });
  return out;
}

template <typename T>
Var<T> mul(Tape<T>& g, Var<T> a, Var<T> b) {
  check_same_dims(a->value, b->value, "mul");
  auto out = g.leaf(Tensor<T>(a->value.dims()), any_requires_grad<T>({&a, &b}));
  const int64_t n = out->value.numel();
  for (int64_t i = 0; i < n; ++i) out->value[i] = a->value[i] * b->value[i];
  if (out->requires_grad)
    g.record([a, b, out] {
      if (!out->has_grad()) return;
      const int64_t n = out->grad.numel();
      if (a->requires_grad) {
        a->ensure_grad();
        for (int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * b->value[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int64_t i = 0; i < n; ++i) b->grad[i] += out->grad[i] * a->value[i];
      }
    });
  return out;
}

template <typename T>
Var<T> scale(Tape<T>& g, Var<T> a, double c) {
  auto out = g.leaf(Tensor<T>(a->value.dims()), a->requires_grad);
  const T cc = static_cast<T>(c);
  const int64_t n = out->value.numel();
  for (int64_t i = 0; i < n; ++i) out->value[i] = a->value[i] * cc;
  if (out->requires_grad)
    g.record([a, out, cc] {
      if (!out->has_grad()) return;
      a->ensure_grad();
      const int64_t n = out->grad.numel();
      for (int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * cc;
    });
  return out;
}

template <typename T>
Var<T> add_scalar(Tape<T>& g, Var<T> a, double c) {
  auto out = g.leaf(Tensor<T>(a->value.dims()), a->requires_grad);
  const T cc = static_cast<T>(c);
  const int64_t n = out->value.numel();
  for (int64_t i = 0; i < n; ++i) out->value[i] = a->value[i] + cc;
  if (out->requires_grad)
    g.record([a, out] {
      if (!out->has_grad()) return;
      accumulate(const_cast<Var<T>&>(a), out->grad);
    });
  return out;
}

template <typename T>
Var<T> relu(Tape<T>& g, Var<T> x) {
  auto out = g.leaf(Tensor<T>(x->value.dims()), x->requires_grad);
  const int64_t n = out->value.numel();
  for (int64_t i = 0; i < n; ++i)
    out->value[i] = x->value[i] > T(0) ? x->value[i] : T(0);
  if (out->requires_grad)
    g.record([x, out] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      const int64_t n = out->grad.numel();
      for (int64_t i = 0; i < n; ++i)
        if (x->value[i] > T(0)) x->grad[i] += out->grad[i];
    });
  return out;
}

template <typename T>
Var<T> sigmoid(Tape<T>& g, Var<T> x) {
  auto out = g.leaf(Tensor<T>(x->value.dims()), x->requires_grad);
  const int64_t n = out->value.numel();
  for (int64_t i = 0; i < n; ++i)
    out->value[i] = T(1) / (T(1) + std::exp(-x->value[i]));
  if (out->requires_grad)
    g.record([x, out] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      const int64_t n = out->grad.numel();
      for (int64_t i = 0; i < n; ++i) {
        const T y = out->value[i];
        x->grad[i] += out->grad[i] * y * (T(1) - y);
      }
    });
  return out;
}

template <typename T>
Var<T> tanh_act(Tape<T>& g, Var<T> x) {
  auto out = g.leaf(Tensor<T>(x->value.dims()), x->requires_grad);
  const int64_t n = out->value.numel();
  for (int64_t i = 0; i < n; ++i) out->value[i] = std::tanh(x->value[i]);
  if (out->requires_grad)
    g.record([x, out] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      const int64_t n = out->grad.numel();
      for (int64_t i = 0; i < n; ++i) {
        const T y = out->value[i];
        x->grad[i] += out->grad[i] * (T(1) - y * y);
      }
    });
  return out;
}

template <typename T>
Var<T> softmax_last(Tape<T>& g, Var<T> x) {
  if (x->value.rank() < 1) throw_error(ErrorKind::Shape, "softmax: rank 0 input");
  auto out = g.leaf(Tensor<T>(x->value.dims()), x->requires_grad);
  const int64_t c = x->value.dim(x->value.rank() - 1);
  const int64_t rows = x->value.numel() / c;
  for (int64_t r = 0; r < rows; ++r) {
    const T* xi = x->value.data() + r * c;
    T* yo = out->value.data() + r * c;
    T mx = xi[0];
    for (int64_t i = 1; i < c; ++i) mx = std::max(mx, xi[i]);
    T sum = T(0);
    for (int64_t i = 0; i < c; ++i) {
      yo[i] = std::exp(xi[i] - mx);
      sum += yo[i];
    }
    for (int64_t i = 0; i < c; ++i) yo[i] /= sum;
  }
  if (out->requires_grad)
    g.record([x, out, rows, c] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const T* y = out->value.data() + r * c;
        const T* dy = out->grad.data() + r * c;
        T* dx = x->grad.data() + r * c;
        T dot = T(0);
        for (int64_t i = 0; i < c; ++i) dot += y[i] * dy[i];
        for (int64_t i = 0; i < c; ++i) dx[i] += y[i] * (dy[i] - dot);
      }
    });
  return out;
}

template <typename T>
Var<T> sum_all(Tape<T>& g, Var<T> x) {
  auto out = g.leaf(Tensor<T>({1}), x->requires_grad);
  T s = T(0);
  const int64_t n = x->value.numel();
  for (int64_t i = 0; i < n; ++i) s += x->value[i];
  out->value[0] = s;
  if (out->requires_grad)
    g.record([x, out] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      const T go = out->grad[0];
      const int64_t n = x->grad.numel();
      for (int64_t i = 0; i < n; ++i) x->grad[i] += go;
    });
  return out;
}

template <typename T>
Var<T> weighted_sum_all(Tape<T>& g, Var<T> x, Tensor<T> w) {
  check_same_dims(x->value, w, "weighted_sum_all");
  auto out = g.leaf(Tensor<T>({1}), x->requires_grad);
  T s = T(0);
  const int64_t n = x->value.numel();
  for (int64_t i = 0; i < n; ++i) s += x->value[i] * w[i];
  out->value[0] = s;
  if (out->requires_grad) {
    auto wp = std::make_shared<Tensor<T>>(std::move(w));
    g.record([x, out, wp] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      const T go = out->grad[0];
      const int64_t n = x->grad.numel();
      for (int64_t i = 0; i < n; ++i) x->grad[i] += go * (*wp)[i];
    });
  }
  return out;
}

template <typename T>
Var<T> concat_last(Tape<T>& g, const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw_error(ErrorKind::Shape, "concat: no inputs");
  const auto& base = xs[0]->value.dims();
  int64_t total_c = 0;
  bool needs_grad = false;
  for (const auto& x : xs) {
    const auto& d = x->value.dims();
    if (d.size() != base.size())
      throw_error(ErrorKind::Shape, "concat: rank mismatch");
    for (size_t i = 0; i + 1 < d.size(); ++i)
      if (d[i] != base[i]) throw_error(ErrorKind::Shape, "concat: leading dims differ");
    total_c += d.back();
    needs_grad = needs_grad || x->requires_grad;
  }
  std::vector<int64_t> od = base;
  od.back() = total_c;
  auto out = g.leaf(Tensor<T>(od), needs_grad);
  const int64_t rows = out->value.numel() / total_c;
  int64_t off = 0;
  for (const auto& x : xs) {
    const int64_t c = x->value.dims().back();
    for (int64_t r = 0; r < rows; ++r)
      std::copy_n(x->value.data() + r * c, c, out->value.data() + r * total_c + off);
    off += c;
  }
  if (out->requires_grad)
    g.record([xs, out, rows, total_c] {
      if (!out->has_grad()) return;
      int64_t off = 0;
      for (const auto& x : xs) {
        const int64_t c = x->value.dims().back();
        if (x->requires_grad) {
          x->ensure_grad();
          for (int64_t r = 0; r < rows; ++r) {
            const T* src = out->grad.data() + r * total_c + off;
            T* dst = x->grad.data() + r * c;
            for (int64_t i = 0; i < c; ++i) dst[i] += src[i];
          }
        }
        off += c;
      }
    });
  return out;
}

template <typename T>
Var<T> slice_last(Tape<T>& g, Var<T> x, int64_t start, int64_t len) {
  const int64_t c = x->value.dims().back();
  if (start < 0 || len <= 0 || start + len > c)
    throw_error(ErrorKind::Shape, "slice: channel range out of bounds");
  std::vector<int64_t> od = x->value.dims();
  od.back() = len;
  auto out = g.leaf(Tensor<T>(od), x->requires_grad);
  const int64_t rows = x->value.numel() / c;
  for (int64_t r = 0; r < rows; ++r)
    std::copy_n(x->value.data() + r * c + start, len, out->value.data() + r * len);
  if (out->requires_grad)
    g.record([x, out, start, len, rows, c] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const T* src = out->grad.data() + r * len;
        T* dst = x->grad.data() + r * c + start;
        for (int64_t i = 0; i < len; ++i) dst[i] += src[i];
      }
    });
  return out;
}

template <typename T>
Var<T> select_frame(Tape<T>& g, Var<T> x, int64_t m) {
  if (x->value.rank() < 2) throw_error(ErrorKind::Shape, "select_frame: needs rank >= 2");
  const int64_t n = x->value.dim(0), frames = x->value.dim(1);
  if (m < 0 || m >= frames) throw_error(ErrorKind::Shape, "select_frame: index out of range");
  std::vector<int64_t> od;
  od.push_back(n);
  for (size_t i = 2; i < x->value.rank(); ++i) od.push_back(x->value.dim(i));
  auto out = g.leaf(Tensor<T>(od), x->requires_grad);
  const int64_t block = row_block(x->value, 2);
  for (int64_t i = 0; i < n; ++i)
    std::copy_n(x->value.data() + (i * frames + m) * block, block,
                out->value.data() + i * block);
  if (out->requires_grad)
    g.record([x, out, m, n, frames, block] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const T* src = out->grad.data() + i * block;
        T* dst = x->grad.data() + (i * frames + m) * block;
        for (int64_t j = 0; j < block; ++j) dst[j] += src[j];
      }
    });
  return out;
}

template <typename T>
Var<T> gather_rows(Tape<T>& g, Var<T> x, std::vector<int64_t> idx) {
  const int64_t n = x->value.dim(0);
  for (int64_t i : idx)
    if (i < 0 || i >= n) throw_error(ErrorKind::Shape, "gather_rows: index out of range");
  std::vector<int64_t> od = x->value.dims();
  od[0] = static_cast<int64_t>(idx.size());
  auto out = g.leaf(Tensor<T>(od), x->requires_grad);
  const int64_t block = row_block(x->value, 1);
  for (size_t k = 0; k < idx.size(); ++k)
    std::copy_n(x->value.data() + idx[k] * block, block,
                out->value.data() + static_cast<int64_t>(k) * block);
  if (out->requires_grad) {
    auto ix = std::make_shared<std::vector<int64_t>>(std::move(idx));
    g.record([x, out, ix, block] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (size_t k = 0; k < ix->size(); ++k) {
        const T* src = out->grad.data() + static_cast<int64_t>(k) * block;
        T* dst = x->grad.data() + (*ix)[k] * block;
        for (int64_t j = 0; j < block; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

template <typename T>
Var<T> reshape(Tape<T>& g, Var<T> x, std::vector<int64_t> dims) {
  auto out = g.leaf(x->value.reshaped(std::move(dims)), x->requires_grad);
  if (out->requires_grad)
    g.record([x, out] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      const int64_t n = out->grad.numel();
      for (int64_t i = 0; i < n; ++i) x->grad[i] += out->grad[i];
    });
  return out;
}

template <typename T>
Var<T> linear(Tape<T>& g, Var<T> x, Var<T> w, Var<T> b) {
  if (x->value.rank() != 2 || w->value.rank() != 2 || b->value.rank() != 1)
    throw_error(ErrorKind::Shape, "linear: expects x[N,in], w[in,out], b[out]");
  const int64_t n = x->value.dim(0), in = x->value.dim(1);
  const int64_t out_c = w->value.dim(1);
  if (w->value.dim(0) != in || b->value.dim(0) != out_c)
    throw_error(ErrorKind::Shape, "linear: weight/bias extents do not match input");
  auto out = g.leaf(Tensor<T>({n, out_c}), any_requires_grad<T>({&x, &w, &b}));
  CMapM<T> xm(x->value.data(), n, in);
  CMapM<T> wm(w->value.data(), in, out_c);
  MapM<T> om(out->value.data(), n, out_c);
  om.noalias() = xm * wm;
  for (int64_t r = 0; r < n; ++r)
    for (int64_t c = 0; c < out_c; ++c) om(r, c) += b->value[c];
  if (out->requires_grad)
    g.record([x, w, b, out, n, in, out_c] {
      if (!out->has_grad()) return;
      CMapM<T> go(out->grad.data(), n, out_c);
      if (x->requires_grad) {
        x->ensure_grad();
        MapM<T> gx(x->grad.data(), n, in);
        CMapM<T> wm(w->value.data(), in, out_c);
        gx.noalias() += go * wm.transpose();
      }
      if (w->requires_grad) {
        w->ensure_grad();
        MapM<T> gw(w->grad.data(), in, out_c);
        CMapM<T> xm(x->value.data(), n, in);
        gw.noalias() += xm.transpose() * go;
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int64_t r = 0; r < n; ++r)
          for (int64_t c = 0; c < out_c; ++c) b->grad[c] += go(r, c);
      }
    });
  return out;
}

#define CASPGRID_INSTANTIATE(T)                                                    \
  template Var<T> add(Tape<T>&, Var<T>, Var<T>);                                   \
  template Var<T> sub(Tape<T>&, Var<T>, Var<T>);                                   \
  template Var<T> mul(Tape<T>&, Var<T>, Var<T>);                                   \
  template Var<T> scale(Tape<T>&, Var<T>, double);                                 \
  template Var<T> add_scalar(Tape<T>&, Var<T>, double);                            \
  template Var<T> relu(Tape<T>&, Var<T>);                                          \
  template Var<T> sigmoid(Tape<T>&, Var<T>);                                       \
  template Var<T> tanh_act(Tape<T>&, Var<T>);                                      \
  template Var<T> softmax_last(Tape<T>&, Var<T>);                                  \
  template Var<T> sum_all(Tape<T>&, Var<T>);                                       \
  template Var<T> weighted_sum_all(Tape<T>&, Var<T>, Tensor<T>);                   \
  template Var<T> concat_last(Tape<T>&, const std::vector<Var<T>>&);               \
  template Var<T> slice_last(Tape<T>&, Var<T>, int64_t, int64_t);                  \
  template Var<T> select_frame(Tape<T>&, Var<T>, int64_t);                         \
  template Var<T> gather_rows(Tape<T>&, Var<T>, std::vector<int64_t>);             \
  template Var<T> reshape(Tape<T>&, Var<T>, std::vector<int64_t>);                 \
  template Var<T> linear(Tape<T>&, Var<T>, Var<T>, Var<T>);

CASPGRID_INSTANTIATE(float)
CASPGRID_INSTANTIATE(double)
#undef CASPGRID_INSTANTIATE

}  // namespace caspgrid
