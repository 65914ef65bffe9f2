#include <Eigen/Dense>
#include <cmath>

#include "caspgrid/ops.hpp"
#include "caspgrid/parallel.hpp"

namespace caspgrid {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatRM<T>>;

struct DeformDims {
  int64_t n, h, w, cin, kh, kw, cout, ho, wo;
  int stride, pad;
  int64_t taps() const { return kh * kw; }
  int64_t cols() const { return taps() * cin; }
  int64_t rows() const { return n * ho * wo; }
};

// Bilinear corner bundle at a continuous position; out-of-border corners
// carry weight but read/write nothing (zero padding semantics).
template <typename T>
struct Corners {
  int64_t y0, x0;
  T fy, fx;
  bool v00, v01, v10, v11;
};

template <typename T>
Corners<T> corners_at(T py, T px, int64_t h, int64_t w) {
  Corners<T> c;
  const T fy0 = std::floor(py), fx0 = std::floor(px);
  c.y0 = static_cast<int64_t>(fy0);
  c.x0 = static_cast<int64_t>(fx0);
  c.fy = py - fy0;
  c.fx = px - fx0;
  const auto in = [&](int64_t y, int64_t x) { return y >= 0 && y < h && x >= 0 && x < w; };
  c.v00 = in(c.y0, c.x0);
  c.v01 = in(c.y0, c.x0 + 1);
  c.v10 = in(c.y0 + 1, c.x0);
  c.v11 = in(c.y0 + 1, c.x0 + 1);
  return c;
}

// Builds the gathered matrix G[row, tap*Cin + c] = mod * bilinear(x, pos, c).
template <typename T>
void build_gather(const Tensor<T>& x, const Tensor<T>& off, const Tensor<T>& mod,
                  const DeformDims& d, T* G) {
  const int64_t taps = d.taps(), ck = d.cols();
  parallel_for(d.n, [&](int64_t n0, int64_t n1) {
    for (int64_t n = n0; n < n1; ++n) {
      const T* xn = x.data() + n * d.h * d.w * d.cin;
      for (int64_t oh = 0; oh < d.ho; ++oh)
        for (int64_t ow = 0; ow < d.wo; ++ow) {
          const int64_t pix = (n * d.ho + oh) * d.wo + ow;
          const T* po = off.data() + pix * 2 * taps;
          const T* pm = mod.data() + pix * taps;
          T* row = G + pix * ck;
          for (int64_t t = 0; t < taps; ++t) {
            const int64_t ky = t / d.kw, kx = t % d.kw;
            const T py = static_cast<T>(oh * d.stride - d.pad + ky) + po[2 * t];
            const T px = static_cast<T>(ow * d.stride - d.pad + kx) + po[2 * t + 1];
            const Corners<T> c = corners_at(py, px, d.h, d.w);
            const T m = pm[t];
            const T w00 = (T(1) - c.fy) * (T(1) - c.fx) * m;
            const T w01 = (T(1) - c.fy) * c.fx * m;
            const T w10 = c.fy * (T(1) - c.fx) * m;
            const T w11 = c.fy * c.fx * m;
            const T* p00 = c.v00 ? xn + (c.y0 * d.w + c.x0) * d.cin : nullptr;
            const T* p01 = c.v01 ? xn + (c.y0 * d.w + c.x0 + 1) * d.cin : nullptr;
            const T* p10 = c.v10 ? xn + ((c.y0 + 1) * d.w + c.x0) * d.cin : nullptr;
            const T* p11 = c.v11 ? xn + ((c.y0 + 1) * d.w + c.x0 + 1) * d.cin : nullptr;
            T* dst = row + t * d.cin;
            for (int64_t ch = 0; ch < d.cin; ++ch) {
              T v = T(0);
              if (p00) v += w00 * p00[ch];
              if (p01) v += w01 * p01[ch];
              if (p10) v += w10 * p10[ch];
              if (p11) v += w11 * p11[ch];
              dst[ch] = v;
            }
          }
        }
    }
  });
}

}  // namespace

template <typename T>
Var<T> deform_conv2d(Tape<T>& g, Var<T> x, Var<T> w, Var<T> b, Var<T> offsets,
                     Var<T> modulation, int stride, int pad) {
  DeformDims d;
  {
    if (x->value.rank() != 4 || w->value.rank() != 4)
      throw_error(ErrorKind::Shape, "deform_conv2d: expects x[N,H,W,C], w[kh,kw,Cin,Cout]");
    d.n = x->value.dim(0);
    d.h = x->value.dim(1);
    d.w = x->value.dim(2);
    d.cin = x->value.dim(3);
    d.kh = w->value.dim(0);
    d.kw = w->value.dim(1);
    d.cout = w->value.dim(3);
    d.stride = stride;
    d.pad = pad;
    if (w->value.dim(2) != d.cin)
      throw_error(ErrorKind::Shape, "deform_conv2d: weight Cin mismatch");
    d.ho = conv_out_extent(d.h, static_cast<int>(d.kh), stride, pad);
    d.wo = conv_out_extent(d.w, static_cast<int>(d.kw), stride, pad);
  }
  const int64_t taps = d.taps();
  const std::vector<int64_t> off_dims{d.n, d.ho, d.wo, 2 * taps};
  const std::vector<int64_t> mod_dims{d.n, d.ho, d.wo, taps};
  if (offsets->value.dims() != off_dims)
    throw_error(ErrorKind::Shape, "deform_conv2d: offsets must be " +
                                      Tensor<T>(off_dims).shape_string() + ", got " +
                                      offsets->value.shape_string());
  if (modulation->value.dims() != mod_dims)
    throw_error(ErrorKind::Shape, "deform_conv2d: modulation must be " +
                                      Tensor<T>(mod_dims).shape_string() + ", got " +
                                      modulation->value.shape_string());
  if (b->value.rank() != 1 || b->value.dim(0) != d.cout)
    throw_error(ErrorKind::Shape, "deform_conv2d: bias extent does not match Cout");

  auto out = g.leaf(Tensor<T>({d.n, d.ho, d.wo, d.cout}),
                    any_requires_grad<T>({&x, &w, &b, &offsets, &modulation}));

  std::vector<T> G(static_cast<size_t>(d.rows()) * d.cols());
  build_gather(x->value, offsets->value, modulation->value, d, G.data());
  CMapM<T> wm(w->value.data(), d.cols(), d.cout);
  parallel_for(d.n, [&](int64_t n0, int64_t n1) {
    const int64_t r0 = n0 * d.ho * d.wo, r1 = n1 * d.ho * d.wo;
    CMapM<T> gm(G.data() + r0 * d.cols(), r1 - r0, d.cols());
    MapM<T> om(out->value.data() + r0 * d.cout, r1 - r0, d.cout);
    om.noalias() = gm * wm;
  });
  for (int64_t r = 0; r < d.rows(); ++r) {
    T* o = out->value.data() + r * d.cout;
    for (int64_t c = 0; c < d.cout; ++c) o[c] += b->value[c];
  }

  if (out->requires_grad)
    g.record([x, w, b, offsets, modulation, out, d, taps] {
      if (!out->has_grad()) return;
      CMapM<T> go(out->grad.data(), d.rows(), d.cout);
      if (b->requires_grad) {
        b->ensure_grad();
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(b->grad.data(), d.cout);
        gb.noalias() += go.colwise().sum().transpose();
      }
      if (w->requires_grad) {
        std::vector<T> G(static_cast<size_t>(d.rows()) * d.cols());
        build_gather(x->value, offsets->value, modulation->value, d, G.data());
        w->ensure_grad();
        CMapM<T> gm(G.data(), d.rows(), d.cols());
        MapM<T> gw(w->grad.data(), d.cols(), d.cout);
        gw.noalias() += gm.transpose() * go;
      }
      const bool nx = x->requires_grad, no = offsets->requires_grad,
                 nm = modulation->requires_grad;
      if (!nx && !no && !nm) return;
      if (nx) x->ensure_grad();
      if (no) offsets->ensure_grad();
      if (nm) modulation->ensure_grad();
      std::vector<T> dG(static_cast<size_t>(d.rows()) * d.cols());
      CMapM<T> wm(w->value.data(), d.cols(), d.cout);
      parallel_for(d.n, [&](int64_t n0, int64_t n1) {
        const int64_t r0 = n0 * d.ho * d.wo, r1 = n1 * d.ho * d.wo;
        MapM<T> dgm(dG.data() + r0 * d.cols(), r1 - r0, d.cols());
        CMapM<T> gor(out->grad.data() + r0 * d.cout, r1 - r0, d.cout);
        dgm.noalias() = gor * wm.transpose();
      });
      parallel_for(d.n, [&](int64_t nb0, int64_t nb1) {
        for (int64_t n = nb0; n < nb1; ++n) {
          const T* xn = x->value.data() + n * d.h * d.w * d.cin;
          T* gxn = nx ? x->grad.data() + n * d.h * d.w * d.cin : nullptr;
          for (int64_t oh = 0; oh < d.ho; ++oh)
            for (int64_t ow = 0; ow < d.wo; ++ow) {
              const int64_t pix = (n * d.ho + oh) * d.wo + ow;
              const T* po = offsets->value.data() + pix * 2 * taps;
              const T* pm = modulation->value.data() + pix * taps;
              const T* drow = dG.data() + pix * d.cols();
              for (int64_t t = 0; t < taps; ++t) {
                const int64_t ky = t / d.kw, kx = t % d.kw;
                const T py = static_cast<T>(oh * d.stride - d.pad + ky) + po[2 * t];
                const T px = static_cast<T>(ow * d.stride - d.pad + kx) + po[2 * t + 1];
                const Corners<T> c = corners_at(py, px, d.h, d.w);
                const T m = pm[t];
                const T w00 = (T(1) - c.fy) * (T(1) - c.fx);
                const T w01 = (T(1) - c.fy) * c.fx;
                const T w10 = c.fy * (T(1) - c.fx);
                const T w11 = c.fy * c.fx;
                const int64_t i00 = (c.y0 * d.w + c.x0) * d.cin;
                const int64_t i01 = (c.y0 * d.w + c.x0 + 1) * d.cin;
                const int64_t i10 = ((c.y0 + 1) * d.w + c.x0) * d.cin;
                const int64_t i11 = ((c.y0 + 1) * d.w + c.x0 + 1) * d.cin;
                const T* dg = drow + t * d.cin;
                T acc_mod = T(0), acc_py = T(0), acc_px = T(0);
                for (int64_t ch = 0; ch < d.cin; ++ch) {
                  const T v00 = c.v00 ? xn[i00 + ch] : T(0);
                  const T v01 = c.v01 ? xn[i01 + ch] : T(0);
                  const T v10 = c.v10 ? xn[i10 + ch] : T(0);
                  const T v11 = c.v11 ? xn[i11 + ch] : T(0);
                  const T dgc = dg[ch];
                  if (nm)
                    acc_mod += dgc * (w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11);
                  const T s = dgc * m;
                  if (nx) {
                    if (c.v00) gxn[i00 + ch] += s * w00;
                    if (c.v01) gxn[i01 + ch] += s * w01;
                    if (c.v10) gxn[i10 + ch] += s * w10;
                    if (c.v11) gxn[i11 + ch] += s * w11;
                  }
                  if (no) {
                    acc_py += s * ((T(1) - c.fx) * (v10 - v00) + c.fx * (v11 - v01));
                    acc_px += s * ((T(1) - c.fy) * (v01 - v00) + c.fy * (v11 - v10));
                  }
                }
                if (nm) modulation->grad[pix * taps + t] += acc_mod;
                if (no) {
                  offsets->grad[pix * 2 * taps + 2 * t] += acc_py;
                  offsets->grad[pix * 2 * taps + 2 * t + 1] += acc_px;
                }
              }
            }
        }
      });
    });
  return out;
}

#define CASPGRID_INSTANTIATE(T)                                               \
  template Var<T> deform_conv2d(Tape<T>&, Var<T>, Var<T>, Var<T>, Var<T>,     \
                                Var<T>, int, int);

CASPGRID_INSTANTIATE(float)
CASPGRID_INSTANTIATE(double)
#undef CASPGRID_INSTANTIATE

}  // namespace caspgrid
