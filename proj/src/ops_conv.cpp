#include <Eigen/Dense>
#include <cstring>

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

struct ConvDims {
  int64_t n, h, w, cin;
  int64_t kh, kw, cout;
  int64_t ho, wo;
  int stride, pad;
  int64_t cols() const { return kh * kw * cin; }
  int64_t rows() const { return n * ho * wo; }
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad,
                   const char* where) {
  if (x.rank() != 4 || w.rank() != 4)
    throw_error(ErrorKind::Shape,
                std::string(where) + ": expects x[N,H,W,C] and w[kh,kw,Cin,Cout]");
  ConvDims d;
  d.n = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.cin = x.dim(3);
  d.kh = w.dim(0);
  d.kw = w.dim(1);
  d.cout = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  if (w.dim(2) != d.cin)
    throw_error(ErrorKind::Shape, std::string(where) + ": weight Cin " +
                                      std::to_string(w.dim(2)) + " vs input C " +
                                      std::to_string(d.cin));
  d.ho = conv_out_extent(d.h, static_cast<int>(d.kh), stride, pad);
  d.wo = conv_out_extent(d.w, static_cast<int>(d.kw), stride, pad);
  if (d.ho <= 0 || d.wo <= 0)
    throw_error(ErrorKind::Shape, std::string(where) + ": kernel larger than padded input");
  return d;
}

// Gathers kernel windows into [N*Ho*Wo, kh*kw*Cin]; zero outside the border.
template <typename T>
void im2col(const Tensor<T>& x, const ConvDims& d, T* col) {
  const int64_t ck = d.cols();
  parallel_for(d.n, [&](int64_t n0, int64_t n1) {
    for (int64_t n = n0; n < n1; ++n) {
      const T* xn = x.data() + n * d.h * d.w * d.cin;
      for (int64_t oh = 0; oh < d.ho; ++oh)
        for (int64_t ow = 0; ow < d.wo; ++ow) {
          T* row = col + ((n * d.ho + oh) * d.wo + ow) * ck;
          for (int64_t ky = 0; ky < d.kh; ++ky) {
            const int64_t ih = oh * d.stride - d.pad + ky;
            for (int64_t kx = 0; kx < d.kw; ++kx) {
              const int64_t iw = ow * d.stride - d.pad + kx;
              T* dst = row + (ky * d.kw + kx) * d.cin;
              if (ih >= 0 && ih < d.h && iw >= 0 && iw < d.w)
                std::copy_n(xn + (ih * d.w + iw) * d.cin, d.cin, dst);
              else
                std::fill_n(dst, d.cin, T(0));
            }
          }
        }
    }
  });
}

// Scatter-adds [N*Ho*Wo, kh*kw*Cin] back onto the input layout.
template <typename T>
void col2im_accumulate(const T* col, const ConvDims& d, Tensor<T>& gx) {
  const int64_t ck = d.cols();
  parallel_for(d.n, [&](int64_t n0, int64_t n1) {
    for (int64_t n = n0; n < n1; ++n) {
      T* gn = gx.data() + n * d.h * d.w * d.cin;
      for (int64_t oh = 0; oh < d.ho; ++oh)
        for (int64_t ow = 0; ow < d.wo; ++ow) {
          const T* row = col + ((n * d.ho + oh) * d.wo + ow) * ck;
          for (int64_t ky = 0; ky < d.kh; ++ky) {
            const int64_t ih = oh * d.stride - d.pad + ky;
            if (ih < 0 || ih >= d.h) continue;
            for (int64_t kx = 0; kx < d.kw; ++kx) {
              const int64_t iw = ow * d.stride - d.pad + kx;
              if (iw < 0 || iw >= d.w) continue;
              const T* src = row + (ky * d.kw + kx) * d.cin;
              T* dst = gn + (ih * d.w + iw) * d.cin;
              for (int64_t c = 0; c < d.cin; ++c) dst[c] += src[c];
            }
          }
        }
    }
  });
}

}  // namespace

template <typename T>
Var<T> conv2d(Tape<T>& g, Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  const ConvDims d = conv_dims(x->value, w->value, stride, pad, "conv2d");
  if (b->value.rank() != 1 || b->value.dim(0) != d.cout)
    throw_error(ErrorKind::Shape, "conv2d: bias extent does not match Cout");
  auto out = g.leaf(Tensor<T>({d.n, d.ho, d.wo, d.cout}),
                    any_requires_grad<T>({&x, &w, &b}));

  std::vector<T> col(static_cast<size_t>(d.rows()) * d.cols());
  im2col(x->value, d, col.data());
  CMapM<T> wm(w->value.data(), d.cols(), d.cout);
  // Split by row block: output rows are disjoint, so this is deterministic.
  parallel_for(d.n, [&](int64_t n0, int64_t n1) {
    const int64_t r0 = n0 * d.ho * d.wo, r1 = n1 * d.ho * d.wo;
    CMapM<T> cm(col.data() + r0 * d.cols(), r1 - r0, d.cols());
    MapM<T> om(out->value.data() + r0 * d.cout, r1 - r0, d.cout);
    om.noalias() = cm * wm;
  });
  const int64_t rows = d.rows();
  for (int64_t r = 0; r < rows; ++r) {
    T* o = out->value.data() + r * d.cout;
    for (int64_t c = 0; c < d.cout; ++c) o[c] += b->value[c];
  }

  if (out->requires_grad)
    g.record([x, w, b, out, d] {
      if (!out->has_grad()) return;
      CMapM<T> go(out->grad.data(), d.rows(), d.cout);
      if (b->requires_grad) {
        b->ensure_grad();
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(b->grad.data(), d.cout);
        gb.noalias() += go.colwise().sum().transpose();
      }
      const bool need_col = w->requires_grad;
      std::vector<T> col;
      if (need_col) {  // im2col is rebuilt instead of kept alive since forward
        col.resize(static_cast<size_t>(d.rows()) * d.cols());
        im2col(x->value, d, col.data());
        w->ensure_grad();
        CMapM<T> cm(col.data(), d.rows(), d.cols());
        MapM<T> gw(w->grad.data(), d.cols(), d.cout);
        gw.noalias() += cm.transpose() * go;
      }
      if (x->requires_grad) {
        x->ensure_grad();
        std::vector<T> dcol(static_cast<size_t>(d.rows()) * d.cols());
        CMapM<T> wm(w->value.data(), d.cols(), d.cout);
        parallel_for(d.n, [&](int64_t n0, int64_t n1) {
          const int64_t r0 = n0 * d.ho * d.wo, r1 = n1 * d.ho * d.wo;
          MapM<T> dc(dcol.data() + r0 * d.cols(), r1 - r0, d.cols());
          CMapM<T> gor(out->grad.data() + r0 * d.cout, r1 - r0, d.cout);
          dc.noalias() = gor * wm.transpose();
        });
        col2im_accumulate(dcol.data(), d, x->grad);
      }
    });
  return out;
}

template <typename T>
Var<T> maxpool2d(Tape<T>& g, Var<T> x) {
  if (x->value.rank() != 4) throw_error(ErrorKind::Shape, "maxpool2d: expects [N,H,W,C]");
  const int64_t n = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2),
                c = x->value.dim(3);
  if (h % 2 || w % 2)
    throw_error(ErrorKind::Shape, "maxpool2d: spatial extents must be even");
  const int64_t ho = h / 2, wo = w / 2;
  auto out = g.leaf(Tensor<T>({n, ho, wo, c}), x->requires_grad);
  // 2 bits would do; a byte per output element keeps the scatter trivial.
  auto arg = std::make_shared<std::vector<uint8_t>>(
      out->requires_grad ? static_cast<size_t>(out->value.numel()) : 0);
  parallel_for(n, [&](int64_t n0, int64_t n1) {
    for (int64_t i = n0; i < n1; ++i)
      for (int64_t oh = 0; oh < ho; ++oh)
        for (int64_t ow = 0; ow < wo; ++ow) {
          const T* base = x->value.data() + ((i * h + oh * 2) * w + ow * 2) * c;
          T* o = out->value.data() + ((i * ho + oh) * wo + ow) * c;
          uint8_t* a = arg->empty() ? nullptr : arg->data() + ((i * ho + oh) * wo + ow) * c;
          for (int64_t ch = 0; ch < c; ++ch) {
            T best = base[ch];
            uint8_t bi = 0;
            const T cand1 = base[c + ch];             // (0,1)
            const T cand2 = base[w * c + ch];         // (1,0)
            const T cand3 = base[w * c + c + ch];     // (1,1)
            if (cand1 > best) { best = cand1; bi = 1; }
            if (cand2 > best) { best = cand2; bi = 2; }
            if (cand3 > best) { best = cand3; bi = 3; }
            o[ch] = best;
            if (a) a[ch] = bi;
          }
        }
  });
  if (out->requires_grad)
    g.record([x, out, arg, n, h, w, c, ho, wo] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t oh = 0; oh < ho; ++oh)
          for (int64_t ow = 0; ow < wo; ++ow) {
            const int64_t oi = ((i * ho + oh) * wo + ow) * c;
            for (int64_t ch = 0; ch < c; ++ch) {
              const uint8_t a = (*arg)[oi + ch];
              const int64_t ih = oh * 2 + (a >> 1), iw = ow * 2 + (a & 1);
              x->grad[((i * h + ih) * w + iw) * c + ch] += out->grad[oi + ch];
            }
          }
    });
  return out;
}

template <typename T>
Var<T> upsample_bilinear2x(Tape<T>& g, Var<T> x) {
  if (x->value.rank() != 4)
    throw_error(ErrorKind::Shape, "upsample_bilinear2x: expects [N,H,W,C]");
  const int64_t n = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2),
                c = x->value.dim(3);
  const int64_t ho = h * 2, wo = w * 2;
  auto out = g.leaf(Tensor<T>({n, ho, wo, c}), x->requires_grad);

  // Sample positions for scale 2, half-pixel centers: src = (o + 0.5)/2 - 0.5.
  auto corners = [](int64_t o, int64_t extent, int64_t& i0, int64_t& i1, T& f) {
    const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    double fl = std::floor(src);
    f = static_cast<T>(src - fl);
    i0 = static_cast<int64_t>(fl);
    i1 = i0 + 1;
    if (i0 < 0) i0 = 0;
    if (i1 < 0) i1 = 0;
    if (i0 > extent - 1) i0 = extent - 1;
    if (i1 > extent - 1) i1 = extent - 1;
  };

  parallel_for(n, [&](int64_t n0, int64_t n1) {
    for (int64_t i = n0; i < n1; ++i)
      for (int64_t oh = 0; oh < ho; ++oh) {
        int64_t h0, h1;
        T fh;
        corners(oh, h, h0, h1, fh);
        for (int64_t ow = 0; ow < wo; ++ow) {
          int64_t w0, w1;
          T fw;
          corners(ow, w, w0, w1, fw);
          const T* p00 = x->value.data() + ((i * h + h0) * w + w0) * c;
          const T* p01 = x->value.data() + ((i * h + h0) * w + w1) * c;
          const T* p10 = x->value.data() + ((i * h + h1) * w + w0) * c;
          const T* p11 = x->value.data() + ((i * h + h1) * w + w1) * c;
          T* o = out->value.data() + ((i * ho + oh) * wo + ow) * c;
          const T w00 = (T(1) - fh) * (T(1) - fw), w01 = (T(1) - fh) * fw;
          const T w10 = fh * (T(1) - fw), w11 = fh * fw;
          for (int64_t ch = 0; ch < c; ++ch)
            o[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
        }
      }
  });

  if (out->requires_grad)
    g.record([x, out, corners, n, h, w, c, ho, wo] {
      if (!out->has_grad()) return;
      x->ensure_grad();
      parallel_for(n, [&](int64_t n0, int64_t n1) {
        for (int64_t i = n0; i < n1; ++i)
          for (int64_t oh = 0; oh < ho; ++oh) {
            int64_t h0, h1;
            T fh;
            corners(oh, h, h0, h1, fh);
            for (int64_t ow = 0; ow < wo; ++ow) {
              int64_t w0, w1;
              T fw;
              corners(ow, w, w0, w1, fw);
              const T* go = out->grad.data() + ((i * ho + oh) * wo + ow) * c;
              T* p00 = x->grad.data() + ((i * h + h0) * w + w0) * c;
              T* p01 = x->grad.data() + ((i * h + h0) * w + w1) * c;
              T* p10 = x->grad.data() + ((i * h + h1) * w + w0) * c;
              T* p11 = x->grad.data() + ((i * h + h1) * w + w1) * c;
              const T w00 = (T(1) - fh) * (T(1) - fw), w01 = (T(1) - fh) * fw;
              const T w10 = fh * (T(1) - fw), w11 = fh * fw;
              for (int64_t ch = 0; ch < c; ++ch) {
                p00[ch] += w00 * go[ch];
                p01[ch] += w01 * go[ch];
                p10[ch] += w10 * go[ch];
                p11[ch] += w11 * go[ch];
              }
            }
          }
      });
    });
  return out;
}

#define CASPGRID_INSTANTIATE(T)                                          \
  template Var<T> conv2d(Tape<T>&, Var<T>, Var<T>, Var<T>, int, int);    \
  template Var<T> maxpool2d(Tape<T>&, Var<T>);                           \
  template Var<T> upsample_bilinear2x(Tape<T>&, Var<T>);

CASPGRID_INSTANTIATE(float)
CASPGRID_INSTANTIATE(double)
#undef CASPGRID_INSTANTIATE

}  // namespace caspgrid
