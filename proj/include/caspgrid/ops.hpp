#pragma once

#include <random>
#include <vector>

#include "caspgrid/tape.hpp"

namespace caspgrid {

// Differentiable kernels. Feature tensors are channel-last: [N, H, W, C].
// Convolution weights are [kh, kw, Cin, Cout], biases [Cout].

// ---- elementwise / structural ----
template <typename T> Var<T> add(Tape<T>& g, Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Tape<T>& g, Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Tape<T>& g, Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Tape<T>& g, Var<T> a, double c);
template <typename T> Var<T> add_scalar(Tape<T>& g, Var<T> a, double c);
template <typename T> Var<T> relu(Tape<T>& g, Var<T> x);
template <typename T> Var<T> sigmoid(Tape<T>& g, Var<T> x);
template <typename T> Var<T> tanh_act(Tape<T>& g, Var<T> x);
template <typename T> Var<T> softmax_last(Tape<T>& g, Var<T> x);
template <typename T> Var<T> sum_all(Tape<T>& g, Var<T> x);  // -> shape [1]
template <typename T> Var<T> weighted_sum_all(Tape<T>& g, Var<T> x, Tensor<T> w);
template <typename T> Var<T> concat_last(Tape<T>& g, const std::vector<Var<T>>& xs);
template <typename T> Var<T> slice_last(Tape<T>& g, Var<T> x, int64_t start, int64_t len);
/// Select index m along axis 1 of [N, M, ...] -> [N, ...].
template <typename T> Var<T> select_frame(Tape<T>& g, Var<T> x, int64_t m);
/// Gather rows along axis 0; an index may repeat (backward scatter-adds).
template <typename T> Var<T> gather_rows(Tape<T>& g, Var<T> x, std::vector<int64_t> idx);
template <typename T> Var<T> reshape(Tape<T>& g, Var<T> x, std::vector<int64_t> dims);

// ---- dense / conv ----
template <typename T> Var<T> linear(Tape<T>& g, Var<T> x, Var<T> w, Var<T> b);
template <typename T> Var<T> conv2d(Tape<T>& g, Var<T> x, Var<T> w, Var<T> b,
                                    int stride = 1, int pad = 0);
template <typename T> Var<T> maxpool2d(Tape<T>& g, Var<T> x);  // 2x2, stride 2
template <typename T> Var<T> upsample_bilinear2x(Tape<T>& g, Var<T> x);

/// Modulated deformable convolution. offsets: [N, Ho, Wo, 2*kh*kw] as
/// (dh, dw) pairs per tap in row-major tap order; modulation: [N, Ho, Wo,
/// kh*kw], already in [0, 1]. Samples outside the input border read zero.
template <typename T> Var<T> deform_conv2d(Tape<T>& g, Var<T> x, Var<T> w, Var<T> b,
                                           Var<T> offsets, Var<T> modulation,
                                           int stride = 1, int pad = 0);

// ---- normalization / regularization ----
template <typename T>
Var<T> batchnorm2d(Tape<T>& g, Var<T> x, Var<T> gamma, Var<T> beta,
                   Tensor<T>* running_mean, Tensor<T>* running_var,
                   bool training, double momentum = 0.1, double eps = 1e-5);
template <typename T>
Var<T> dropout(Tape<T>& g, Var<T> x, double rate, bool training, std::mt19937& rng);

// ---- fusion ----
/// BiFPN fusion node: sum_i relu(lambda_i)/(sum_j relu(lambda_j) + eps) * x_i.
/// eps is only a division guard so that e.g. lambda = (1, 0) passes input 0
/// through unchanged in single precision.
template <typename T>
Var<T> fast_normalized_sum(Tape<T>& g, std::vector<Var<T>> xs, Var<T> lambda,
                           double eps = 1e-12);

/// Head activation for [..., T*5] outputs: sigmoid on channels c%5 in {0,1,2}
/// (occupancy + both offsets), identity on {3,4} (velocities).
template <typename T> Var<T> head_activation(Tape<T>& g, Var<T> x);

// ---- recurrent ----
template <typename T>
struct ConvGruParams {
  Var<T> wz, bz, wr, br, wh, bh;  // each conv weight is [k, k, 2*ch, ch]
};

/// Convolutional GRU step:
///   z = sigmoid(conv([x, h])), r = sigmoid(conv([x, h])),
///   hc = tanh(conv([x, r*h])), h' = (1 - z)*h + z*hc.
template <typename T>
Var<T> conv_gru_step(Tape<T>& g, Var<T> x, Var<T> h, const ConvGruParams<T>& p, int pad);

// ---- shape helper ----
inline int64_t conv_out_extent(int64_t in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace caspgrid
