#pragma once

#include <array>

#include "mvnet/nn/module.hpp"
#include "mvnet/nn/ops.hpp"

namespace mvnet::nn {

// Weight [in, out], truncated-normal(0.02); bias zero.
template <typename T>
class Linear : public Module<T> {
 public:
  Linear(int in, int out, Rng& rng, bool bias = true);
  Tensor<T> operator()(const Tensor<T>& x) const;
  Parameter<T> weight;
  Parameter<T> bias;
};

template <typename T>
class LayerNorm : public Module<T> {
 public:
  explicit LayerNorm(int dim);
  Tensor<T> operator()(const Tensor<T>& x) const;
  Parameter<T> gamma;
  Parameter<T> beta;
};

// Channels-last batch norm; running statistics are buffers, not parameters.
template <typename T>
class BatchNorm : public Module<T> {
 public:
  explicit BatchNorm(int channels, T momentum = T(0.1));
  Tensor<T> operator()(const Tensor<T>& x);
  Parameter<T> gamma;
  Parameter<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum;
};

// Bias-free cubic convolution over [D, H, W, C] grids (followed by BatchNorm
// in every use). Kaiming-normal initialization.
template <typename T>
class Conv3d : public Module<T> {
 public:
  Conv3d(int cin, int cout, int kernel, int stride, int pad, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  kernels::ConvGeometry geometry_for(const Shape& input) const;
  int cin, cout, kernel, stride, pad;
  Parameter<T> weight;
};

// Kernel-2, stride-2 transposed convolution doubling every spatial axis.
template <typename T>
class ConvTranspose3d : public Module<T> {
 public:
  ConvTranspose3d(int cin, int cout, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  int cin, cout;
  Parameter<T> weight;
};

// Convolution over [H, W, C] images with optional bias.
template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d(int cin, int cout, int kernel, int stride, int pad, Rng& rng, bool bias = true);
  Tensor<T> operator()(const Tensor<T>& x) const;
  int cin, cout, kernel, stride, pad;
  Parameter<T> weight;
  Parameter<T> bias;
};

// Multi-head attention; self-attention when query and context coincide.
template <typename T>
class MultiHeadAttention : public Module<T> {
 public:
  MultiHeadAttention(int dim, int heads, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& query, const Tensor<T>& context) const;
  int heads;
  Linear<T> q_proj, k_proj, v_proj, out_proj;
};

template <typename T>
class Mlp : public Module<T> {
 public:
  Mlp(int dim, int hidden, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  Linear<T> fc1, fc2;
};

extern template class Linear<float>;
extern template class Linear<double>;
extern template class LayerNorm<float>;
extern template class LayerNorm<double>;
extern template class BatchNorm<float>;
extern template class BatchNorm<double>;
extern template class Conv3d<float>;
extern template class Conv3d<double>;
extern template class ConvTranspose3d<float>;
extern template class ConvTranspose3d<double>;
extern template class Conv2d<float>;
extern template class Conv2d<double>;
extern template class MultiHeadAttention<float>;
extern template class MultiHeadAttention<double>;
extern template class Mlp<float>;
extern template class Mlp<double>;

}  // namespace mvnet::nn
