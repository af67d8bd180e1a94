#include "mvnet/nn/layers.hpp"

#include <cmath>

#include "mvnet/error.hpp"

namespace mvnet::nn {

namespace {
constexpr double kLinearStd = 0.02;

template <typename T>
Tensor<T> kaiming(Shape shape, int fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  fill_normal(t, std::sqrt(2.0 / fan_in), rng);
  return t;
}
}  // namespace

template <typename T>
Linear<T>::Linear(int in, int out, Rng& rng, bool with_bias) {
  Tensor<T> w({std::size_t(in), std::size_t(out)});
  fill_truncated_normal(w, kLinearStd, rng);
  this->add_parameter(weight, "weight", w);
  if (with_bias) this->add_parameter(bias, "bias", Tensor<T>({std::size_t(out)}));
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  return linear(x, weight.tensor, bias.tensor);
}

template <typename T>
LayerNorm<T>::LayerNorm(int dim) {
  this->add_parameter(gamma, "gamma", Tensor<T>({std::size_t(dim)}, T(1)));
  this->add_parameter(beta, "beta", Tensor<T>({std::size_t(dim)}));
}

template <typename T>
Tensor<T> LayerNorm<T>::operator()(const Tensor<T>& x) const {
  return layer_norm(x, gamma.tensor, beta.tensor);
}

template <typename T>
BatchNorm<T>::BatchNorm(int channels, T m)
    : running_mean(std::size_t(channels), T(0)), running_var(std::size_t(channels), T(1)), momentum(m) {
  this->add_parameter(gamma, "gamma", Tensor<T>({std::size_t(channels)}, T(1)));
  this->add_parameter(beta, "beta", Tensor<T>({std::size_t(channels)}));
  this->add_buffer(running_mean, "running_mean");
  this->add_buffer(running_var, "running_var");
}

template <typename T>
Tensor<T> BatchNorm<T>::operator()(const Tensor<T>& x) {
  // A single row has no batch variance; normalize it with the running stats.
  const bool batch_stats = this->training() && x.rank() > 0 && x.numel() / x.shape().back() > 1;
  return batch_norm(x, gamma.tensor, beta.tensor, running_mean, running_var, batch_stats, momentum);
}

template <typename T>
Conv3d<T>::Conv3d(int ci, int co, int k, int s, int p, Rng& rng) : cin(ci), cout(co), kernel(k), stride(s), pad(p) {
  this->add_parameter(weight, "weight",
                      kaiming<T>({std::size_t(k * k * k), std::size_t(ci), std::size_t(co)}, k * k * k * ci, rng));
}

template <typename T>
kernels::ConvGeometry Conv3d<T>::geometry_for(const Shape& s) const {
  if (s.size() != 4) fail(ErrorCode::kDimension, "conv3d: input must be [D,H,W,C], got " + to_string(s));
  return kernels::ConvGeometry::make({int(s[0]), int(s[1]), int(s[2])}, cin, cout, {kernel, kernel, kernel},
                                     {stride, stride, stride}, {pad, pad, pad});
}

template <typename T>
Tensor<T> Conv3d<T>::operator()(const Tensor<T>& x) const {
  return conv(x, weight.tensor, geometry_for(x.shape()));
}

template <typename T>
ConvTranspose3d<T>::ConvTranspose3d(int ci, int co, Rng& rng) : cin(ci), cout(co) {
  // Stored as the weight of the adjoint stride-2 convolution: [8, cout, cin].
  this->add_parameter(weight, "weight", kaiming<T>({8, std::size_t(co), std::size_t(ci)}, ci, rng));
}

template <typename T>
Tensor<T> ConvTranspose3d<T>::operator()(const Tensor<T>& x) const {
  if (x.rank() != 4) fail(ErrorCode::kDimension, "conv_transpose3d: input must be [D,H,W,C], got " + to_string(x.shape()));
  const auto g = kernels::ConvGeometry::make({int(x.dim(0)) * 2, int(x.dim(1)) * 2, int(x.dim(2)) * 2}, cout, cin,
                                             {2, 2, 2}, {2, 2, 2}, {0, 0, 0});
  return conv_transpose(x, weight.tensor, g);
}

template <typename T>
Conv2d<T>::Conv2d(int ci, int co, int k, int s, int p, Rng& rng, bool with_bias)
    : cin(ci), cout(co), kernel(k), stride(s), pad(p) {
  this->add_parameter(weight, "weight", kaiming<T>({std::size_t(k * k), std::size_t(ci), std::size_t(co)}, k * k * ci, rng));
  if (with_bias) this->add_parameter(bias, "bias", Tensor<T>({std::size_t(co)}));
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  if (x.rank() != 3) fail(ErrorCode::kDimension, "conv2d: input must be [H,W,C], got " + to_string(x.shape()));
  const auto g = kernels::ConvGeometry::make({1, int(x.dim(0)), int(x.dim(1))}, cin, cout, {1, kernel, kernel},
                                             {1, stride, stride}, {0, pad, pad});
  auto y = conv(x, weight.tensor, g);
  return bias.tensor.defined() ? add_bias(y, bias.tensor) : y;
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(int dim, int h, Rng& rng)
    : heads(h), q_proj(dim, dim, rng), k_proj(dim, dim, rng), v_proj(dim, dim, rng), out_proj(dim, dim, rng) {
  if (h < 1 || dim % h != 0) fail(ErrorCode::kDimension, "attention: heads must divide the width");
  this->add_child(q_proj, "q");
  this->add_child(k_proj, "k");
  this->add_child(v_proj, "v");
  this->add_child(out_proj, "out");
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::operator()(const Tensor<T>& query, const Tensor<T>& context) const {
  return out_proj(attention(q_proj(query), k_proj(context), v_proj(context), heads));
}

template <typename T>
Mlp<T>::Mlp(int dim, int hidden, Rng& rng) : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {
  this->add_child(fc1, "fc1");
  this->add_child(fc2, "fc2");
}

template <typename T>
Tensor<T> Mlp<T>::operator()(const Tensor<T>& x) const {
  return fc2(gelu(fc1(x)));
}

template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;
template class Conv3d<float>;
template class Conv3d<double>;
template class ConvTranspose3d<float>;
template class ConvTranspose3d<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;
template class Mlp<float>;
template class Mlp<double>;

}  // namespace mvnet::nn
