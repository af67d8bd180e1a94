#pragma once

#include <cstdint>
#include <vector>

#include "mvnet/nn/kernels.hpp"
#include "mvnet/nn/tensor.hpp"

// Differentiable tensor operations. All tensors are row-major; 2-D operands
// are [rows, cols] and grid tensors are channels-last [D, H, W, C] (or
// [H, W, C] for images). Shape violations raise ErrorCode::kDimension with the
// op name and the offending axes.

namespace mvnet::nn {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T offset);

// x [.., c] + b [c], broadcast over all leading axes.
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x [m, k] * w [k, n] (+ b [n] when defined).
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
// Exact (erf) GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
// Softmax over the last axis.
template <typename T> Tensor<T> softmax(const Tensor<T>& x);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

// Per-channel normalization over all rows of x [.., c]. In training mode the
// batch statistics normalize and the running buffers move with `momentum`;
// in evaluation mode the running buffers normalize.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::vector<T>& running_mean, std::vector<T>& running_var, bool training,
                     T momentum = T(0.1), T eps = T(1e-5));

// x [D, H, W, cin] (or [H, W, cin] with geometry depth 1), w [taps, cin, cout].
template <typename T>
Tensor<T> conv(const Tensor<T>& x, const Tensor<T>& w, const kernels::ConvGeometry& geometry);

// Adjoint of `conv` under `geometry`: x has the geometry's output grid and
// cout channels; the result has the input grid and cin channels.
template <typename T>
Tensor<T> conv_transpose(const Tensor<T>& x, const Tensor<T>& w, const kernels::ConvGeometry& geometry);

// x [H, W, C] -> [H/p, W/p, C] by averaging p x p windows.
template <typename T> Tensor<T> avg_pool2d(const Tensor<T>& x, int window);

// Scaled dot-product attention; the d columns are split into `heads` groups.
// q [nq, d], k [nk, d], v [nk, d] -> [nq, d].
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads);

// Concatenation of tensors that agree on every axis except `axis`.
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// out[i] = sum_j weights[i*fan_in + j] * x[index[i*fan_in + j]] over rows of
// x [n, c]; index -1 contributes nothing. Covers interpolation, projection
// and plain row gathers.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::int64_t>& index, const std::vector<T>& weights,
                      std::size_t fan_in);

// coords [n, a] -> [n, a * 2 * num_freqs]: per axis, per frequency, (sin, cos)
// with angular frequencies pi * max_scale^(f / (num_freqs - 1)).
template <typename T>
Tensor<T> sinusoidal_encode(const Tensor<T>& coords, int num_freqs, T max_scale = T(64));

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> sum_squares(const Tensor<T>& x);
// Sum of squared differences; `b` is treated as a constant target when it
// does not require a gradient.
template <typename T> Tensor<T> squared_distance(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace mvnet::nn
