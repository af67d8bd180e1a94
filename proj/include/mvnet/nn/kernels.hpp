#pragma once

// Dense compute kernels behind the differentiable ops. Each kernel has a
// naive `reference` version used by tests and an OpenMP `parallel` version
// used by the library. Parallel kernels partition work by output element, so
// results are bitwise independent of the thread count.

#include <array>
#include <cstddef>
#include <span>

namespace mvnet::nn::kernels {

// Channels-last convolution over a D x H x W grid. 2D convolution uses D = 1
// with a depth kernel of 1. Weights are laid out [tap][cin][cout] with taps
// enumerated kd-major, then kh, then kw.
struct ConvGeometry {
  std::array<int, 3> in{1, 1, 1};
  std::array<int, 3> out{1, 1, 1};
  std::array<int, 3> kernel{1, 1, 1};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> pad{0, 0, 0};
  int cin = 1;
  int cout = 1;

  static ConvGeometry make(std::array<int, 3> in, int cin, int cout, std::array<int, 3> kernel,
                           std::array<int, 3> stride, std::array<int, 3> pad);

  int taps() const { return kernel[0] * kernel[1] * kernel[2]; }
  std::size_t in_cells() const { return std::size_t(in[0]) * in[1] * in[2]; }
  std::size_t out_cells() const { return std::size_t(out[0]) * out[1] * out[2]; }
  std::size_t weight_size() const { return std::size_t(taps()) * cin * cout; }
};

namespace reference {

// c[m x n] (+)= op(a) * op(b); op(a) is m x k, op(b) is k x n.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, std::span<const T> a, std::span<const T> b,
          std::span<T> c, bool accumulate);

template <typename T>
void conv_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y);
template <typename T>
void conv_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w, std::span<T> dx);
template <typename T>
void conv_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy, std::span<T> dw);

}  // namespace reference

namespace parallel {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, std::span<const T> a, std::span<const T> b,
          std::span<T> c, bool accumulate);

// Outputs are overwritten (forward, backward_input) or accumulated (backward_weight).
template <typename T>
void conv_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y);
template <typename T>
void conv_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w, std::span<T> dx);
template <typename T>
void conv_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy, std::span<T> dw);

}  // namespace parallel

}  // namespace mvnet::nn::kernels
