#include "mvnet/nn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "mvnet/error.hpp"
#include "mvnet/parallel.hpp"

namespace mvnet::nn {
namespace {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
bool wants(const NodePtr<T>& p) {
  return p && p->requires_grad;
}

[[noreturn]] void dim_error(const char* op, const std::string& what) {
  fail(ErrorCode::kDimension, std::string(op) + ": " + what);
}

template <typename T>
void expect_rank(const char* op, const char* name, const Tensor<T>& t, std::size_t rank) {
  if (!t.defined() || t.rank() != rank) {
    std::ostringstream os;
    os << name << " must have rank " << rank << ", got " << (t.defined() ? to_string(t.shape()) : "undefined");
    dim_error(op, os.str());
  }
}

template <typename T>
void expect_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) dim_error(op, "shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
}

template <typename T>
Tensor<T> elementwise_binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, T sa, T sb, bool product) {
  expect_same_shape(op, a, b);
  const std::size_t n = a.numel();
  std::vector<T> out(n);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = product ? av[i] * bv[i] : sa * av[i] + sb * bv[i];
  return make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, op,
                        [sa, sb, product](Node<T>& self) {
                          auto& pa = self.parents[0];
                          auto& pb = self.parents[1];
                          const std::size_t m = self.grad.size();
                          if (wants(pa)) {
                            for (std::size_t i = 0; i < m; ++i)
                              pa->grad[i] += product ? self.grad[i] * pb->value[i] : sa * self.grad[i];
                          }
                          if (wants(pb)) {
                            for (std::size_t i = 0; i < m; ++i)
                              pb->grad[i] += product ? self.grad[i] * pa->value[i] : sb * self.grad[i];
                          }
                        });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary<T>("add", a, b, T(1), T(1), false);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary<T>("sub", a, b, T(1), T(-1), false);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary<T>("mul", a, b, T(0), T(0), true);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result<T>(a.shape(), std::move(out), {a.node()}, "scale", [factor](Node<T>& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += factor * self.grad[i];
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += offset;
  return make_result<T>(a.shape(), std::move(out), {a.node()}, "add_scalar", [](Node<T>& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  expect_rank("add_bias", "bias", bias, 1);
  const std::size_t c = bias.numel();
  if (x.rank() == 0 || x.shape().back() != c) {
    dim_error("add_bias", "last axis of " + to_string(x.shape()) + " does not match bias " + to_string(bias.shape()));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  const auto b = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % c];
  return make_result<T>(x.shape(), std::move(out), {x.node(), bias.node()}, "add_bias", [c](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pb = self.parents[1];
    if (wants(px))
      for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
    if (wants(pb))
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i % c] += self.grad[i];
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  return linear(a, b, Tensor<T>());
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  expect_rank("linear", "input", x, 2);
  expect_rank("linear", "weight", w, 2);
  const int m = static_cast<int>(x.dim(0));
  const int k = static_cast<int>(x.dim(1));
  const int n = static_cast<int>(w.dim(1));
  if (w.dim(0) != x.dim(1)) {
    dim_error("linear", "input axis 1 (" + std::to_string(k) + ") does not match weight axis 0 (" +
                            std::to_string(w.dim(0)) + ")");
  }
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != w.dim(1))) {
    dim_error("linear", "bias " + to_string(b.shape()) + " does not match weight axis 1 (" + std::to_string(n) + ")");
  }
  std::vector<T> out(std::size_t(m) * n);
  kernels::parallel::gemm<T>(false, false, m, n, k, x.data(), w.data(), out, false);
  if (has_bias) {
    const auto bv = b.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out[std::size_t(i) * n + j] += bv[j];
  }
  std::vector<NodePtr<T>> parents{x.node(), w.node()};
  if (has_bias) parents.push_back(b.node());
  return make_result<T>({std::size_t(m), std::size_t(n)}, std::move(out), std::move(parents), "linear",
                        [m, n, k, has_bias](Node<T>& self) {
                          auto& px = self.parents[0];
                          auto& pw = self.parents[1];
                          const std::span<const T> dy(self.grad);
                          if (wants(px))
                            kernels::parallel::gemm<T>(false, true, m, k, n, dy, pw->value, px->grad, true);
                          if (wants(pw))
                            kernels::parallel::gemm<T>(true, false, k, n, m, px->value, dy, pw->grad, true);
                          if (has_bias && wants(self.parents[2])) {
                            auto& g = self.parents[2]->grad;
                            for (int i = 0; i < m; ++i)
                              for (int j = 0; j < n; ++j) g[j] += dy[std::size_t(i) * n + j];
                          }
                        });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return make_result<T>(x.shape(), std::move(out), {x.node()}, "relu", [](Node<T>& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p->value[i] > T(0)) p->grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * inv_sqrt2));
  return make_result<T>(x.shape(), std::move(out), {x.node()}, "gelu", [inv_sqrt2](Node<T>& self) {
    auto& p = self.parents[0];
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T v = p->value[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      p->grad[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-xv[i]));
  auto saved = std::make_shared<std::vector<T>>(out);
  return make_result<T>(x.shape(), std::move(out), {x.node()}, "sigmoid", [saved](Node<T>& self) {
    auto& p = self.parents[0];
    const auto& s = *saved;
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * s[i] * (T(1) - s[i]);
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() == 0) dim_error("softmax", "needs rank >= 1");
  const std::size_t c = x.shape().back();
  const std::size_t rows = c == 0 ? 0 : x.numel() / c;
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * c;
    T* o = out.data() + r * c;
    const T mx = *std::max_element(in, in + c);
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < c; ++j) o[j] /= z;
  }
  auto saved = std::make_shared<std::vector<T>>(out);
  return make_result<T>(x.shape(), std::move(out), {x.node()}, "softmax", [saved, rows, c](Node<T>& self) {
    auto& p = self.parents[0];
    const auto& s = *saved;
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[r * c + j] * s[r * c + j];
      for (std::size_t j = 0; j < c; ++j) p->grad[r * c + j] += s[r * c + j] * (self.grad[r * c + j] - dot);
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  expect_rank("layer_norm", "gamma", gamma, 1);
  expect_rank("layer_norm", "beta", beta, 1);
  const std::size_t c = gamma.numel();
  if (x.rank() == 0 || x.shape().back() != c || beta.numel() != c) {
    dim_error("layer_norm", "last axis of " + to_string(x.shape()) + " does not match gamma " + to_string(gamma.shape()));
  }
  const std::size_t rows = x.numel() / c;
  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  const auto xv = x.data();
  const auto g = gamma.data();
  const auto b = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += xv[r * c + j];
    mu /= T(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xv[r * c + j] - mu) * (xv[r * c + j] - mu);
    var /= T(c);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (xv[r * c + j] - mu) * is;
      (*xhat)[r * c + j] = h;
      out[r * c + j] = g[j] * h + b[j];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()}, "layer_norm",
                        [xhat, inv_std, rows, c](Node<T>& self) {
                          auto& px = self.parents[0];
                          auto& pg = self.parents[1];
                          auto& pb = self.parents[2];
                          const auto& h = *xhat;
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* dy = self.grad.data() + r * c;
                            if (wants(pg))
                              for (std::size_t j = 0; j < c; ++j) pg->grad[j] += dy[j] * h[r * c + j];
                            if (wants(pb))
                              for (std::size_t j = 0; j < c; ++j) pb->grad[j] += dy[j];
                            if (wants(px)) {
                              T m1 = 0, m2 = 0;
                              for (std::size_t j = 0; j < c; ++j) {
                                const T dh = dy[j] * pg->value[j];
                                m1 += dh;
                                m2 += dh * h[r * c + j];
                              }
                              m1 /= T(c);
                              m2 /= T(c);
                              for (std::size_t j = 0; j < c; ++j) {
                                const T dh = dy[j] * pg->value[j];
                                px->grad[r * c + j] += (*inv_std)[r] * (dh - m1 - h[r * c + j] * m2);
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, std::vector<T>& running_mean,
                     std::vector<T>& running_var, bool training, T momentum, T eps) {
  expect_rank("batch_norm", "gamma", gamma, 1);
  const std::size_t c = gamma.numel();
  if (x.rank() == 0 || x.shape().back() != c || beta.numel() != c || running_mean.size() != c ||
      running_var.size() != c) {
    dim_error("batch_norm", "channel axis of " + to_string(x.shape()) + " does not match " + std::to_string(c) +
                                " channels");
  }
  const std::size_t rows = x.numel() / c;
  const auto xv = x.data();
  const auto g = gamma.data();
  const auto b = beta.data();
  std::vector<T> mean(c, T(0)), var(c, T(0));
  if (training) {
    if (rows < 2) dim_error("batch_norm", "training mode needs at least 2 rows");
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) mean[j] += xv[r * c + j];
    for (auto& m : mean) m /= T(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const T d = xv[r * c + j] - mean[j];
        var[j] += d * d;
      }
    for (auto& v : var) v /= T(rows);
    const T unbias = T(rows) / T(rows - 1);
    for (std::size_t j = 0; j < c; ++j) {
      running_mean[j] = (T(1) - momentum) * running_mean[j] + momentum * mean[j];
      running_var[j] = (T(1) - momentum) * running_var[j] + momentum * var[j] * unbias;
    }
  } else {
    mean = running_mean;
    var = running_var;
  }
  auto inv_std = std::make_shared<std::vector<T>>(c);
  for (std::size_t j = 0; j < c; ++j) (*inv_std)[j] = T(1) / std::sqrt(var[j] + eps);
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (xv[r * c + j] - mean[j]) * (*inv_std)[j];
      (*xhat)[r * c + j] = h;
      out[r * c + j] = g[j] * h + b[j];
    }
  return make_result<T>(
      x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()}, "batch_norm",
      [xhat, inv_std, rows, c, training](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        const auto& h = *xhat;
        const auto& dy = self.grad;
        std::vector<T> sum_dy(c, T(0)), sum_dyh(c, T(0));
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            sum_dy[j] += dy[r * c + j];
            sum_dyh[j] += dy[r * c + j] * h[r * c + j];
          }
        if (wants(pg))
          for (std::size_t j = 0; j < c; ++j) pg->grad[j] += sum_dyh[j];
        if (wants(pb))
          for (std::size_t j = 0; j < c; ++j) pb->grad[j] += sum_dy[j];
        if (!wants(px)) return;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            const T gs = pg->value[j] * (*inv_std)[j];
            if (training) {
              px->grad[r * c + j] +=
                  gs * (dy[r * c + j] - sum_dy[j] / T(rows) - h[r * c + j] * sum_dyh[j] / T(rows));
            } else {
              px->grad[r * c + j] += gs * dy[r * c + j];
            }
          }
      });
}

namespace {

template <typename T>
Shape grid_shape(const Tensor<T>& like, const std::array<int, 3>& dims, int channels) {
  if (like.rank() == 3) return {std::size_t(dims[1]), std::size_t(dims[2]), std::size_t(channels)};
  return {std::size_t(dims[0]), std::size_t(dims[1]), std::size_t(dims[2]), std::size_t(channels)};
}

template <typename T>
void check_grid(const char* op, const Tensor<T>& x, const std::array<int, 3>& dims, int channels) {
  if (x.rank() != 3 && x.rank() != 4) dim_error(op, "input must be [H,W,C] or [D,H,W,C], got " + to_string(x.shape()));
  const Shape want = grid_shape(x, dims, channels);
  if (x.rank() == 3 && dims[0] != 1) dim_error(op, "rank-3 input needs a depth-1 geometry");
  if (x.shape() != want) dim_error(op, "input " + to_string(x.shape()) + " does not match geometry " + to_string(want));
}

template <typename T>
void check_weight(const char* op, const Tensor<T>& w, const kernels::ConvGeometry& g) {
  const Shape want{std::size_t(g.taps()), std::size_t(g.cin), std::size_t(g.cout)};
  if (w.shape() != want) dim_error(op, "weight " + to_string(w.shape()) + " should be " + to_string(want));
}

}  // namespace

template <typename T>
Tensor<T> conv(const Tensor<T>& x, const Tensor<T>& w, const kernels::ConvGeometry& g) {
  check_grid("conv", x, g.in, g.cin);
  check_weight("conv", w, g);
  std::vector<T> out(g.out_cells() * g.cout);
  kernels::parallel::conv_forward<T>(g, x.data(), w.data(), out);
  return make_result<T>(grid_shape(x, g.out, g.cout), std::move(out), {x.node(), w.node()}, "conv",
                        [g](Node<T>& self) {
                          auto& px = self.parents[0];
                          auto& pw = self.parents[1];
                          if (wants(px)) {
                            std::vector<T> dx(px->value.size());
                            kernels::parallel::conv_backward_input<T>(g, self.grad, pw->value, dx);
                            for (std::size_t i = 0; i < dx.size(); ++i) px->grad[i] += dx[i];
                          }
                          if (wants(pw)) kernels::parallel::conv_backward_weight<T>(g, px->value, self.grad, pw->grad);
                        });
}

template <typename T>
Tensor<T> conv_transpose(const Tensor<T>& x, const Tensor<T>& w, const kernels::ConvGeometry& g) {
  check_grid("conv_transpose", x, g.out, g.cout);
  check_weight("conv_transpose", w, g);
  std::vector<T> out(g.in_cells() * g.cin);
  kernels::parallel::conv_backward_input<T>(g, x.data(), w.data(), out);
  return make_result<T>(grid_shape(x, g.in, g.cin), std::move(out), {x.node(), w.node()}, "conv_transpose",
                        [g](Node<T>& self) {
                          auto& px = self.parents[0];
                          auto& pw = self.parents[1];
                          if (wants(px)) {
                            std::vector<T> dx(px->value.size());
                            kernels::parallel::conv_forward<T>(g, self.grad, pw->value, dx);
                            for (std::size_t i = 0; i < dx.size(); ++i) px->grad[i] += dx[i];
                          }
                          if (wants(pw)) kernels::parallel::conv_backward_weight<T>(g, self.grad, px->value, pw->grad);
                        });
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int window) {
  expect_rank("avg_pool2d", "input", x, 3);
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (window < 1 || h % window != 0 || w % window != 0) {
    dim_error("avg_pool2d", "window " + std::to_string(window) + " does not divide " + to_string(x.shape()));
  }
  const std::size_t p = window, oh = h / p, ow = w / p;
  const T inv = T(1) / T(p * p);
  std::vector<T> out(oh * ow * c, T(0));
  const auto xv = x.data();
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t q = 0; q < w; ++q)
      for (std::size_t k = 0; k < c; ++k) out[((r / p) * ow + q / p) * c + k] += inv * xv[(r * w + q) * c + k];
  return make_result<T>({oh, ow, c}, std::move(out), {x.node()}, "avg_pool2d", [h, w, c, p, ow, inv](Node<T>& self) {
    auto& px = self.parents[0];
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t q = 0; q < w; ++q)
        for (std::size_t k = 0; k < c; ++k) px->grad[(r * w + q) * c + k] += inv * self.grad[((r / p) * ow + q / p) * c + k];
  });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads) {
  expect_rank("attention", "query", q, 2);
  expect_rank("attention", "key", k, 2);
  expect_rank("attention", "value", v, 2);
  const std::size_t nq = q.dim(0), nk = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d) dim_error("attention", "feature axis 1 differs between query/key/value");
  if (v.dim(0) != nk) dim_error("attention", "key and value axis 0 differ");
  if (heads < 1 || d % heads != 0) dim_error("attention", std::to_string(heads) + " heads do not divide width " + std::to_string(d));
  const std::size_t dh = d / heads;
  const T sc = T(1) / std::sqrt(T(dh));
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Strided = Eigen::Stride<Eigen::Dynamic, 1>;
  using View = Eigen::Map<Mat, 0, Strided>;
  using CView = Eigen::Map<const Mat, 0, Strided>;
  const Strided stride(Eigen::Index(d), 1);
  // Row-major probabilities per head: [heads][nq][nk].
  auto probs = std::make_shared<std::vector<T>>(std::size_t(heads) * nq * nk);
  std::vector<T> out(nq * d, T(0));
  const T* Q = q.data().data();
  const T* K = k.data().data();
  const T* V = v.data().data();
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (int hd = 0; hd < heads; ++hd) {
    const std::size_t off = std::size_t(hd) * dh;
    Eigen::Map<Mat> P(probs->data() + std::size_t(hd) * nq * nk, Eigen::Index(nq), Eigen::Index(nk));
    P.noalias() = CView(Q + off, nq, dh, stride) * CView(K + off, nk, dh, stride).transpose();
    P *= sc;
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
      auto row = P.row(i);
      row = (row.array() - row.maxCoeff()).exp();
      row /= row.sum();
    }
    View(out.data() + off, nq, dh, stride).noalias() = P * CView(V + off, nk, dh, stride);
  }
  return make_result<T>({nq, d}, std::move(out), {q.node(), k.node(), v.node()}, "attention",
                        [probs, nq, nk, d, dh, heads, sc](Node<T>& self) {
                          auto& pq = self.parents[0];
                          auto& pk = self.parents[1];
                          auto& pv = self.parents[2];
                          const Strided st(Eigen::Index(d), 1);
                          const bool gq = wants(pq), gk = wants(pk), gv = wants(pv);
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
                          for (int hd = 0; hd < heads; ++hd) {
                            const std::size_t off = std::size_t(hd) * dh;
                            Eigen::Map<const Mat> P(probs->data() + std::size_t(hd) * nq * nk, Eigen::Index(nq),
                                                    Eigen::Index(nk));
                            const CView dO(self.grad.data() + off, nq, dh, st);
                            const CView Vh(pv->value.data() + off, nk, dh, st);
                            if (gv) View(pv->grad.data() + off, nk, dh, st).noalias() += P.transpose() * dO;
                            if (!gq && !gk) continue;
                            Mat dS = dO * Vh.transpose();
                            const Eigen::Matrix<T, Eigen::Dynamic, 1> dot = (dS.array() * P.array()).rowwise().sum();
                            dS = (P.array() * (dS.colwise() - dot).array()) * sc;
                            if (gq) View(pq->grad.data() + off, nq, dh, st).noalias() += dS * CView(pk->value.data() + off, nk, dh, st);
                            if (gk) View(pk->grad.data() + off, nk, dh, st).noalias() += dS.transpose() * CView(pq->value.data() + off, nq, dh, st);
                          }
                        });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) dim_error("concat", "no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) dim_error("concat", "axis " + std::to_string(axis) + " out of range for " + to_string(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) dim_error("concat", "rank mismatch " + to_string(p.shape()) + " vs " + to_string(ref));
    for (std::size_t a = 0; a < ref.size(); ++a) {
      if (a != axis && p.dim(a) != ref[a]) {
        dim_error("concat", "axis " + std::to_string(a) + " differs: " + to_string(p.shape()) + " vs " + to_string(ref));
      }
    }
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= ref[a];
  for (std::size_t a = axis + 1; a < ref.size(); ++a) inner *= ref[a];
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
  const std::size_t row = out_shape[axis] * inner;
  std::vector<T> out(numel(out_shape));
  std::vector<NodePtr<T>> parents;
  std::size_t col = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto src = parts[i].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.data() + o * widths[i], widths[i], out.data() + o * row + col);
    col += widths[i];
    parents.push_back(parts[i].node());
  }
  return make_result<T>(out_shape, std::move(out), std::move(parents), "concat", [widths, outer, row](Node<T>& self) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      auto& p = self.parents[i];
      if (wants(p)) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t t = 0; t < widths[i]; ++t) p->grad[o * widths[i] + t] += self.grad[o * row + c + t];
      }
      c += widths[i];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) dim_error("reshape", "cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {x.node()}, "reshape", [](Node<T>& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::int64_t>& index, const std::vector<T>& weights,
                      std::size_t fan_in) {
  expect_rank("gather_rows", "input", x, 2);
  if (fan_in == 0 || index.size() % fan_in != 0 || weights.size() != index.size()) {
    dim_error("gather_rows", "index/weight lists do not form rows of fan-in " + std::to_string(fan_in));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), m = index.size() / fan_in;
  for (auto i : index) {
    if (i < -1 || i >= static_cast<std::int64_t>(n)) dim_error("gather_rows", "index " + std::to_string(i) + " out of range for axis 0 = " + std::to_string(n));
  }
  std::vector<T> out(m * c, T(0));
  const auto xv = x.data();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < fan_in; ++j) {
      const auto src = index[r * fan_in + j];
      if (src < 0) continue;
      const T wt = weights[r * fan_in + j];
      for (std::size_t t = 0; t < c; ++t) out[r * c + t] += wt * xv[std::size_t(src) * c + t];
    }
  auto idx = std::make_shared<std::vector<std::int64_t>>(index);
  auto wts = std::make_shared<std::vector<T>>(weights);
  return make_result<T>({m, c}, std::move(out), {x.node()}, "gather_rows", [idx, wts, m, c, fan_in](Node<T>& self) {
    auto& p = self.parents[0];
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < fan_in; ++j) {
        const auto src = (*idx)[r * fan_in + j];
        if (src < 0) continue;
        const T wt = (*wts)[r * fan_in + j];
        for (std::size_t t = 0; t < c; ++t) p->grad[std::size_t(src) * c + t] += wt * self.grad[r * c + t];
      }
  });
}

template <typename T>
Tensor<T> sinusoidal_encode(const Tensor<T>& coords, int num_freqs, T max_scale) {
  expect_rank("sinusoidal_encode", "coords", coords, 2);
  if (num_freqs < 1) dim_error("sinusoidal_encode", "num_freqs must be >= 1");
  const std::size_t n = coords.dim(0), a = coords.dim(1), f = num_freqs;
  auto freq = std::make_shared<std::vector<T>>(f);
  for (std::size_t i = 0; i < f; ++i) {
    const T e = f == 1 ? T(0) : T(i) / T(f - 1);
    (*freq)[i] = std::numbers::pi_v<T> * std::pow(max_scale, e);
  }
  const std::size_t width = a * 2 * f;
  std::vector<T> out(n * width);
  const auto cv = coords.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t ax = 0; ax < a; ++ax)
      for (std::size_t i = 0; i < f; ++i) {
        const T arg = (*freq)[i] * cv[r * a + ax];
        out[r * width + (ax * f + i) * 2] = std::sin(arg);
        out[r * width + (ax * f + i) * 2 + 1] = std::cos(arg);
      }
  return make_result<T>({n, width}, std::move(out), {coords.node()}, "sinusoidal_encode",
                        [freq, n, a, f, width](Node<T>& self) {
                          auto& p = self.parents[0];
                          for (std::size_t r = 0; r < n; ++r)
                            for (std::size_t ax = 0; ax < a; ++ax)
                              for (std::size_t i = 0; i < f; ++i) {
                                const T w = (*freq)[i];
                                const T arg = w * p->value[r * a + ax];
                                const T ds = self.grad[r * width + (ax * f + i) * 2];
                                const T dc = self.grad[r * width + (ax * f + i) * 2 + 1];
                                p->grad[r * a + ax] += w * (ds * std::cos(arg) - dc * std::sin(arg));
                              }
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  return make_result<T>({}, {s}, {x.node()}, "sum", [](Node<T>& self) {
    auto& p = self.parents[0];
    for (auto& g : p->grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) dim_error("mean", "empty tensor");
  return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> sum_squares(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v * v;
  return make_result<T>({}, {s}, {x.node()}, "sum_squares", [](Node<T>& self) {
    auto& p = self.parents[0];
    for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += T(2) * p->value[i] * self.grad[0];
  });
}

template <typename T>
Tensor<T> squared_distance(const Tensor<T>& a, const Tensor<T>& b) {
  expect_same_shape("squared_distance", a, b);
  T s = 0;
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  return make_result<T>({}, {s}, {a.node(), b.node()}, "squared_distance", [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const T g = self.grad[0];
    for (std::size_t i = 0; i < pa->value.size(); ++i) {
      const T d = T(2) * (pa->value[i] - pb->value[i]) * g;
      if (wants(pa)) pa->grad[i] += d;
      if (wants(pb)) pb->grad[i] -= d;
    }
  });
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.numel() == 0) dim_error("mse", "empty tensor");
  return scale(squared_distance(a, b), T(1) / T(a.numel()));
}

#define MVNET_INSTANTIATE_OPS(T)                                                                                    \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                       \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                       \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                       \
  template Tensor<T> scale(const Tensor<T>&, T);                                                                    \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                               \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                                    \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                                        \
  template Tensor<T> gelu(const Tensor<T>&);                                                                        \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                                     \
  template Tensor<T> softmax(const Tensor<T>&);                                                                     \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                           \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::vector<T>&,              \
                                std::vector<T>&, bool, T, T);                                                       \
  template Tensor<T> conv(const Tensor<T>&, const Tensor<T>&, const kernels::ConvGeometry&);                        \
  template Tensor<T> conv_transpose(const Tensor<T>&, const Tensor<T>&, const kernels::ConvGeometry&);              \
  template Tensor<T> avg_pool2d(const Tensor<T>&, int);                                                             \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int);                          \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                                            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                              \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<std::int64_t>&, const std::vector<T>&,         \
                                 std::size_t);                                                                      \
  template Tensor<T> sinusoidal_encode(const Tensor<T>&, int, T);                                                   \
  template Tensor<T> sum(const Tensor<T>&);                                                                         \
  template Tensor<T> mean(const Tensor<T>&);                                                                        \
  template Tensor<T> sum_squares(const Tensor<T>&);                                                                 \
  template Tensor<T> squared_distance(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);

MVNET_INSTANTIATE_OPS(float)
MVNET_INSTANTIATE_OPS(double)

}  // namespace mvnet::nn
