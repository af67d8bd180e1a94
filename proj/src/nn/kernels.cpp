#include "mvnet/nn/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <sstream>

#include "mvnet/error.hpp"
#include "mvnet/parallel.hpp"

namespace mvnet::nn::kernels {

ConvGeometry ConvGeometry::make(std::array<int, 3> in, int cin, int cout, std::array<int, 3> kernel,
                                std::array<int, 3> stride, std::array<int, 3> pad) {
  ConvGeometry g;
  g.in = in;
  g.kernel = kernel;
  g.stride = stride;
  g.pad = pad;
  g.cin = cin;
  g.cout = cout;
  for (int a = 0; a < 3; ++a) {
    const int span = in[a] + 2 * pad[a] - kernel[a];
    if (in[a] < 1 || kernel[a] < 1 || stride[a] < 1 || pad[a] < 0 || span < 0) {
      std::ostringstream os;
      os << "conv: axis " << a << " has input " << in[a] << ", kernel " << kernel[a] << ", stride " << stride[a]
         << ", pad " << pad[a];
      fail(ErrorCode::kDimension, os.str());
    }
    g.out[a] = span / stride[a] + 1;
  }
  return g;
}

namespace {

inline std::size_t cell(const std::array<int, 3>& dims, int d, int h, int w) {
  return (std::size_t(d) * dims[1] + h) * dims[2] + w;
}

}  // namespace

// ---------------------------------------------------------------------------
// Reference kernels: straightforward loops, one output scalar at a time.

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, std::span<const T> a, std::span<const T> b,
          std::span<T> c, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int p = 0; p < k; ++p) {
        const T av = trans_a ? a[std::size_t(p) * m + i] : a[std::size_t(i) * k + p];
        const T bv = trans_b ? b[std::size_t(j) * k + p] : b[std::size_t(p) * n + j];
        acc += av * bv;
      }
      T& out = c[std::size_t(i) * n + j];
      out = accumulate ? out + acc : acc;
    }
  }
}

template <typename T>
void conv_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y) {
  for (int od = 0; od < g.out[0]; ++od)
    for (int oh = 0; oh < g.out[1]; ++oh)
      for (int ow = 0; ow < g.out[2]; ++ow)
        for (int co = 0; co < g.cout; ++co) {
          T acc = 0;
          for (int kd = 0; kd < g.kernel[0]; ++kd)
            for (int kh = 0; kh < g.kernel[1]; ++kh)
              for (int kw = 0; kw < g.kernel[2]; ++kw) {
                const int id = od * g.stride[0] - g.pad[0] + kd;
                const int ih = oh * g.stride[1] - g.pad[1] + kh;
                const int iw = ow * g.stride[2] - g.pad[2] + kw;
                if (id < 0 || ih < 0 || iw < 0 || id >= g.in[0] || ih >= g.in[1] || iw >= g.in[2]) continue;
                const int tap = (kd * g.kernel[1] + kh) * g.kernel[2] + kw;
                for (int ci = 0; ci < g.cin; ++ci) {
                  acc += x[cell(g.in, id, ih, iw) * g.cin + ci] * w[(std::size_t(tap) * g.cin + ci) * g.cout + co];
                }
              }
          y[cell(g.out, od, oh, ow) * g.cout + co] = acc;
        }
}

template <typename T>
void conv_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w, std::span<T> dx) {
  std::fill(dx.begin(), dx.end(), T(0));
  for (int od = 0; od < g.out[0]; ++od)
    for (int oh = 0; oh < g.out[1]; ++oh)
      for (int ow = 0; ow < g.out[2]; ++ow)
        for (int kd = 0; kd < g.kernel[0]; ++kd)
          for (int kh = 0; kh < g.kernel[1]; ++kh)
            for (int kw = 0; kw < g.kernel[2]; ++kw) {
              const int id = od * g.stride[0] - g.pad[0] + kd;
              const int ih = oh * g.stride[1] - g.pad[1] + kh;
              const int iw = ow * g.stride[2] - g.pad[2] + kw;
              if (id < 0 || ih < 0 || iw < 0 || id >= g.in[0] || ih >= g.in[1] || iw >= g.in[2]) continue;
              const int tap = (kd * g.kernel[1] + kh) * g.kernel[2] + kw;
              for (int ci = 0; ci < g.cin; ++ci)
                for (int co = 0; co < g.cout; ++co)
                  dx[cell(g.in, id, ih, iw) * g.cin + ci] +=
                      w[(std::size_t(tap) * g.cin + ci) * g.cout + co] * dy[cell(g.out, od, oh, ow) * g.cout + co];
            }
}

template <typename T>
void conv_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy, std::span<T> dw) {
  for (int od = 0; od < g.out[0]; ++od)
    for (int oh = 0; oh < g.out[1]; ++oh)
      for (int ow = 0; ow < g.out[2]; ++ow)
        for (int kd = 0; kd < g.kernel[0]; ++kd)
          for (int kh = 0; kh < g.kernel[1]; ++kh)
            for (int kw = 0; kw < g.kernel[2]; ++kw) {
              const int id = od * g.stride[0] - g.pad[0] + kd;
              const int ih = oh * g.stride[1] - g.pad[1] + kh;
              const int iw = ow * g.stride[2] - g.pad[2] + kw;
              if (id < 0 || ih < 0 || iw < 0 || id >= g.in[0] || ih >= g.in[1] || iw >= g.in[2]) continue;
              const int tap = (kd * g.kernel[1] + kh) * g.kernel[2] + kw;
              for (int ci = 0; ci < g.cin; ++ci)
                for (int co = 0; co < g.cout; ++co)
                  dw[(std::size_t(tap) * g.cin + ci) * g.cout + co] +=
                      x[cell(g.in, id, ih, iw) * g.cin + ci] * dy[cell(g.out, od, oh, ow) * g.cout + co];
            }
}

}  // namespace reference

// ---------------------------------------------------------------------------
// Parallel kernels.

namespace parallel {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, std::span<const T> a, std::span<const T> b,
          std::span<T> c, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  // Fixed row blocks, so the arithmetic per block does not depend on how
  // many threads share them.
  constexpr int kBlock = 64;
  const CMap A(a.data(), trans_a ? k : m, trans_a ? m : k);
  const CMap B(b.data(), trans_b ? n : k, trans_b ? k : n);
  const int blocks = (m + kBlock - 1) / kBlock;
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (int blk = 0; blk < blocks; ++blk) {
    const int r0 = blk * kBlock, rows = std::min(kBlock, m - r0);
    Eigen::Map<Mat> C(c.data() + std::size_t(r0) * n, rows, n);
    if (!accumulate) C.setZero();
    if (!trans_a && !trans_b) C.noalias() += A.middleRows(r0, rows) * B;
    else if (!trans_a) C.noalias() += A.middleRows(r0, rows) * B.transpose();
    else if (!trans_b) C.noalias() += A.middleCols(r0, rows).transpose() * B;
    else C.noalias() += A.middleCols(r0, rows).transpose() * B.transpose();
  }
}

template <typename T>
void conv_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y) {
  const long cells = static_cast<long>(g.out_cells());
  const int cin = g.cin, cout = g.cout;
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (long o = 0; o < cells; ++o) {
    const int ow = static_cast<int>(o % g.out[2]);
    const int oh = static_cast<int>((o / g.out[2]) % g.out[1]);
    const int od = static_cast<int>(o / (long(g.out[2]) * g.out[1]));
    T* acc = y.data() + std::size_t(o) * cout;
    std::fill(acc, acc + cout, T(0));
    for (int kd = 0; kd < g.kernel[0]; ++kd) {
      const int id = od * g.stride[0] - g.pad[0] + kd;
      if (id < 0 || id >= g.in[0]) continue;
      for (int kh = 0; kh < g.kernel[1]; ++kh) {
        const int ih = oh * g.stride[1] - g.pad[1] + kh;
        if (ih < 0 || ih >= g.in[1]) continue;
        for (int kw = 0; kw < g.kernel[2]; ++kw) {
          const int iw = ow * g.stride[2] - g.pad[2] + kw;
          if (iw < 0 || iw >= g.in[2]) continue;
          const int tap = (kd * g.kernel[1] + kh) * g.kernel[2] + kw;
          const T* xin = x.data() + cell(g.in, id, ih, iw) * cin;
          const T* wt = w.data() + std::size_t(tap) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const T xv = xin[ci];
            if (xv == T(0)) continue;
            const T* wrow = wt + std::size_t(ci) * cout;
            for (int co = 0; co < cout; ++co) acc[co] += xv * wrow[co];
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w, std::span<T> dx) {
  const long cells = static_cast<long>(g.in_cells());
  const int cin = g.cin, cout = g.cout;
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (long i = 0; i < cells; ++i) {
    const int iw = static_cast<int>(i % g.in[2]);
    const int ih = static_cast<int>((i / g.in[2]) % g.in[1]);
    const int id = static_cast<int>(i / (long(g.in[2]) * g.in[1]));
    T* acc = dx.data() + std::size_t(i) * cin;
    std::fill(acc, acc + cin, T(0));
    for (int kd = 0; kd < g.kernel[0]; ++kd) {
      const int td = id + g.pad[0] - kd;
      if (td < 0 || td % g.stride[0] != 0 || td / g.stride[0] >= g.out[0]) continue;
      for (int kh = 0; kh < g.kernel[1]; ++kh) {
        const int th = ih + g.pad[1] - kh;
        if (th < 0 || th % g.stride[1] != 0 || th / g.stride[1] >= g.out[1]) continue;
        for (int kw = 0; kw < g.kernel[2]; ++kw) {
          const int tw = iw + g.pad[2] - kw;
          if (tw < 0 || tw % g.stride[2] != 0 || tw / g.stride[2] >= g.out[2]) continue;
          const int tap = (kd * g.kernel[1] + kh) * g.kernel[2] + kw;
          const T* dyrow = dy.data() + cell(g.out, td / g.stride[0], th / g.stride[1], tw / g.stride[2]) * cout;
          const T* wt = w.data() + std::size_t(tap) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const T* wrow = wt + std::size_t(ci) * cout;
            T s = 0;
            for (int co = 0; co < cout; ++co) s += wrow[co] * dyrow[co];
            acc[ci] += s;
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy, std::span<T> dw) {
  const int taps = g.taps();
  const int cin = g.cin, cout = g.cout;
  const long cells = static_cast<long>(g.out_cells());
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (int tap = 0; tap < taps; ++tap) {
    const int kw = tap % g.kernel[2];
    const int kh = (tap / g.kernel[2]) % g.kernel[1];
    const int kd = tap / (g.kernel[2] * g.kernel[1]);
    T* wt = dw.data() + std::size_t(tap) * cin * cout;
    for (long o = 0; o < cells; ++o) {
      const int ow = static_cast<int>(o % g.out[2]);
      const int oh = static_cast<int>((o / g.out[2]) % g.out[1]);
      const int od = static_cast<int>(o / (long(g.out[2]) * g.out[1]));
      const int id = od * g.stride[0] - g.pad[0] + kd;
      const int ih = oh * g.stride[1] - g.pad[1] + kh;
      const int iw = ow * g.stride[2] - g.pad[2] + kw;
      if (id < 0 || ih < 0 || iw < 0 || id >= g.in[0] || ih >= g.in[1] || iw >= g.in[2]) continue;
      const T* xin = x.data() + cell(g.in, id, ih, iw) * cin;
      const T* dyrow = dy.data() + std::size_t(o) * cout;
      for (int ci = 0; ci < cin; ++ci) {
        const T xv = xin[ci];
        if (xv == T(0)) continue;
        T* wrow = wt + std::size_t(ci) * cout;
        for (int co = 0; co < cout; ++co) wrow[co] += xv * dyrow[co];
      }
    }
  }
}

}  // namespace parallel

#define MVNET_INSTANTIATE_KERNELS(NS, T)                                                                      \
  template void NS::gemm<T>(bool, bool, int, int, int, std::span<const T>, std::span<const T>, std::span<T>, \
                            bool);                                                                           \
  template void NS::conv_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, std::span<T>); \
  template void NS::conv_backward_input<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,        \
                                           std::span<T>);                                                    \
  template void NS::conv_backward_weight<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,       \
                                            std::span<T>);

MVNET_INSTANTIATE_KERNELS(reference, float)
MVNET_INSTANTIATE_KERNELS(reference, double)
MVNET_INSTANTIATE_KERNELS(parallel, float)
MVNET_INSTANTIATE_KERNELS(parallel, double)

}  // namespace mvnet::nn::kernels
