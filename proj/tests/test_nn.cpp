#include <doctest.h>

#include <cmath>
#include <random>

#include "mvnet/error.hpp"
#include "mvnet/nn/gradcheck.hpp"
#include "mvnet/nn/kernels.hpp"
#include "mvnet/nn/layers.hpp"
#include "mvnet/nn/ops.hpp"
#include "mvnet/nn/optim.hpp"

using namespace mvnet;
using namespace mvnet::nn;
using TD = Tensor<double>;

namespace {

TD random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  TD t(shape);
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

std::vector<NamedParameter<double>> no_params() { return {}; }

GradCheckOptions input_check() {
  GradCheckOptions o;
  o.check_inputs = true;
  return o;
}

}  // namespace

TEST_CASE("mse of a tensor with itself is zero with zero gradient") {
  TD u = random_tensor({4, 5}, 1);
  u.set_requires_grad(true);
  TD l = mse(u, u);
  CHECK(l.item() == 0.0);
  l.backward();
  for (double g : u.grad()) CHECK(g == 0.0);
}

TEST_CASE("softmax rows sum to one") {
  TD x = random_tensor({17, 9}, 2, 5.0);
  TD s = softmax(x);
  for (std::size_t r = 0; r < 17; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 9; ++c) total += s[r * 9 + c];
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("elementwise ops match finite differences on several shapes") {
  const std::vector<Shape> shapes = {{3}, {2, 5}, {4, 3}, {1, 7}, {3, 2, 2}};
  for (const auto& s : shapes) {
    CAPTURE(to_string(s));
    auto opts = input_check();
    CHECK(grad_check([](const auto& in) { return mul(add(in[0], in[1]), sub(in[0], in[1])); }, no_params(), {s, s},
                     opts).max_error() < 1e-4);
    CHECK(grad_check([](const auto& in) { return gelu(in[0]); }, no_params(), {s}, opts).max_error() < 1e-4);
    CHECK(grad_check([](const auto& in) { return sigmoid(scale(in[0], 2.0)); }, no_params(), {s}, opts).max_error() <
          1e-4);
    CHECK(grad_check([](const auto& in) { return relu(add_scalar(in[0], 0.1)); }, no_params(), {s}, opts)
              .max_error() < 1e-4);
    CHECK(grad_check([](const auto& in) { return softmax(in[0]); }, no_params(), {s}, opts).max_error() < 1e-4);
    CHECK(grad_check([](const auto& in) { return mean(in[0]); }, no_params(), {s}, opts).max_error() < 1e-4);
    CHECK(grad_check([](const auto& in) { return mse(in[0], in[1]); }, no_params(), {s, s}, opts).max_error() <
          1e-4);
  }
}

TEST_CASE("matmul, concat and gather match finite differences") {
  auto opts = input_check();
  CHECK(grad_check([](const auto& in) { return matmul(in[0], in[1]); }, no_params(), {{3, 4}, {4, 5}}, opts)
            .max_error() < 1e-4);
  CHECK(grad_check([](const auto& in) { return concat<double>({in[0], in[1]}, 1); }, no_params(), {{3, 2}, {3, 4}},
                   opts)
            .max_error() < 1e-4);
  CHECK(grad_check([](const auto& in) { return concat<double>({in[0], in[1]}, 0); }, no_params(), {{2, 3}, {1, 3}},
                   opts)
            .max_error() < 1e-4);
  const std::vector<std::int64_t> idx = {0, 2, -1, 1, 1, 0};
  const std::vector<double> w = {0.3, 0.7, 1.0, 0.5, 0.25, 0.25};
  CHECK(grad_check([&](const auto& in) { return gather_rows(in[0], idx, w, 2); }, no_params(), {{3, 4}}, opts)
            .max_error() < 1e-4);
  CHECK(grad_check([](const auto& in) { return sinusoidal_encode(in[0], 4, 8.0); }, no_params(), {{5, 2}}, opts)
            .max_error() < 1e-4);
  CHECK(grad_check([](const auto& in) { return avg_pool2d(in[0], 2); }, no_params(), {{4, 6, 3}}, opts)
            .max_error() < 1e-4);
}

TEST_CASE("linear layer 4 to 3 passes a tight gradient check") {
  Rng rng(3);
  Linear<double> lin(4, 3, rng);
  fill_normal(lin.bias.tensor, 0.5, rng);
  auto rep = grad_check(lin, [&](const auto& in) { return lin(in[0]); }, {{5, 4}}, input_check());
  INFO(rep.summary());
  CHECK(rep.max_error() < 1e-6);
}

TEST_CASE("normalization layers match finite differences") {
  Rng rng(4);
  LayerNorm<double> ln(6);
  fill_normal(ln.gamma.tensor, 1.0, rng);
  fill_normal(ln.beta.tensor, 1.0, rng);
  auto rep = grad_check(ln, [&](const auto& in) { return ln(in[0]); }, {{5, 6}}, input_check());
  INFO(rep.summary());
  CHECK(rep.max_error() < 1e-4);

  BatchNorm<double> bn(3);
  fill_normal(bn.gamma.tensor, 1.0, rng);
  auto rep2 = grad_check(bn, [&](const auto& in) { return bn(in[0]); }, {{2, 3, 4, 3}}, input_check());
  INFO(rep2.summary());
  CHECK(rep2.max_error() < 1e-4);

  bn.set_training(false);
  auto rep3 = grad_check(bn, [&](const auto& in) { return bn(in[0]); }, {{2, 2, 2, 3}}, input_check());
  CHECK(rep3.max_error() < 1e-4);
}

TEST_CASE("convolutions match finite differences") {
  Rng rng(5);
  Conv3d<double> c3(2, 3, 3, 1, 1, rng);
  auto r1 = grad_check(c3, [&](const auto& in) { return c3(in[0]); }, {{3, 4, 3, 2}}, input_check());
  INFO(r1.summary());
  CHECK(r1.max_error() < 1e-4);

  Conv3d<double> s2(2, 3, 3, 2, 1, rng);
  auto r2 = grad_check(s2, [&](const auto& in) { return s2(in[0]); }, {{4, 4, 2, 2}}, input_check());
  CHECK(r2.max_error() < 1e-4);

  ConvTranspose3d<double> ct(3, 2, rng);
  auto r3 = grad_check(ct, [&](const auto& in) { return ct(in[0]); }, {{2, 1, 2, 3}}, input_check());
  CHECK(r3.max_error() < 1e-4);

  Conv2d<double> c2(3, 4, 3, 2, 1, rng);
  fill_normal(c2.bias.tensor, 0.5, rng);
  auto r4 = grad_check(c2, [&](const auto& in) { return c2(in[0]); }, {{6, 4, 3}}, input_check());
  CHECK(r4.max_error() < 1e-4);
}

TEST_CASE("attention blocks match finite differences") {
  Rng rng(6);
  MultiHeadAttention<double> self_attn(8, 2, rng);
  auto r1 = grad_check(self_attn, [&](const auto& in) { return self_attn(in[0], in[0]); }, {{5, 8}}, input_check());
  INFO(r1.summary());
  CHECK(r1.max_error() < 1e-4);

  MultiHeadAttention<double> cross(8, 4, rng);
  auto r2 = grad_check(cross, [&](const auto& in) { return cross(in[0], in[1]); }, {{3, 8}, {7, 8}}, input_check());
  INFO(r2.summary());
  CHECK(r2.max_error() < 1e-4);

  Mlp<double> mlp(6, 12, rng);
  auto r3 = grad_check(mlp, [&](const auto& in) { return mlp(in[0]); }, {{4, 6}}, input_check());
  CHECK(r3.max_error() < 1e-4);
}

TEST_CASE("identity module has exactly zero gradient error") {
  auto rep = grad_check([](const auto& in) { return in[0]; }, no_params(), {{3, 4}});
  CHECK(rep.max_error() == 0.0);
  // Checking the input as well still passes.
  CHECK(grad_check([](const auto& in) { return in[0]; }, no_params(), {{3, 4}}, input_check()).max_error() < 1e-8);
}

TEST_CASE("single-head attention reduces to softmax-weighted averaging") {
  TD q = random_tensor({3, 4}, 7), k = random_tensor({5, 4}, 8), v = random_tensor({5, 4}, 9);
  TD out = attention(q, k, v, 1);
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> s(5);
    double mx = -1e300, z = 0;
    for (std::size_t j = 0; j < 5; ++j) {
      for (std::size_t d = 0; d < 4; ++d) s[j] += q[i * 4 + d] * k[j * 4 + d] / 2.0;
      mx = std::max(mx, s[j]);
    }
    for (auto& x : s) z += (x = std::exp(x - mx));
    for (std::size_t d = 0; d < 4; ++d) {
      double want = 0;
      for (std::size_t j = 0; j < 5; ++j) want += s[j] / z * v[j * 4 + d];
      CHECK(out[i * 4 + d] == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("shape mismatches raise dimension errors naming the op") {
  TD a({2, 3}), b({3, 2});
  try {
    add(a, b);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDimension);
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), Error);
}

TEST_CASE("parallel kernels equal the serial references bitwise") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  auto fill = [&](std::vector<float>& v, bool sparse) {
    for (auto& x : v) x = (sparse && u(rng) < 0.f) ? 0.f : u(rng);
  };
  for (auto [ta, tb] : {std::pair{false, false}, {true, false}, {false, true}, {true, true}}) {
    const int m = 7, n = 9, k = 5;
    std::vector<float> a(m * k), b(k * n), c1(m * n, 1.f), c2(m * n, 1.f);
    fill(a, false);
    fill(b, false);
    kernels::reference::gemm<float>(ta, tb, m, n, k, a, b, c1, true);
    kernels::parallel::gemm<float>(ta, tb, m, n, k, a, b, c2, true);
    for (int i = 0; i < m * n; ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-6));
  }
  const auto g = kernels::ConvGeometry::make({5, 6, 4}, 3, 4, {3, 3, 3}, {2, 2, 2}, {1, 1, 1});
  std::vector<float> x(g.in_cells() * 3), w(g.weight_size()), dy(g.out_cells() * 4);
  fill(x, true);
  fill(w, false);
  fill(dy, false);
  std::vector<float> y1(dy.size()), y2(dy.size()), dx1(x.size()), dx2(x.size()), dw1(w.size()), dw2(w.size());
  kernels::reference::conv_forward<float>(g, x, w, y1);
  kernels::parallel::conv_forward<float>(g, x, w, y2);
  kernels::reference::conv_backward_input<float>(g, dy, w, dx1);
  kernels::parallel::conv_backward_input<float>(g, dy, w, dx2);
  kernels::reference::conv_backward_weight<float>(g, x, dy, dw1);
  kernels::parallel::conv_backward_weight<float>(g, x, dy, dw2);
  for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-5));
  for (std::size_t i = 0; i < dx1.size(); ++i) CHECK(dx1[i] == doctest::Approx(dx2[i]).epsilon(1e-5));
  for (std::size_t i = 0; i < dw1.size(); ++i) CHECK(dw1[i] == doctest::Approx(dw2[i]).epsilon(1e-5));
}

TEST_CASE("adamw: zero gradient applies pure decoupled decay") {
  Parameter<double> p{"w", TD({3}, std::vector<double>{1.0, -2.0, 0.5}, true)};
  p.tensor.grad();
  AdamWConfig cfg;
  AdamW<double> opt({&p}, cfg);
  opt.step();
  const double f = 1.0 - cfg.lr * cfg.weight_decay;
  CHECK(p.tensor[0] == doctest::Approx(1.0 * f).epsilon(1e-15));
  CHECK(p.tensor[1] == doctest::Approx(-2.0 * f).epsilon(1e-15));
  CHECK(opt.state().step == 1);
}

TEST_CASE("adamw: frozen parameters are untouched and lr 0 still advances moments") {
  Parameter<double> frozen{"f", TD({2}, std::vector<double>{1.0, 2.0}, false), true};
  Parameter<double> live{"l", TD({2}, std::vector<double>{1.0, 2.0}, true)};
  live.tensor.grad()[0] = 0.5;
  frozen.tensor.grad()[0] = 0.5;
  AdamWConfig cfg;
  cfg.lr = 0.0;
  AdamW<double> opt({&frozen, &live}, cfg);
  opt.step();
  opt.step();
  CHECK(frozen.tensor[0] == 1.0);
  CHECK(live.tensor[0] == 1.0);
  CHECK(live.tensor[1] == 2.0);
  CHECK(opt.state().step == 2);
  CHECK(opt.state().first_moment[1][0] != 0.0);
}

TEST_CASE("adamw with zero decay tracks plain adam on a quadratic bowl") {
  const std::vector<double> target = {1.0, -3.0, 0.25};
  Parameter<double> p{"w", TD({3}, std::vector<double>{0.0, 0.0, 0.0}, true)};
  AdamWConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  AdamW<double> opt({&p}, cfg);
  std::vector<double> w(3, 0.0), m(3, 0.0), v(3, 0.0);
  for (int t = 1; t <= 100; ++t) {
    opt.zero_grad();
    for (int i = 0; i < 3; ++i) p.tensor.grad()[i] = 2.0 * (p.tensor[i] - target[i]);
    opt.step();
    for (int i = 0; i < 3; ++i) {
      const double g = 2.0 * (w[i] - target[i]);
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      w[i] -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (int i = 0; i < 3; ++i) CHECK(std::abs(p.tensor[i] - w[i]) < 1e-6);
}

TEST_CASE("initialization is deterministic per seed") {
  Rng a(42), b(42);
  Linear<float> la(8, 8, a), lb(8, 8, b);
  for (std::size_t i = 0; i < la.weight.tensor.numel(); ++i) CHECK(la.weight.tensor[i] == lb.weight.tensor[i]);
}

TEST_CASE("non-finite values are rejected") {
  TD a({2}, std::vector<double>{1.0, std::nan("")});
  CHECK_THROWS_AS(add(a, a), Error);
}
