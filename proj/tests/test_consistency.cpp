#include <doctest.h>

#include <map>
#include <numeric>

#include "mvnet/consistency.hpp"
#include "mvnet/error.hpp"
#include "mvnet/nn/gradcheck.hpp"
#include "mvnet/nn/ops.hpp"
#include "mvnet/nn/optim.hpp"
#include "oracles.hpp"

using namespace mvnet;
using nn::Tensor;

namespace {

template <typename T>
FeatureMap<T> random_map(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  FeatureMap<T> m;
  m.data = Tensor<T>({h, w, c});
  m.height = int(h);
  m.width = int(w);
  m.coverage.assign(h * w, 1);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, scale);
  for (auto& v : m.data.data()) v = T(n(rng));
  return m;
}

DecoderConfig small_decoder() {
  DecoderConfig d;
  d.dim = 8;
  d.heads = 2;
  d.query_freqs = 3;
  d.context_pool = 1;
  d.layers = 2;
  return d;
}

// Looks predictions up from a table keyed by the exact query coordinates.
class TableModel : public CorrespondenceModel<double> {
 public:
  std::map<std::pair<double, double>, std::pair<double, double>> table;
  Tensor<double> predict(const Tensor<double>& q, const ConcatContext<double>&) override {
    Tensor<double> out(q.shape());
    for (std::size_t i = 0; i < q.dim(0); ++i) {
      const auto v = table.at({q[2 * i], q[2 * i + 1]});
      out[2 * i] = v.first;
      out[2 * i + 1] = v.second;
    }
    return out;
  }
};

class ConstantModel : public CorrespondenceModel<double> {
 public:
  Eigen::Vector2d value;
  Tensor<double> predict(const Tensor<double>& q, const ConcatContext<double>&) override {
    Tensor<double> out(q.shape());
    for (std::size_t i = 0; i < q.dim(0); ++i) {
      out[2 * i] = value.x();
      out[2 * i + 1] = value.y();
    }
    return out;
  }
};

CorrespondenceSet grid_pairs(int n, int w, int h) {
  CorrespondenceSet s;
  s.width = w;
  s.height = h;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Eigen::Vector2d p((i + 0.5) / n, (j + 0.5) / n);
      s.pairs.push_back({p, p});
    }
  return s;
}

}  // namespace

TEST_CASE("canvas coordinates round trip and split the halves") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector2d x(u(rng), u(rng));
    const auto c1 = to_canvas(1, x);
    CHECK(c1.x() < 0.5 + 1e-15);
    auto [v1, back1] = from_canvas(c1);
    if (x.x() < 1.0) CHECK(v1 == 1);
    CHECK((back1 - x).norm() < 1e-15);
    const auto c2 = to_canvas(2, x);
    CHECK(c2.x() >= 0.5);
    auto [v2, back2] = from_canvas(c2);
    CHECK(v2 == 2);
    CHECK((back2 - x).norm() < 1e-15);
  }
}

TEST_CASE("context tokens: left half from the first map") {
  auto f1 = random_map<double>(8, 8, 8, 1), f2 = random_map<double>(8, 8, 8, 2);
  auto zero = f1;
  zero.data = Tensor<double>(f1.data.shape());
  const auto cfg = small_decoder();
  const auto a = make_context(f1, f2, cfg), b = make_context(zero, f2, cfg);
  CHECK(a.rows == 8);
  CHECK(a.cols == 16);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 16; ++c)
      for (int k = 0; k < 8; ++k) {
        const std::size_t i = (std::size_t(r) * 16 + c) * 8 + k;
        if (c < 8)
          CHECK(a.tokens[i] - b.tokens[i] == doctest::Approx(f1.data[(std::size_t(r) * 8 + c) * 8 + k]));
        else
          CHECK(a.tokens[i] == b.tokens[i]);
      }
}

TEST_CASE("decoder outputs lie in the unit square, deterministic and per query") {
  nn::Rng rng(3);
  DecoderConfig cfg;
  CorrespondenceDecoder<float> dec(cfg, rng);
  const auto ctx = make_context(random_map<float>(32, 32, 96, 4), random_map<float>(32, 32, 96, 5), cfg);
  Tensor<float> q({10, 2});
  std::mt19937_64 r2(6);
  std::uniform_real_distribution<float> u(0, 0.5f);
  for (auto& v : q.data()) v = u(r2);
  const auto a = predict_correspondence(dec, q, ctx), b = predict_correspondence(dec, q, ctx);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    CHECK(a[i] >= 0.f);
    CHECK(a[i] <= 1.f);
    CHECK(a[i] == b[i]);
  }
  std::vector<std::size_t> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  Tensor<float> qp({10, 2});
  for (std::size_t i = 0; i < 10; ++i) {
    qp[2 * i] = q[2 * perm[i]];
    qp[2 * i + 1] = q[2 * perm[i] + 1];
  }
  const auto c = predict_correspondence(dec, qp, ctx);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(c[2 * i] == doctest::Approx(a[2 * perm[i]]).epsilon(1e-6));
    CHECK(c[2 * i + 1] == doctest::Approx(a[2 * perm[i] + 1]).epsilon(1e-6));
  }
  Tensor<float> bad({1, 2}, std::vector<float>{1.2f, 0.3f});
  try {
    predict_correspondence(dec, bad, ctx);
    FAIL("expected invalid query");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidQuery);
  }
}

TEST_CASE("loss_m oracle, offset and empty cases") {
  const auto ctx = make_context(random_map<double>(8, 8, 8, 1), random_map<double>(8, 8, 8, 2), small_decoder());
  CorrespondenceSet set;
  set.width = set.height = 8;
  set.pairs.push_back({{0.25, 0.5}, {0.5, 0.75}});
  set.pairs.push_back({{0.75, 0.125}, {0.375, 0.25}});
  TableModel oracle_model, offset;
  for (const auto& p : set.pairs) {
    const auto x = to_canvas(1, p.x), g = to_canvas(2, p.x_gt);
    oracle_model.table[{x.x(), x.y()}] = {g.x(), g.y()};
    oracle_model.table[{g.x(), g.y()}] = {x.x(), x.y()};
    offset.table[{x.x(), x.y()}] = {g.x() + 0.1, g.y()};
    offset.table[{g.x() + 0.1, g.y()}] = {x.x(), x.y()};
  }
  CHECK(loss_m(oracle_model, set, ctx).item() == 0.0);
  CHECK(eval_correspondence_error(oracle_model, set, ctx) == 0.0);
  CHECK(loss_m(offset, set, ctx).item() == doctest::Approx(0.01).epsilon(1e-12));
  try {
    loss_m(oracle_model, CorrespondenceSet{}, ctx);
    FAIL("expected undefined loss");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kUndefinedLoss);
  }
  CHECK_THROWS_AS(eval_correspondence_error(oracle_model, CorrespondenceSet{}, ctx), Error);
}

TEST_CASE("constant-center predictor error equals the quadrature mean distance") {
  const auto ctx = make_context(random_map<double>(8, 8, 8, 1), random_map<double>(8, 8, 8, 2), small_decoder());
  ConstantModel center;
  center.value = to_canvas(2, {0.5, 0.5});
  for (auto [w, h] : {std::pair{32, 32}, {64, 48}}) {
    const auto set = grid_pairs(300, w, h);
    const double err = eval_correspondence_error(center, set, ctx);
    CHECK(err >= 0);
    CHECK(err == doctest::Approx(oracle::mean_distance_to_center(w, h)).epsilon(1e-4));
  }
}

TEST_CASE("decoder on an 8x16 context matches finite differences") {
  nn::Rng rng(7);
  CorrespondenceDecoder<double> dec(small_decoder(), rng);
  for (auto* p : dec.parameters()) nn::fill_normal(p->tensor, 0.3, rng);
  const auto f1 = random_map<double>(8, 8, 8, 8), f2 = random_map<double>(8, 8, 8, 9);
  Tensor<double> q({5, 2});
  std::mt19937_64 r2(10);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (auto& v : q.data()) v = u(r2);
  nn::GradCheckOptions opts;
  opts.check_inputs = true;
  const auto rep = nn::grad_check(
      [&](const auto& in) {
        FeatureMap<double> a = f1, b = f2;
        a.data = in[0];
        b.data = in[1];
        return dec.predict(q, make_context(a, b, small_decoder()));
      },
      dec.named_parameters(), {}, opts, {f1.data, f2.data});
  INFO(rep.summary());
  CHECK(rep.max_error() < 1e-4);
}

TEST_CASE("loss_m gradient reaches both feature maps") {
  nn::Rng rng(11);
  CorrespondenceDecoder<double> dec(small_decoder(), rng);
  auto f1 = random_map<double>(8, 8, 8, 12), f2 = random_map<double>(8, 8, 8, 13);
  f1.data.set_requires_grad(true);
  f2.data.set_requires_grad(true);
  const auto set = grid_pairs(4, 8, 8);
  loss_m<double>(dec, set, make_context(f1, f2, small_decoder())).backward();
  double g1 = 0, g2 = 0;
  for (double g : f1.data.grad()) g1 += std::abs(g);
  for (double g : f2.data.grad()) g2 += std::abs(g);
  CHECK(g1 > 0);
  CHECK(g2 > 0);
}

TEST_CASE("training on identical views cuts loss_m by at least 80 percent in 500 steps") {
  nn::Rng rng(14);
  DecoderConfig cfg;
  CorrespondenceDecoder<float> dec(cfg, rng);
  const auto f = random_map<float>(32, 32, 96, 15, 0.5);
  const auto ctx = make_context(f, f, cfg);
  nn::AdamW<float> opt(dec.parameters(), {});
  std::mt19937_64 sampler(16);
  double first = 0, last = 0;
  for (int step = 0; step < 500; ++step) {
    CorrespondenceSet set;
    set.width = set.height = 32;
    for (int i = 0; i < 64; ++i) {
      const Eigen::Vector2d p(double(sampler() % 32) / 32.0, double(sampler() % 32) / 32.0);
      set.pairs.push_back({p, p});
    }
    opt.zero_grad();
    auto l = loss_m(dec, set, ctx);
    l.backward();
    opt.step();
    if (step == 0) first = l.item();
    if (step >= 490) last += l.item() / 10.0;
  }
  INFO("first " << first << " last " << last);
  CHECK(last <= 0.2 * first);
}
