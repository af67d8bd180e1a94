#include "mvnet/pipeline/diagnostics.hpp"

#include <chrono>
#include <functional>
#include <random>

#include "mvnet/consistency.hpp"
#include "mvnet/encoder3d.hpp"
#include "mvnet/error.hpp"
#include "mvnet/nn/gradcheck.hpp"
#include "mvnet/transfer.hpp"

namespace mvnet::pipeline {
namespace {

using nn::GradCheckOptions;
using nn::Shape;
using TD = nn::Tensor<double>;
using Inputs = std::vector<TD>;

GradCheckOptions with_inputs(std::size_t max_entries = 0) {
  GradCheckOptions o;
  o.check_inputs = true;
  o.max_entries_per_tensor = max_entries;
  return o;
}

class Suite {
 public:
  explicit Suite(std::string module) : module_(std::move(module)) {}

  void add(const std::string& name, const std::function<nn::GradCheckReport()>& check) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto report = check();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    entries_.push_back({module_, name, report.max_error(), secs});
  }

  std::vector<GradSuiteEntry> take() { return std::move(entries_); }

 private:
  std::string module_;
  std::vector<GradSuiteEntry> entries_;
};

nn::GradCheckReport op_check(const nn::ForwardFn& f, const std::vector<Shape>& shapes) {
  return nn::grad_check(f, {}, shapes, with_inputs());
}

std::vector<GradSuiteEntry> layer_suite() {
  Suite s("layers");
  const Shape v{3, 4};
  s.add("add/sub/mul", [&] {
    return op_check([](const Inputs& in) { return nn::mul(nn::add(in[0], in[1]), nn::sub(in[0], in[1])); }, {v, v});
  });
  s.add("gelu", [&] { return op_check([](const Inputs& in) { return nn::gelu(in[0]); }, {v}); });
  s.add("sigmoid", [&] { return op_check([](const Inputs& in) { return nn::sigmoid(nn::scale(in[0], 2.0)); }, {v}); });
  s.add("relu", [&] { return op_check([](const Inputs& in) { return nn::relu(nn::add_scalar(in[0], 0.1)); }, {v}); });
  s.add("softmax", [&] { return op_check([](const Inputs& in) { return nn::softmax(in[0]); }, {v}); });
  s.add("mse", [&] { return op_check([](const Inputs& in) { return nn::mse(in[0], in[1]); }, {v, v}); });
  s.add("squared_distance",
        [&] { return op_check([](const Inputs& in) { return nn::squared_distance(in[0], in[1]); }, {v, v}); });
  s.add("matmul", [&] { return op_check([](const Inputs& in) { return nn::matmul(in[0], in[1]); }, {{3, 4}, {4, 5}}); });
  s.add("concat", [&] {
    return op_check([](const Inputs& in) { return nn::concat<double>({in[0], in[1]}, 1); }, {{3, 2}, {3, 4}});
  });
  s.add("gather_rows", [&] {
    const std::vector<std::int64_t> idx = {0, 2, -1, 1, 1, 0};
    const std::vector<double> w = {0.3, 0.7, 1.0, 0.5, 0.25, 0.25};
    return op_check([&](const Inputs& in) { return nn::gather_rows(in[0], idx, w, 2); }, {{3, 4}});
  });
  s.add("sinusoidal_encode",
        [&] { return op_check([](const Inputs& in) { return nn::sinusoidal_encode(in[0], 4, 8.0); }, {{5, 2}}); });
  s.add("avg_pool2d", [&] { return op_check([](const Inputs& in) { return nn::avg_pool2d(in[0], 2); }, {{4, 6, 3}}); });

  nn::Rng rng(2024);
  s.add("linear", [&] {
    nn::Linear<double> m(4, 3, rng);
    nn::fill_normal(m.bias.tensor, 0.5, rng);
    return nn::grad_check(m, [&](const Inputs& in) { return m(in[0]); }, {{5, 4}}, with_inputs());
  });
  s.add("layer_norm", [&] {
    nn::LayerNorm<double> m(6);
    nn::fill_normal(m.gamma.tensor, 1.0, rng);
    nn::fill_normal(m.beta.tensor, 1.0, rng);
    return nn::grad_check(m, [&](const Inputs& in) { return m(in[0]); }, {{5, 6}}, with_inputs());
  });
  s.add("batch_norm (train)", [&] {
    nn::BatchNorm<double> m(3);
    nn::fill_normal(m.gamma.tensor, 1.0, rng);
    return nn::grad_check(m, [&](const Inputs& in) { return m(in[0]); }, {{2, 3, 4, 3}}, with_inputs());
  });
  s.add("batch_norm (eval)", [&] {
    nn::BatchNorm<double> m(3);
    m.set_training(false);
    return nn::grad_check(m, [&](const Inputs& in) { return m(in[0]); }, {{2, 2, 2, 3}}, with_inputs());
  });
  s.add("conv3d", [&] {
    nn::Conv3d<double> m(2, 3, 3, 1, 1, rng);
    return nn::grad_check(m, [&](const Inputs& in) { return m(in[0]); }, {{3, 4, 3, 2}}, with_inputs());
  });
  s.add("conv3d stride 2", [&] {
    nn::Conv3d<double> m(2, 3, 3, 2, 1, rng);
    return nn::grad_check(m, [&](const Inputs& in) { return m(in[0]); }, {{4, 4, 2, 2}}, with_inputs());
  });
  s.add("conv_transpose3d", [&] {
    nn::ConvTranspose3d<double> m(3, 2, rng);
    return nn::grad_check(m, [&](const Inputs& in) { return m(in[0]); }, {{2, 1, 2, 3}}, with_inputs());
  });
  s.add("conv2d", [&] {
    nn::Conv2d<double> m(3, 4, 3, 2, 1, rng);
    nn::fill_normal(m.bias.tensor, 0.5, rng);
    return nn::grad_check(m, [&](const Inputs& in) { return m(in[0]); }, {{6, 4, 3}}, with_inputs());
  });
  s.add("self attention", [&] {
    nn::MultiHeadAttention<double> m(8, 2, rng);
    return nn::grad_check(m, [&](const Inputs& in) { return m(in[0], in[0]); }, {{5, 8}}, with_inputs());
  });
  s.add("cross attention", [&] {
    nn::MultiHeadAttention<double> m(8, 4, rng);
    return nn::grad_check(m, [&](const Inputs& in) { return m(in[0], in[1]); }, {{3, 8}, {7, 8}}, with_inputs());
  });
  s.add("mlp", [&] {
    nn::Mlp<double> m(6, 12, rng);
    return nn::grad_check(m, [&](const Inputs& in) { return m(in[0]); }, {{4, 6}}, with_inputs());
  });
  return s.take();
}

std::vector<GradSuiteEntry> encoder_suite() {
  Suite s("encoder3d");
  s.add("encoder3d 4^3 grid", [] {
    EncoderConfig cfg;
    cfg.channels_per_stage = {3, 4, 5, 6};
    cfg.out_channels = 5;
    nn::Rng rng(6);
    Encoder3d<double> enc(cfg, rng);
    // 40 points in a 0.2 m cube: a 4x4x4 grid at 0.05 m.
    ColoredPointCloud cloud;
    cloud.view_ids = {"v"};
    std::mt19937_64 prng(7);
    std::uniform_real_distribution<double> u(0, 0.2);
    for (int i = 0; i < 40; ++i) {
      cloud.positions.emplace_back(u(prng), u(prng), u(prng));
      cloud.colors.emplace_back(float(u(prng) / 0.2), 0.5f, float(i % 2));
      cloud.provenance.push_back({1, i, 0});
    }
    const auto grid = voxelize(cloud, 0.05);
    if (grid.extent() != std::array<int, 3>{4, 4, 4}) fail(ErrorCode::kInvalidGeometry, "probe grid is not 4^3");
    GradCheckOptions opts;
    opts.max_entries_per_tensor = 12;
    return nn::grad_check(enc, [&](const Inputs&) { return encoder_forward(enc, grid); }, {}, opts);
  });
  return s.take();
}

std::vector<GradSuiteEntry> student_suite() {
  Suite s("student");
  s.add("student vit 16x16 input", [] {
    Vit2dConfig cfg;
    cfg.num_blocks = 3;
    cfg.heads = 2;
    cfg.hidden_dim = 8;
    cfg.patch_size = 8;
    cfg.in_channels = 4;
    nn::Rng rng(8);
    Vit<double> student(cfg, rng);
    for (auto* p : student.parameters()) nn::fill_normal(p->tensor, 0.3, rng);
    return nn::grad_check(
        student, [&](const Inputs& in) { return nn::concat<double>(student(in[0]).blocks, 0); }, {{16, 16, 4}},
        with_inputs(24));
  });
  return s.take();
}

std::vector<GradSuiteEntry> decoder_suite() {
  Suite s("decoder");
  s.add("decoder 8x16 context", [] {
    DecoderConfig cfg;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.query_freqs = 3;
    cfg.context_pool = 1;
    cfg.layers = 2;
    nn::Rng rng(7);
    CorrespondenceDecoder<double> dec(cfg, rng);
    for (auto* p : dec.parameters()) nn::fill_normal(p->tensor, 0.3, rng);
    auto map = [](std::uint64_t seed) {
      FeatureMap<double> m;
      m.data = TD({8, 8, 8});
      m.height = m.width = 8;
      m.coverage.assign(64, 1);
      std::mt19937_64 r(seed);
      std::normal_distribution<double> n(0, 1);
      for (auto& v : m.data.data()) v = n(r);
      return m;
    };
    const auto f1 = map(8), f2 = map(9);
    TD q({5, 2});
    std::mt19937_64 r(10);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (auto& v : q.data()) v = u(r);
    return nn::grad_check(
        [&](const Inputs& in) {
          FeatureMap<double> a = f1, b = f2;
          a.data = in[0];
          b.data = in[1];
          return dec.predict(q, make_context(a, b, cfg));
        },
        dec.named_parameters(), {}, with_inputs(), {f1.data, f2.data});
  });
  return s.take();
}

}  // namespace

std::vector<std::string> gradient_suite_modules() { return {"layers", "encoder3d", "student", "decoder"}; }

std::vector<GradSuiteEntry> run_gradient_suite(const std::string& module) {
  std::vector<GradSuiteEntry> out;
  auto append = [&](std::vector<GradSuiteEntry> part) { out.insert(out.end(), part.begin(), part.end()); };
  const bool all = module == "all";
  bool matched = all;
  if (all || module == "layers") append(layer_suite()), matched = true;
  if (all || module == "encoder3d") append(encoder_suite()), matched = true;
  if (all || module == "student") append(student_suite()), matched = true;
  if (all || module == "decoder") append(decoder_suite()), matched = true;
  if (!matched) fail(ErrorCode::kInvalidInput, "unknown grad-check module '" + module + "'");
  return out;
}

}  // namespace mvnet::pipeline
