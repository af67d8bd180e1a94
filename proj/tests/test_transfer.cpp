#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "mvnet/binary_io.hpp"
#include "mvnet/encoder3d.hpp"
#include "mvnet/error.hpp"
#include "mvnet/nn/gradcheck.hpp"
#include "mvnet/nn/ops.hpp"
#include "mvnet/nn/optim.hpp"
#include "mvnet/transfer.hpp"
#include "oracles.hpp"

using namespace mvnet;
using nn::Tensor;

namespace {

Vit2dConfig student_config(int c = 96) {
  Vit2dConfig v;
  v.in_channels = c;
  return v;
}

Tensor<float> random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Tensor<float> t({h, w, 3});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

BlockActivations<double> constant_acts(int n, std::size_t tokens, std::size_t dim, double value) {
  BlockActivations<double> a;
  for (int j = 0; j < n; ++j) a.blocks.push_back(Tensor<double>({tokens, dim}, value));
  return a;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mvnet_" + name + std::to_string(::getpid()));
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("teacher on a 32x32 image yields N blocks of 16x96 tokens, deterministically") {
  auto teacher = TeacherSource::seeded(Vit2dConfig{}, 1);
  const auto img = random_image(32, 32, 2);
  const auto a = teacher_forward(*teacher.network(), img);
  const auto b = teacher_forward(*teacher.network(), img);
  REQUIRE(a.size() == 12);
  for (std::size_t j = 0; j < 12; ++j) {
    CHECK(a.blocks[j].shape() == nn::Shape{16, 96});
    CHECK(std::memcmp(a.blocks[j].data().data(), b.blocks[j].data().data(), 16 * 96 * sizeof(float)) == 0);
    CHECK_FALSE(a.blocks[j].requires_grad());
  }
  auto other = TeacherSource::seeded(Vit2dConfig{}, 1);
  const auto c = teacher_forward(*other.network(), img);
  CHECK(std::memcmp(a.blocks[11].data().data(), c.blocks[11].data().data(), 16 * 96 * sizeof(float)) == 0);
}

TEST_CASE("image sizes that the patch does not divide are rejected") {
  auto teacher = TeacherSource::seeded(Vit2dConfig{}, 1);
  try {
    teacher_forward(*teacher.network(), random_image(30, 32, 1));
    FAIL("expected invalid geometry");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidGeometry);
  }
}

TEST_CASE("student shapes match the teacher and zero input stays finite") {
  nn::Rng rng(3);
  Vit<float> student(student_config(), rng);
  FeatureMap<float> fmap;
  fmap.data = Tensor<float>({32, 32, 96});
  fmap.height = fmap.width = 32;
  const auto acts = student_forward(student, fmap);
  REQUIRE(acts.size() == 12);
  for (const auto& b : acts.blocks) {
    CHECK(b.shape() == nn::Shape{16, 96});
    for (float v : b.data()) CHECK_UNARY(std::isfinite(v));
  }
  FeatureMap<float> wrong;
  wrong.data = Tensor<float>({32, 32, 5});
  try {
    student_forward(student, wrong);
    FAIL("expected invalid input");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidInput);
  }
}

TEST_CASE("loss_2d hand-evaluated cases") {
  const auto zeros = constant_acts(12, 16, 96, 0.0), ones = constant_acts(12, 16, 96, 1.0);
  CHECK(loss_2d(ones, zeros, 3).item() == 15360.0);
  CHECK(loss_2d(ones, ones, 3).item() == 0.0);
  CHECK(loss_2d(ones, zeros, 1).item() == 12 * 16 * 96.0);
  CHECK_THROWS_AS(loss_2d(ones, constant_acts(11, 16, 96, 0.0), 3), Error);
  CHECK_THROWS_AS(loss_2d(ones, zeros, 13), Error);
  CHECK_THROWS_AS(loss_2d(ones, zeros, 0), Error);
}

TEST_CASE("loss_2d is nonnegative, zero only on matching tail, and monotone in the start layer") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 20; ++trial) {
    auto a = constant_acts(6, 3, 4, 0.0), b = constant_acts(6, 3, 4, 0.0);
    for (std::size_t j = 0; j < 6; ++j)
      for (std::size_t i = 0; i < 12; ++i) {
        a.blocks[j][i] = n(rng);
        b.blocks[j][i] = n(rng);
      }
    double prev = 1e300;
    for (int j0 = 1; j0 <= 6; ++j0) {
      const double l = loss_2d(a, b, j0).item();
      CHECK(l >= 0);
      CHECK(l <= prev);
      prev = l;
    }
    // Equal tail from block 3 on gives zero at j0 = 3 but not at j0 = 2.
    for (std::size_t j = 2; j < 6; ++j) b.blocks[j] = Tensor<double>(a.blocks[j].shape(), std::vector<double>(a.blocks[j].data().begin(), a.blocks[j].data().end()));
    CHECK(loss_2d(a, b, 3).item() == 0.0);
    CHECK(loss_2d(a, b, 2).item() > 0.0);
  }
}

TEST_CASE("teacher receives no gradient and stays frozen under optimizer steps") {
  auto teacher = TeacherSource::seeded(Vit2dConfig{}, 5);
  nn::Rng rng(6);
  Vit<float> student(student_config(3), rng);
  const auto img = random_image(16, 16, 7);
  std::vector<std::vector<float>> before;
  for (auto* p : teacher.network()->parameters()) before.emplace_back(p->tensor.data().begin(), p->tensor.data().end());
  nn::AdamW<float> opt(student.parameters(), {});
  auto all = student.parameters();
  for (auto* p : teacher.network()->parameters()) all.push_back(p);
  nn::AdamW<float> both(all, {});
  for (int step = 0; step < 3; ++step) {
    const auto t = teacher_forward(*teacher.network(), img);
    FeatureMap<float> fm;
    fm.data = img;
    auto l = loss_2d(student_forward(student, fm), t, 3);
    both.zero_grad();
    l.backward();
    for (const auto& b : t.blocks) CHECK_FALSE(b.has_grad());
    both.step();
  }
  std::size_t i = 0;
  for (auto* p : teacher.network()->parameters()) {
    CHECK(std::memcmp(p->tensor.data().data(), before[i].data(), before[i].size() * sizeof(float)) == 0);
    ++i;
  }
}

TEST_CASE("student network on a 16x16 input matches finite differences") {
  Vit2dConfig cfg;
  cfg.num_blocks = 3;
  cfg.heads = 2;
  cfg.hidden_dim = 8;
  cfg.patch_size = 8;
  cfg.in_channels = 4;
  nn::Rng rng(8);
  Vit<double> student(cfg, rng);
  for (auto* p : student.parameters()) nn::fill_normal(p->tensor, 0.3, rng);
  nn::GradCheckOptions opts;
  opts.check_inputs = true;
  opts.max_entries_per_tensor = 24;
  const auto rep = nn::grad_check(
      student,
      [&](const auto& in) {
        auto acts = student(in[0]);
        return nn::concat<double>(acts.blocks, 0);
      },
      {{16, 16, 4}}, opts);
  INFO(rep.summary());
  CHECK(rep.max_error() < 1e-4);
}

TEST_CASE("activation archives round trip and are validated on import") {
  const auto dir = temp_dir("acts");
  auto teacher = TeacherSource::seeded(Vit2dConfig{}, 9);
  const auto frame = oracle::render("f0", oracle::intrinsics(32, 32), oracle::room_camera(0.2), oracle::test_room(),
                                    oracle::test_boxes());
  const auto acts = teacher.activations(frame);
  write_activation_archive((dir / "f0.mvta").string(), acts);
  write_activation_manifest((dir / "manifest.json").string(), {{"f0", "f0.mvta"}});

  auto imported = TeacherSource::imported((dir / "manifest.json").string(), Vit2dConfig{});
  const auto& back = imported.activations(frame);
  REQUIRE(back.size() == acts.size());
  for (std::size_t j = 0; j < acts.size(); ++j)
    CHECK(std::memcmp(back.blocks[j].data().data(), acts.blocks[j].data().data(), 16 * 96 * sizeof(float)) == 0);

  Vit2dConfig deeper;
  deeper.num_blocks = 13;
  auto wrong = TeacherSource::imported((dir / "manifest.json").string(), deeper);
  try {
    wrong.activations(frame);
    FAIL("expected shape mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatch);
  }
  io::write_file((dir / "bad.mvta").string(), std::vector<std::uint8_t>{'N', 'O', 'P', 'E', 0, 0});
  try {
    read_activation_archive((dir / "bad.mvta").string());
    FAIL("expected bad magic");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBadMagic);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("block-alignment gradient reaches the encoder's first convolution") {
  const auto k = oracle::intrinsics(16, 16);
  const auto a = oracle::render("a", k, oracle::room_camera(0.3), oracle::test_room(), oracle::test_boxes());
  const auto b = oracle::render("b", k, oracle::room_camera(0.5), oracle::test_room(), oracle::test_boxes());
  nn::Rng rng(10);
  EncoderConfig ec;
  ec.channels_per_stage = {4, 4, 6, 6};
  ec.out_channels = 8;
  Encoder3d<float> enc(ec, rng);
  Vit2dConfig vc;
  vc.num_blocks = 4;
  vc.heads = 2;
  vc.hidden_dim = 8;
  vc.in_channels = 8;
  Vit<float> student(vc, rng);
  Vit2dConfig tc = vc;
  tc.in_channels = 3;
  auto teacher = TeacherSource::seeded(tc, 11);
  auto cloud = std::make_shared<const ColoredPointCloud>(build_point_cloud(a, b));
  const auto vol = encode_points(enc, cloud, 0.2, 3);
  const auto loss = loss_2d(student_forward(student, project_features(vol, a)), teacher.activations(a), 3);
  loss.backward();
  double mag = 0;
  for (float g : enc.stem.weight.tensor.grad()) mag += std::abs(g);
  CHECK(mag > 0);
}
