#include <doctest.h>

#include <filesystem>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>

#include <json.hpp>

#include "mvnet/binary_io.hpp"
#include "mvnet/error.hpp"
#include "mvnet/parallel.hpp"
#include "mvnet/pipeline/checkpoint.hpp"
#include "mvnet/pipeline/config.hpp"
#include "mvnet/pipeline/dataset.hpp"
#include "mvnet/pipeline/evaluate.hpp"
#include "mvnet/pipeline/probe.hpp"
#include "mvnet/pipeline/sampler.hpp"
#include "mvnet/pipeline/scene.hpp"
#include "mvnet/pipeline/trainer.hpp"
#include "oracles.hpp"

using namespace mvnet;
using namespace mvnet::pipeline;
namespace fs = std::filesystem;

namespace {

// Scratch directory removed on scope exit.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("mvnet_test_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

SceneSpec empty_room(int size = 33) {
  SceneSpec spec;
  spec.name = "room";
  spec.height = spec.width = size;
  spec.palette = {{0.3f, 0.3f, 0.3f}, {0.9f, 0.9f, 0.9f}, {0.6f, 0.5f, 0.4f}};
  return spec;
}

CameraExtrinsics facing(const Eigen::Vector3d& eye, const Eigen::Vector3d& dir,
                        const Eigen::Vector3d& up = Eigen::Vector3d::UnitY()) {
  return CameraExtrinsics::look_at(eye, eye + dir, up);
}

template <typename E>
std::optional<ErrorCode> code_of(E&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

std::vector<float> module_bytes(nn::Module<float>& m) {
  std::vector<float> out;
  for (const auto& p : m.named_parameters(""))
    out.insert(out.end(), p.param->tensor.data().begin(), p.param->tensor.data().end());
  for (const auto& b : m.named_buffers("")) out.insert(out.end(), b.data->begin(), b.data->end());
  return out;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.max_steps = 3;
  cfg.epochs = 10;
  return cfg;
}

}  // namespace

TEST_CASE("a camera facing a wall at 3 m sees it at the closed-form depth") {
  SceneSpec spec = empty_room();
  spec.room_extents = {6.0, 4.0, 6.0};
  const Eigen::Vector3d eye(3.0, 2.0, 3.0);
  spec.trajectory = {facing(eye, Eigen::Vector3d::UnitX()), facing(eye, -Eigen::Vector3d::UnitZ())};
  const auto frames = generate_scene(spec);
  REQUIRE(frames.size() == 2);
  for (const auto& f : frames) {
    // Center pixel of a 33x33 image looks straight down the optical axis.
    CHECK(f.depth[f.index(16, 16)] == doctest::Approx(3.0).epsilon(1e-7));
    CHECK(f.labels[f.index(16, 16)] == std::uint8_t(SurfaceLabel::kWall));
  }
  // Ray-plane oracle: pixel ray r = K^-1 (c, r, 1) in camera space meets the
  // plane z_cam = 3 at t = 3, so camera depth is 3 wherever the wall is hit
  // first; elsewhere the ray leaves through the floor, ceiling or a side wall
  // at a smaller t.
  const auto& f = frames[0];
  const Eigen::Matrix3d kinv = f.intrinsics.matrix().inverse();
  std::size_t on_wall = 0;
  for (int r = 0; r < 33; ++r)
    for (int c = 0; c < 33; ++c) {
      const Eigen::Vector3d d = f.extrinsics.rotation.transpose() * (kinv * Eigen::Vector3d(c, r, 1.0));
      double t = 3.0 / d.x();
      for (int a : {1, 2}) {
        if (std::abs(d[a]) < 1e-12) continue;
        const double ta = ((d[a] > 0 ? spec.room_extents[a] : 0.0) - eye[a]) / d[a];
        t = std::min(t, ta);
      }
      on_wall += t == 3.0 / d.x();
      CHECK(f.depth[f.index(r, c)] == doctest::Approx(t).epsilon(1e-6));
    }
  CHECK(on_wall == 33 * 33);
}

TEST_CASE("generator depth and validity match an independent ray caster") {
  const SceneSpec spec = random_scene_spec(21, 4, 24, 32);
  const auto frames = generate_scene(spec);
  REQUIRE(frames.size() == 4);
  std::vector<oracle::Box> boxes;
  for (const auto& b : spec.objects) boxes.push_back({b.lo, b.hi});
  const oracle::Box room{Eigen::Vector3d::Zero(), spec.room_extents};
  for (const auto& f : frames) {
    const auto ref = oracle::render("ref", f.intrinsics, f.extrinsics, room, boxes);
    std::size_t compared = 0;
    for (std::size_t i = 0; i < f.pixel_count(); ++i) {
      if (!ref.valid[i]) continue;  // the reference caster cuts its own skylight
      ++compared;
      REQUIRE(f.valid[i] == 1);
      CHECK(f.depth[i] == doctest::Approx(ref.depth[i]).epsilon(1e-6));
    }
    CHECK(compared > f.pixel_count() / 2);
  }
}

TEST_CASE("generation is deterministic per seed") {
  const auto a = generate_scene(random_scene_spec(5, 6));
  const auto b = generate_scene(random_scene_spec(5, 6));
  const auto c = generate_scene(random_scene_spec(6, 6));
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].frame_id == b[i].frame_id);
    CHECK(a[i].rgb == b[i].rgb);
    CHECK(a[i].depth == b[i].depth);
    CHECK(a[i].valid == b[i].valid);
    CHECK(a[i].labels == b[i].labels);
  }
  CHECK(a[0].depth != c[0].depth);
  const auto d1 = synthetic_dataset(3, 2, 4), d2 = synthetic_dataset(3, 2, 4);
  CHECK(d1.scenes[1].name == "scene_001");
  CHECK(d1.scenes[1].frames[2].rgb == d2.scenes[1].frames[2].rgb);
}

TEST_CASE("identical poses overlap fully") {
  SceneSpec spec = random_scene_spec(8, 3);
  spec.trajectory[1] = spec.trajectory[0];
  const auto frames = generate_scene(spec);
  const OverlapTable table(frames);
  CHECK(table(0, 1) == 1.0);
  CHECK(table(1, 0) == 1.0);
  CHECK(table(2, 2) == 1.0);
}

TEST_CASE("a frame looking out through the skylight is excluded with a warning") {
  SceneSpec spec = empty_room(16);
  spec.skylight = Skylight{0.05, 1.55, 0.05, 1.55};
  spec.trajectory = {facing({0.8, 0.6, 0.8}, Eigen::Vector3d::UnitX()),
                     facing({0.8, 0.6, 0.8}, Eigen::Vector3d::UnitY(), Eigen::Vector3d::UnitZ()),
                     facing({0.8, 0.6, 0.8}, -Eigen::Vector3d::UnitX())};
  std::vector<std::string> warnings;
  const auto frames = generate_scene(spec, [&](const std::string& m) { warnings.push_back(m); });
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("room/1") != std::string::npos);
  REQUIRE(frames.size() == 2);
  CHECK(frames[0].frame_id == "room/0");
  CHECK(frames[1].frame_id == "room/2");
}

TEST_CASE("scene spec validation") {
  SceneSpec spec = empty_room();
  spec.trajectory = {facing({0.8, 0.6, 0.8}, Eigen::Vector3d::UnitX())};
  CHECK(code_of([&] { generate_scene(spec); }) == ErrorCode::kInvalidInput);
  CHECK(code_of([] { random_scene_spec(1, 1); }) == ErrorCode::kInvalidInput);
  spec.trajectory.push_back(facing({2.0, 0.6, 0.8}, Eigen::Vector3d::UnitX()));
  CHECK(code_of([&] { generate_scene(spec); }) == ErrorCode::kInvalidGeometry);
}

TEST_CASE("dataset directories round trip bit for bit") {
  TempDir dir("dataset");
  const Dataset data = synthetic_dataset(11, 2, 3, 20, 28);
  for (const auto& s : data.scenes) save_scene(dir / s.name, s);
  fs::create_directories(dir.path / "not_a_scene");
  const Dataset back = load_dataset(dir.path.string());
  REQUIRE(back.scenes.size() == 2);
  for (std::size_t s = 0; s < 2; ++s) {
    CHECK(back.scenes[s].name == data.scenes[s].name);
    CHECK(back.scenes[s].labeled());
    REQUIRE(back.scenes[s].frames.size() == data.scenes[s].frames.size());
    for (std::size_t i = 0; i < data.scenes[s].frames.size(); ++i) {
      const auto& a = data.scenes[s].frames[i];
      const auto& b = back.scenes[s].frames[i];
      CHECK(b.frame_id == a.frame_id);
      CHECK(b.width() == 28);
      CHECK(b.height() == 20);
      CHECK(b.rgb == a.rgb);
      CHECK(b.depth == a.depth);
      CHECK(b.valid == a.valid);
      CHECK(b.labels == a.labels);
      CHECK(b.intrinsics.fx == a.intrinsics.fx);
      CHECK(b.intrinsics.cx == a.intrinsics.cx);
      CHECK(b.extrinsics.rotation == a.extrinsics.rotation);
      CHECK(b.extrinsics.translation == a.extrinsics.translation);
    }
  }
}

TEST_CASE("netpbm and pfm codecs") {
  TempDir dir("codecs");
  const std::vector<std::uint8_t> bits = {1, 0, 1, 1, 0, 0, 0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 1, 0, 1, 1};  // 10 x 2
  write_pbm(dir / "v.pbm", 10, 2, bits);
  const auto raw = io::read_file(dir / "v.pbm");
  // P4 packs MSB first, rows padded to whole bytes.
  REQUIRE(raw.size() == 8 + 4);
  CHECK(raw[8] == 0b10110001);
  CHECK(raw[9] == 0b10000000);
  CHECK(raw[10] == 0b10011110);
  CHECK(raw[11] == 0b11000000);
  int w = 0, h = 0;
  CHECK(read_pbm(dir / "v.pbm", w, h) == bits);
  CHECK(w == 10);

  const std::vector<float> depth = {0.5f, 1.25f, 3.0f, 0.0f, 7.5f, 2.0f};  // 3 x 2
  write_pfm(dir / "d.pfm", 3, 2, depth);
  CHECK(read_pfm(dir / "d.pfm", w, h) == depth);
  // Bottom row first on disk.
  const auto pfm = io::read_file(dir / "d.pfm");
  float first;
  std::memcpy(&first, pfm.data() + pfm.size() - 24, 4);
  CHECK(first == 0.0f);

  // Big-endian variant with a positive scale.
  {
    std::ofstream out(dir / "be.pfm", std::ios::binary);
    out << "Pf\n2 1\n1.0\n";
    for (float v : {1.5f, -2.0f}) {
      std::uint32_t b;
      std::memcpy(&b, &v, 4);
      for (int s = 24; s >= 0; s -= 8) out.put(char((b >> s) & 0xff));
    }
  }
  CHECK(read_pfm(dir / "be.pfm", w, h) == std::vector<float>{1.5f, -2.0f});

  write_ppm(dir / "c.ppm", 2, 1, {0, 0.5f, 1, 1, 1, 0});
  const auto rgb = read_ppm(dir / "c.ppm", w, h);
  CHECK(rgb[1] == 128.0f / 255.0f);

  io::write_file(dir / "bad.ppm", std::vector<std::uint8_t>{'P', '3', '\n', '1', ' ', '1', '\n', '2', '5', '5', '\n'});
  CHECK(code_of([&] { read_ppm(dir / "bad.ppm", w, h); }) == ErrorCode::kBadMagic);
  io::write_file(dir / "short.pgm", std::vector<std::uint8_t>{'P', '5', '\n', '4', ' ', '4', '\n', '2', '5', '5', '\n', 1});
  CHECK(code_of([&] { read_pgm(dir / "short.pgm", w, h); }) == ErrorCode::kTruncated);
  CHECK(code_of([&] { load_scene(dir / "missing"); }).has_value());
}

TEST_CASE("config defaults") {
  const TrainConfig c;
  CHECK(c.voxel_size == 0.05);
  CHECK(c.channels == 96);
  CHECK(c.encoder.out_channels == 96);
  CHECK(c.vit.hidden_dim == 96);
  CHECK(c.start_layer == 3);
  CHECK(c.mask_ratio == 0.30);
  CHECK(c.overlap_low == 0.4);
  CHECK(c.overlap_high == 0.8);
  CHECK(c.candidate_views == 5);
  CHECK(c.lr == 1e-3);
  CHECK(c.weight_decay == 1e-4);
  CHECK(c.lambda == 0.5);
  CHECK(c.steps_for(10) == 10);
}

TEST_CASE("config json round trip and rejection") {
  TrainConfig c;
  c.lambda = 0.25;
  c.channels = 48;
  c.view_reduction = ViewReduction::kMean;
  c.decoder.layers = 2;
  c.sync();
  const TrainConfig back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.encoder.out_channels == 48);
  CHECK(back.view_reduction == ViewReduction::kMean);

  const auto partial = config_from_json(nlohmann::json{{"overlap_range", {0.3, 0.9}}, {"seed", 4}});
  CHECK(partial.overlap_low == 0.3);
  CHECK(partial.overlap_high == 0.9);
  CHECK(partial.lr == 1e-3);
  CHECK(code_of([] { config_from_json(nlohmann::json{{"learning_rate", 0.1}}); }) == ErrorCode::kInvalidInput);
  CHECK(code_of([] { config_from_json(nlohmann::json{{"overlap_range", {0.9, 0.3}}}); }).has_value());
  CHECK(code_of([] { config_from_json(nlohmann::json{{"view_reduction", "max"}}); }).has_value());

  TrainConfig capped;
  capped.batch_size = 4;
  capped.epochs = 3;
  CHECK(capped.steps_for(10) == 9);
  capped.max_steps = 5;
  CHECK(capped.steps_for(10) == 5);
}

TEST_CASE("identical frames leave no pair in range") {
  SceneSpec spec = random_scene_spec(9, 4);
  for (auto& cam : spec.trajectory) cam = spec.trajectory[0];
  const auto frames = generate_scene(spec);
  std::mt19937_64 rng(1);
  CHECK(code_of([&] { sample_pair(std::span<const RgbdFrame>(frames), {0.4, 0.8}, 5, rng); }) == ErrorCode::kNoPair);
}

TEST_CASE("a lone in-range frame is always the second view") {
  // Each frame sees exactly one other frame at 0.6; everything else is out of range.
  const OverlapTable table(3, {1.0, 0.6, 0.1,  //
                               0.6, 1.0, 0.9,  //
                               0.6, 0.2, 1.0});
  const std::size_t partner[3] = {1, 0, 0};
  std::mt19937_64 rng(7);
  std::set<std::size_t> firsts;
  for (int d = 0; d < 300; ++d) {
    const FramePair p = sample_pair(table, {0.4, 0.8}, 5, rng);
    CHECK(p.second == partner[p.first]);
    CHECK(p.overlap == 0.6);
    firsts.insert(p.first);
  }
  CHECK(firsts.size() == 3);
  CHECK(code_of([] { OverlapTable(2, {1.0, 0.5}); }) == ErrorCode::kShapeMismatch);
}

TEST_CASE("pair candidates equal a brute-force filter and draws stay in range") {
  const auto frames = generate_scene(random_scene_spec(31, 10));
  REQUIRE(frames.size() == 10);
  const OverlapTable table(frames);
  const OverlapRange range{0.4, 0.8};
  std::size_t with_candidates = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    std::vector<std::size_t> expected;
    for (std::size_t j = 0; j < 10; ++j)
      if (j != i && range.contains(overlap_ratio(frames[i], frames[j])) && expected.size() < 5) expected.push_back(j);
    CHECK(pair_candidates(table, i, range, 5) == expected);
    with_candidates += !expected.empty();
  }
  REQUIRE(with_candidates > 0);

  std::mt19937_64 rng(2);
  std::map<std::pair<std::size_t, std::size_t>, int> seen;
  for (int d = 0; d < 1000; ++d) {
    std::size_t first = 0;
    try {
      const FramePair p = sample_pair(table, range, 5, rng);
      first = p.first;
      CHECK(range.contains(overlap_ratio(frames[p.first], frames[p.second])));
      CHECK(p.overlap == table(p.first, p.second));
      ++seen[{p.first, p.second}];
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kNoPair);
      (void)first;
    }
  }
  // Every candidate of every frame turns up.
  std::size_t total = 0;
  for (std::size_t i = 0; i < 10; ++i) total += pair_candidates(table, i, range, 5).size();
  CHECK(seen.size() == total);
}

TEST_CASE("realized mask ratio is round(ratio * P) / P") {
  const Dataset data = synthetic_dataset(12, 2, 6);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 0.9);
  for (int trial = 0; trial < 20; ++trial) {
    TrainConfig cfg;
    cfg.mask_ratio = u(rng);
    cfg.mask_patch = 1 << (1 + rng() % 3);
    const BatchSampler sampler(cfg, data);
    for (const auto& pair : sampler.batch(std::uint64_t(trial))) {
      for (const PatchMask* m : {&pair.mask1, &pair.mask2}) {
        const double p = double(m->total());
        CHECK(p == double((32 / cfg.mask_patch) * (32 / cfg.mask_patch)));
        CHECK(double(m->masked_count()) / p == double(std::lround(cfg.mask_ratio * p)) / p);
      }
      CHECK(pair.correspondences.size() <= std::size_t(cfg.queries));
      CHECK(!pair.correspondences.pairs.empty());
    }
  }
}

TEST_CASE("total loss composes l2d and lambda * lm") {
  set_threads(0);
  const Dataset data = synthetic_dataset(13, 1, 5);
  for (double lambda : {0.0, 0.5}) {
    TrainConfig cfg;
    cfg.lambda = lambda;
    Models models(cfg);
    nn::AdamW<float> opt(models.trainable(), nn::AdamWConfig{cfg.lr, cfg.weight_decay});
    const BatchSampler sampler(cfg, data);
    const auto batch = sampler.batch(0);
    const LossReport r = train_step(models, batch, opt);
    CHECK(r.pairs == 1);
    CHECK(r.l2d > 0);
    CHECK(r.lm > 0);
    if (lambda == 0.0) {
      CHECK(r.total == r.l2d);
      CHECK(r.graph_total == r.l2d);
    } else {
      CHECK(std::abs(r.total - r.l2d - 0.5 * r.lm) <= 1e-6);
      CHECK(std::abs(r.graph_total - r.total) <= 1e-6 * r.total);
    }
  }
}

TEST_CASE("checkpoint encoding round trips and rejects damage with distinct errors") {
  Checkpoint ck;
  ck.meta = {{"config", to_json(TrainConfig{})}, {"step", 7}};
  ck.tensors.push_back({"encoder.w", nn::HalfTag::kEncoder, {2, 3}, {1, 2, 3, 4, 5, 6}});
  ck.tensors.push_back({"decoder.b", nn::HalfTag::kDecoder, {2}, {-1, 0.5f}});
  ck.tensors.push_back({"student.x", nn::HalfTag::kAuxiliary, {1}, {3}});
  const auto bytes = ck.encode();
  const Checkpoint back = Checkpoint::decode(bytes);
  CHECK(back.encode() == bytes);
  CHECK(back.meta == ck.meta);
  REQUIRE(back.find("decoder.b"));
  CHECK(back.find("decoder.b")->data == std::vector<float>{-1, 0.5f});
  CHECK(back.find("nope") == nullptr);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "MVNT");
  CHECK(bytes[4] == kCheckpointVersion);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(code_of([&] { Checkpoint::decode(bad_magic); }) == ErrorCode::kBadMagic);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK(code_of([&] { Checkpoint::decode(bad_version); }) == ErrorCode::kVersionMismatch);
  for (std::size_t cut : {std::size_t(6), bytes.size() / 2, bytes.size() - 1})
    CHECK(code_of([&] { Checkpoint::decode(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + cut)); }) ==
          ErrorCode::kTruncated);

  TempDir dir("ckpt");
  save_checkpoint(dir / "a.mvnt", ck);
  CHECK(load_checkpoint(dir / "a.mvnt").encode() == bytes);

  const Checkpoint half = encoder_half(ck);
  REQUIRE(half.tensors.size() == 1);
  CHECK(half.tensors[0].name == "encoder.w");
}

TEST_CASE("the encoder half holds exactly the encoder-tagged tensors") {
  Models models(TrainConfig{});
  Checkpoint ck;
  append_module(ck, *models.encoder, "encoder");
  append_module(ck, *models.student, "student");
  append_module(ck, *models.decoder, "decoder");
  std::set<std::string> tagged;
  for (const auto& p : models.encoder->named_parameters("encoder"))
    if (p.param->tag == nn::HalfTag::kEncoder) tagged.insert(p.path);
  for (const auto& b : models.encoder->named_buffers("encoder"))
    if (b.tag == nn::HalfTag::kEncoder) tagged.insert(b.path);
  std::set<std::string> half;
  for (const auto& t : encoder_half(ck).tensors) half.insert(t.name);
  CHECK(!half.empty());
  CHECK(half == tagged);
  // The encoder has both halves; student and decoder never land in the encoder half.
  CHECK(half.size() < models.encoder->named_parameters("").size() + models.encoder->named_buffers("").size());
  for (const auto& name : half) CHECK(name.rfind("encoder.", 0) == 0);
}

TEST_CASE("deterministic runs give identical checkpoints and resume exactly") {
  set_threads(0);
  const Dataset data = synthetic_dataset(14, 2, 5);
  const TrainConfig cfg = quick_config();
  auto run = [&](std::size_t steps) {
    Trainer t(cfg, data);
    t.run(steps);
    return t.checkpoint().encode();
  };
  const auto a = run(3);
  CHECK(a == run(3));
  CHECK(a != run(2));

  Trainer first(cfg, data);
  first.run(1);
  const Checkpoint mid = first.checkpoint();
  Trainer resumed(cfg, data);
  resumed.restore(Checkpoint::decode(mid.encode()));
  CHECK(resumed.steps_done() == 1);
  resumed.run(2);
  CHECK(resumed.checkpoint().encode() == a);

  TrainConfig other = cfg;
  other.lambda = 0.1;
  Trainer mismatched(other, data);
  CHECK(code_of([&] { mismatched.restore(mid); }) == ErrorCode::kInvalidInput);
}

TEST_CASE("encoder and models load back from a checkpoint") {
  set_threads(0);
  const Dataset data = synthetic_dataset(15, 1, 4);
  Trainer t(quick_config(), data);
  t.run(1);
  const Checkpoint ck = t.checkpoint();
  auto enc = encoder_from_checkpoint(ck);
  CHECK(module_bytes(*enc) == module_bytes(*t.models().encoder));
  auto half = encoder_from_checkpoint(encoder_half(ck), true);
  CHECK(module_bytes(*half) != module_bytes(*t.models().encoder));
  auto models = models_from_checkpoint(ck);
  CHECK(module_bytes(*models->decoder) == module_bytes(*t.models().decoder));
  CHECK(code_of([&] { encoder_from_checkpoint(encoder_half(ck)); }) == ErrorCode::kShapeMismatch);
}

TEST_CASE("correspondence evaluation is deterministic and bounded") {
  set_threads(0);
  const Dataset data = synthetic_dataset(16, 2, 6);
  Models models(TrainConfig{});
  const auto a = evaluate_correspondence(models, data, 3, 2);
  const auto b = evaluate_correspondence(models, data, 3, 2);
  CHECK(a.pairs == 4);
  CHECK(a.queries > 0);
  CHECK(a.mean_error_px == b.mean_error_px);
  CHECK(a.mean_error_px > 0);
  CHECK(a.mean_error_px < 2 * 32 * std::sqrt(2.0));
  CHECK(to_json(a)["pairs"] == 4);
}

TEST_CASE("exported features have the documented layout") {
  set_threads(0);
  const Dataset data = synthetic_dataset(17, 1, 2, 16, 16);
  const TrainConfig cfg;
  nn::Rng rng(1);
  Encoder3d<float> enc(cfg.encoder, rng);
  TempDir dir("features");
  export_features(enc, data.scenes[0], cfg, dir / "f.mvfv");
  auto r = io::Reader::open(dir / "f.mvfv");
  r.expect_magic("MVFV");
  CHECK(r.u32() == kFeatureFileVersion);
  const std::uint32_t m = r.u32(), c = r.u32();
  CHECK(c == 96);
  CHECK(m == data.scenes[0].frames[0].valid_count() + data.scenes[0].frames[1].valid_count());
  CHECK(r.remaining() == std::size_t(m) * (24 + 1) + std::size_t(m) * c * 4);
  for (int k = 0; k < 6; ++k) r.f32();
  CHECK(r.u8() < kNumSurfaceLabels);
}

TEST_CASE("linear probe: separable toy data, degenerate labels, frozen encoder") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 0.3);
  Eigen::MatrixXd x(200, 3), tx(100, 3);
  std::vector<int> y(200), ty(100);
  const double centers[3][3] = {{2, 0, 0}, {0, 2, 0}, {0, 0, 2}};
  auto fill = [&](Eigen::MatrixXd& m, std::vector<int>& lab) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      lab[i] = int(i % 3);
      for (int a = 0; a < 3; ++a) m(i, a) = centers[lab[i]][a] + n(rng);
    }
  };
  fill(x, y);
  fill(tx, ty);
  const auto r = fit_linear_probe(x, y, tx, ty, ProbeOptions{});
  CHECK(r.train_accuracy == 1.0);
  CHECK(r.test_accuracy == 1.0);
  CHECK(r.classes == 3);

  std::vector<int> one(200, 2);
  CHECK(code_of([&] { fit_linear_probe(x, one, tx, ty, ProbeOptions{}); }) == ErrorCode::kDegenerateProbe);

  set_threads(0);
  const Dataset labeled = synthetic_dataset(18, 2, 3, 16, 16);
  const TrainConfig cfg;
  nn::Rng erng(2);
  Encoder3d<float> enc(cfg.encoder, erng);
  const auto before = module_bytes(enc);
  ProbeOptions opts;
  opts.iterations = 50;
  opts.max_points_per_scene = 256;
  const auto p = linear_probe(enc, labeled, cfg, opts);
  CHECK(module_bytes(enc) == before);
  CHECK(enc.training());
  CHECK(p.train_points > 0);
  CHECK(p.test_points > 0);
  CHECK(p.test_accuracy >= 0.0);
  CHECK(p.test_accuracy <= 1.0);
  Dataset single;
  single.scenes.push_back(labeled.scenes[0]);
  CHECK(code_of([&] { linear_probe(enc, single, cfg, opts); }).has_value());
}
