// Serial reference kernels vs their OpenMP versions. The thread count of the
// parallel runs is the benchmark argument; MVNET_THREADS is ignored here.
#include <benchmark/benchmark.h>

#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include "mvnet/cloud.hpp"
#include "mvnet/nn/kernels.hpp"
#include "mvnet/parallel.hpp"
#include "mvnet/pipeline/dataset.hpp"

using namespace mvnet;
namespace nk = mvnet::nn::kernels;

namespace {

std::vector<float> random_floats(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d;
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

constexpr int kGemm = 256;

struct GemmData {
  std::vector<float> a = random_floats(kGemm * kGemm, 1), b = random_floats(kGemm * kGemm, 2), c =
                                                                 std::vector<float>(kGemm * kGemm);
};

nk::ConvGeometry conv_geometry() { return nk::ConvGeometry::make({16, 16, 16}, 16, 32, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}); }

struct ConvData {
  nk::ConvGeometry g = conv_geometry();
  std::vector<float> x = random_floats(g.in_cells() * g.cin, 3), w = random_floats(g.weight_size(), 4),
                     y = std::vector<float>(g.out_cells() * g.cout);
};

// Fused cloud of a 64x64 synthetic scene and its voxel grid.
struct SceneData {
  pipeline::Dataset data = pipeline::synthetic_dataset(1, 1, 8, 64, 64);
  ColoredPointCloud cloud;
  VoxelGrid grid;
  std::vector<Eigen::Vector3d> centers;
  SceneData() {
    std::vector<ViewInput> views;
    for (const auto& f : data.scenes[0].frames) views.push_back({&f, nullptr});
    cloud = build_point_cloud(views);
    grid = voxelize(cloud, 0.05);
    for (std::size_t c = 0; c < grid.size(); ++c) centers.push_back(grid.center(c));
  }
};

GemmData& gemm_data() {
  static GemmData d;
  return d;
}
ConvData& conv_data() {
  static ConvData d;
  return d;
}
SceneData& scene_data() {
  static SceneData d;
  return d;
}

void set_parallel_threads(const benchmark::State& state) { set_threads(int(state.range(0))); }

void BM_GemmReference(benchmark::State& state) {
  auto& d = gemm_data();
  for (auto _ : state) {
    nk::reference::gemm<float>(false, false, kGemm, kGemm, kGemm, d.a, d.b, d.c, false);
    benchmark::DoNotOptimize(d.c.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(kGemm) * kGemm * kGemm);
}

void BM_GemmParallel(benchmark::State& state) {
  set_parallel_threads(state);
  auto& d = gemm_data();
  for (auto _ : state) {
    nk::parallel::gemm<float>(false, false, kGemm, kGemm, kGemm, d.a, d.b, d.c, false);
    benchmark::DoNotOptimize(d.c.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(kGemm) * kGemm * kGemm);
}

void BM_ConvReference(benchmark::State& state) {
  auto& d = conv_data();
  for (auto _ : state) {
    nk::reference::conv_forward<float>(d.g, d.x, d.w, d.y);
    benchmark::DoNotOptimize(d.y.data());
  }
}

void BM_ConvParallel(benchmark::State& state) {
  set_parallel_threads(state);
  auto& d = conv_data();
  for (auto _ : state) {
    nk::parallel::conv_forward<float>(d.g, d.x, d.w, d.y);
    benchmark::DoNotOptimize(d.y.data());
  }
}

void BM_KnnReference(benchmark::State& state) {
  auto& d = scene_data();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::knn(d.centers, d.cloud.positions, 3));
  state.SetItemsProcessed(state.iterations() * std::int64_t(d.cloud.size()));
}

void BM_KnnParallel(benchmark::State& state) {
  set_parallel_threads(state);
  auto& d = scene_data();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::parallel::knn(d.centers, d.cloud.positions, 3));
  state.SetItemsProcessed(state.iterations() * std::int64_t(d.cloud.size()));
}

void BM_ZbufferReference(benchmark::State& state) {
  auto& d = scene_data();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::zbuffer(d.cloud, d.data.scenes[0].frames[0]));
}

void BM_ZbufferParallel(benchmark::State& state) {
  set_parallel_threads(state);
  auto& d = scene_data();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::parallel::zbuffer(d.cloud, d.data.scenes[0].frames[0]));
}

// The versions must agree before any timing is worth reading: the point
// kernels bit for bit, GEMM and convolution up to float rounding.
bool kernels_agree() {
  set_threads(4);
  auto& g = gemm_data();
  std::vector<float> c1(g.c.size()), c2(g.c.size());
  nk::reference::gemm<float>(false, true, kGemm, kGemm, kGemm, g.a, g.b, c1, false);
  nk::parallel::gemm<float>(false, true, kGemm, kGemm, kGemm, g.a, g.b, c2, false);
  bool ok = true;
  for (std::size_t i = 0; i < c1.size(); ++i) ok = ok && std::abs(c1[i] - c2[i]) <= 1e-3f * (1 + std::abs(c1[i]));

  auto& c = conv_data();
  std::vector<float> y1(c.y.size()), y2(c.y.size());
  nk::reference::conv_forward<float>(c.g, c.x, c.w, y1);
  nk::parallel::conv_forward<float>(c.g, c.x, c.w, y2);
  for (std::size_t i = 0; i < y1.size(); ++i) ok = ok && std::abs(y1[i] - y2[i]) <= 1e-3f * (1 + std::abs(y1[i]));

  auto& s = scene_data();
  const auto k1 = kernels::reference::knn(s.centers, s.cloud.positions, 3);
  const auto k2 = kernels::parallel::knn(s.centers, s.cloud.positions, 3);
  ok = ok && k1.index == k2.index && k1.weight == k2.weight;
  const auto z1 = kernels::reference::zbuffer(s.cloud, s.data.scenes[0].frames[0]);
  const auto z2 = kernels::parallel::zbuffer(s.cloud, s.data.scenes[0].frames[0]);
  return ok && z1.point == z2.point && z1.depth == z2.depth;
}

}  // namespace

BENCHMARK(BM_GemmReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GemmParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_KnnReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_KnnParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ZbufferReference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ZbufferParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMicrosecond);

int main(int argc, char** argv) {
  if (!kernels_agree()) {
    std::fprintf(stderr, "parallel kernels disagree with the references\n");
    return 1;
  }
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
