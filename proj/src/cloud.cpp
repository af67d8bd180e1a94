#include "mvnet/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "mvnet/error.hpp"
#include "mvnet/nn/ops.hpp"
#include "mvnet/parallel.hpp"

namespace mvnet {

void ColoredPointCloud::validate() const {
  if (colors.size() != positions.size() || provenance.size() != positions.size())
    fail(ErrorCode::kInvalidInput, "point cloud arrays disagree in length");
  if (!labels.empty() && labels.size() != positions.size())
    fail(ErrorCode::kInvalidInput, "point cloud labels disagree in length");
  for (const auto& p : positions)
    if (!p.allFinite()) fail(ErrorCode::kInvalidInput, "non-finite point position");
}

std::size_t PatchMask::masked_count() const {
  return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), std::uint8_t{1}));
}

ColoredPointCloud build_point_cloud(std::span<const ViewInput> views) {
  if (views.empty()) fail(ErrorCode::kInvalidInput, "build_point_cloud: no views");
  ColoredPointCloud cloud;
  bool labeled = true;
  for (const auto& v : views) {
    if (v.frame == nullptr) fail(ErrorCode::kInvalidInput, "build_point_cloud: null frame");
    v.frame->validate();
    labeled = labeled && !v.frame->labels.empty();
    if (v.mask != nullptr) {
      const auto& m = *v.mask;
      if (m.rows * m.patch_size != v.frame->height() || m.cols * m.patch_size != v.frame->width())
        fail(ErrorCode::kInvalidGeometry, "patch mask does not tile frame " + v.frame->frame_id);
    }
  }
  for (std::size_t vi = 0; vi < views.size(); ++vi) {
    const RgbdFrame& f = *views[vi].frame;
    const PatchMask* mask = views[vi].mask;
    cloud.view_ids.push_back(f.frame_id);
    for (int r = 0; r < f.height(); ++r) {
      for (int c = 0; c < f.width(); ++c) {
        if (!f.is_valid(r, c)) continue;
        if (mask != nullptr && mask->masks_pixel(r, c)) continue;
        const std::size_t i = f.index(r, c);
        cloud.positions.push_back(unproject({double(c), double(r)}, f.depth[i], f.intrinsics, f.extrinsics));
        cloud.colors.emplace_back(f.rgb[3 * i], f.rgb[3 * i + 1], f.rgb[3 * i + 2]);
        cloud.provenance.push_back({static_cast<std::uint8_t>(vi + 1), r, c});
        if (labeled) cloud.labels.push_back(f.labels[i]);
      }
    }
  }
  if (cloud.positions.empty()) fail(ErrorCode::kEmptyCloud, "no valid unmasked pixels in any view");
  return cloud;
}

ColoredPointCloud build_point_cloud(const RgbdFrame& f1, const RgbdFrame& f2, const PatchMask* mask1,
                                    const PatchMask* mask2) {
  const ViewInput views[2] = {{&f1, mask1}, {&f2, mask2}};
  return build_point_cloud(std::span<const ViewInput>(views));
}

VoxelIndex voxel_index(const Eigen::Vector3d& p, const Eigen::Vector3d& origin, double voxel_size) {
  const Eigen::Vector3d q = (p - origin) / voxel_size;
  const auto cell = [](double x) {
    const double f = std::floor(x);
    if (!(std::abs(f) < double(std::numeric_limits<int>::max() / 2)))
      fail(ErrorCode::kInvalidInput, "point too far from voxel origin");
    return static_cast<int>(f);
  };
  return {cell(q.x()), cell(q.y()), cell(q.z())};
}

Eigen::Vector3d VoxelGrid::center(std::size_t cell) const {
  const auto& ix = cells.at(cell).index;
  return origin + voxel_size * Eigen::Vector3d(ix.x + 0.5, ix.y + 0.5, ix.z + 0.5);
}

std::array<int, 3> VoxelGrid::extent() const {
  std::array<int, 3> e{0, 0, 0};
  for (const auto& c : cells) {
    e[0] = std::max(e[0], c.index.x + 1);
    e[1] = std::max(e[1], c.index.y + 1);
    e[2] = std::max(e[2], c.index.z + 1);
  }
  return e;
}

VoxelGrid voxelize(const ColoredPointCloud& cloud, double voxel_size) {
  if (cloud.size() == 0) fail(ErrorCode::kEmptyCloud, "voxelize: empty cloud");
  Eigen::Vector3d lo = cloud.positions.front();
  for (const auto& p : cloud.positions) lo = lo.cwiseMin(p);
  return voxelize(cloud, voxel_size, lo);
}

VoxelGrid voxelize(const ColoredPointCloud& cloud, double voxel_size, const Eigen::Vector3d& origin) {
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size))
    fail(ErrorCode::kInvalidGeometry, "voxel size must be positive");
  if (cloud.size() == 0) fail(ErrorCode::kEmptyCloud, "voxelize: empty cloud");
  cloud.validate();

  VoxelGrid grid;
  grid.voxel_size = voxel_size;
  grid.origin = origin;

  std::vector<VoxelIndex> keys(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) keys[i] = voxel_index(cloud.positions[i], origin, voxel_size);

  std::vector<VoxelIndex> unique = keys;
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());

  grid.cells.resize(unique.size());
  grid.lookup.reserve(unique.size());
  for (std::size_t c = 0; c < unique.size(); ++c) {
    grid.cells[c].index = unique[c];
    grid.lookup.emplace(unique[c], c);
  }
  grid.point_to_voxel.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const std::size_t c = grid.lookup.at(keys[i]);
    grid.point_to_voxel[i] = c;
    grid.cells[c].members.push_back(i);
  }
  for (auto& cell : grid.cells) {
    std::array<double, 6> acc{};
    for (std::size_t i : cell.members) {
      for (int a = 0; a < 3; ++a) acc[a] += cloud.positions[i][a];
      for (int a = 0; a < 3; ++a) acc[3 + a] += cloud.colors[i][a];
    }
    const double n = static_cast<double>(cell.members.size());
    for (auto& v : acc) v /= n;
    cell.mean_feature = acc;
  }
  return grid;
}

namespace {

void check_k(int k, std::size_t centers) {
  if (k < 1) fail(ErrorCode::kInvalidInput, "knn: k must be >= 1");
  if (centers == 0) fail(ErrorCode::kEmptyCloud, "knn: no voxel centers");
}

// Turns the k nearest (distance, index) pairs into interpolation weights.
void finalize_row(const std::pair<double, std::int64_t>* best, std::size_t found, std::size_t k,
                  std::int64_t* index, double* weight) {
  for (std::size_t j = 0; j < k; ++j) {
    index[j] = -1;
    weight[j] = 0.0;
  }
  if (best[0].first < 1e-12) {
    index[0] = best[0].second;
    weight[0] = 1.0;
    return;
  }
  double total = 0.0;
  for (std::size_t j = 0; j < found; ++j) {
    index[j] = best[j].second;
    weight[j] = 1.0 / (best[j].first + kKnnEpsilon);
    total += weight[j];
  }
  for (std::size_t j = 0; j < found; ++j) weight[j] /= total;
}

}  // namespace

namespace kernels::reference {

KnnPlan knn(std::span<const Eigen::Vector3d> centers, std::span<const Eigen::Vector3d> points, int k) {
  check_k(k, centers.size());
  KnnPlan plan;
  plan.fan_in = static_cast<std::size_t>(k);
  plan.index.resize(points.size() * plan.fan_in);
  plan.weight.resize(points.size() * plan.fan_in);
  std::vector<std::pair<double, std::int64_t>> all(centers.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t c = 0; c < centers.size(); ++c)
      all[c] = {(points[i] - centers[c]).norm(), static_cast<std::int64_t>(c)};
    std::sort(all.begin(), all.end());
    const std::size_t found = std::min(plan.fan_in, centers.size());
    finalize_row(all.data(), found, plan.fan_in, &plan.index[i * plan.fan_in], &plan.weight[i * plan.fan_in]);
  }
  return plan;
}

}  // namespace kernels::reference

namespace kernels::parallel {

KnnPlan knn(std::span<const Eigen::Vector3d> centers, std::span<const Eigen::Vector3d> points, int k) {
  check_k(k, centers.size());
  KnnPlan plan;
  plan.fan_in = static_cast<std::size_t>(k);
  plan.index.resize(points.size() * plan.fan_in);
  plan.weight.resize(points.size() * plan.fan_in);
  const std::size_t kk = plan.fan_in;
  const std::int64_t n = static_cast<std::int64_t>(points.size());
#pragma omp parallel num_threads(kernel_threads())
  {
    std::vector<std::pair<double, std::int64_t>> best(kk + 1);
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
      const Eigen::Vector3d& p = points[static_cast<std::size_t>(i)];
      std::size_t found = 0;
      for (std::size_t c = 0; c < centers.size(); ++c) {
        const std::pair<double, std::int64_t> cand{(p - centers[c]).norm(), static_cast<std::int64_t>(c)};
        if (found == kk && !(cand < best[kk - 1])) continue;
        std::size_t pos = found < kk ? found++ : kk - 1;
        while (pos > 0 && cand < best[pos - 1]) {
          best[pos] = best[pos - 1];
          --pos;
        }
        best[pos] = cand;
      }
      const std::size_t row = static_cast<std::size_t>(i) * kk;
      finalize_row(best.data(), found, kk, &plan.index[row], &plan.weight[row]);
    }
  }
  return plan;
}

}  // namespace kernels::parallel

KnnPlan knn_plan(const VoxelGrid& grid, const ColoredPointCloud& cloud, int k) {
  std::vector<Eigen::Vector3d> centers(grid.size());
  for (std::size_t c = 0; c < grid.size(); ++c) centers[c] = grid.center(c);
  return kernels::parallel::knn(centers, cloud.positions, k);
}

template <typename T>
FeatureVolume<T> knn_interpolate(const nn::Tensor<T>& voxel_features, const VoxelGrid& grid,
                                 std::shared_ptr<const ColoredPointCloud> cloud, int k) {
  if (!cloud) fail(ErrorCode::kInvalidInput, "knn_interpolate: null cloud");
  if (voxel_features.rank() != 2 || voxel_features.dim(0) != grid.size())
    fail(ErrorCode::kShapeMismatch, "knn_interpolate: features " + nn::to_string(voxel_features.shape()) +
                                        " do not match " + std::to_string(grid.size()) + " voxels");
  const KnnPlan plan = knn_plan(grid, *cloud, k);
  std::vector<T> weights(plan.weight.begin(), plan.weight.end());
  FeatureVolume<T> out;
  out.features = nn::gather_rows(voxel_features, plan.index, weights, plan.fan_in);
  out.channels = voxel_features.dim(1);
  out.cloud = std::move(cloud);
  return out;
}

PatchMask sample_patch_mask(double ratio, int patch_size, int height, int width, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) fail(ErrorCode::kInvalidInput, "mask ratio must lie in [0, 1]");
  if (patch_size < 1 || height < 1 || width < 1 || height % patch_size != 0 || width % patch_size != 0)
    fail(ErrorCode::kInvalidGeometry, "mask patch size must tile the frame");
  PatchMask m;
  m.patch_size = patch_size;
  m.rows = height / patch_size;
  m.cols = width / patch_size;
  m.ratio = ratio;
  const std::size_t total = static_cast<std::size_t>(m.rows) * static_cast<std::size_t>(m.cols);
  const auto count = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(total)));
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  m.masked.assign(total, 0);
  for (std::size_t i = 0; i < count; ++i) m.masked[order[i]] = 1;
  return m;
}

namespace {

struct PointHit {
  std::int64_t pixel = -1;
  double depth = 0.0;
};

// Destination pixel of point i in `frame`, or -1. Points that originate from
// this frame land on their source pixel.
PointHit locate(const ColoredPointCloud& cloud, std::size_t i, const RgbdFrame& frame, int own_view) {
  const Projection pr = project(cloud.positions[i], frame.intrinsics, frame.extrinsics);
  if (!(pr.depth > 0.0)) return {};
  const auto& prov = cloud.provenance[i];
  if (own_view > 0 && prov.view == own_view)
    return {static_cast<std::int64_t>(frame.index(prov.row, prov.col)), pr.depth};
  if (!pr.pixel.allFinite()) return {};
  const double x = std::floor(pr.pixel.x() + 0.5);
  const double y = std::floor(pr.pixel.y() + 0.5);
  if (x < 0 || y < 0 || x >= frame.width() || y >= frame.height()) return {};
  return {static_cast<std::int64_t>(frame.index(int(y), int(x))), pr.depth};
}

int own_view_of(const ColoredPointCloud& cloud, const RgbdFrame& frame) {
  for (std::size_t v = 0; v < cloud.view_ids.size(); ++v)
    if (cloud.view_ids[v] == frame.frame_id) return static_cast<int>(v + 1);
  return 0;
}

bool closer(double depth, std::int64_t idx, double best_depth, std::int64_t best_idx) {
  if (best_idx < 0) return true;
  if (depth < best_depth - kDepthTieTolerance) return true;
  return std::abs(depth - best_depth) <= kDepthTieTolerance && idx < best_idx;
}

ProjectionPlan empty_plan(const RgbdFrame& frame) {
  ProjectionPlan plan;
  plan.height = frame.height();
  plan.width = frame.width();
  plan.point.assign(frame.pixel_count(), -1);
  plan.depth.assign(frame.pixel_count(), 0.0);
  return plan;
}

}  // namespace

namespace kernels::reference {

ProjectionPlan zbuffer(const ColoredPointCloud& cloud, const RgbdFrame& frame) {
  frame.intrinsics.validate();
  ProjectionPlan plan = empty_plan(frame);
  const int own = own_view_of(cloud, frame);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const PointHit h = locate(cloud, i, frame, own);
    if (h.pixel < 0) continue;
    const auto px = static_cast<std::size_t>(h.pixel);
    if (closer(h.depth, std::int64_t(i), plan.depth[px], plan.point[px])) {
      plan.point[px] = static_cast<std::int64_t>(i);
      plan.depth[px] = h.depth;
    }
  }
  return plan;
}

}  // namespace kernels::reference

namespace kernels::parallel {

ProjectionPlan zbuffer(const ColoredPointCloud& cloud, const RgbdFrame& frame) {
  frame.intrinsics.validate();
  ProjectionPlan plan = empty_plan(frame);
  const int own = own_view_of(cloud, frame);
  const auto n = static_cast<std::int64_t>(cloud.size());
  std::vector<PointHit> hits(cloud.size());
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (std::int64_t i = 0; i < n; ++i) hits[std::size_t(i)] = locate(cloud, std::size_t(i), frame, own);

  // Bucket points by pixel keeping index order, then resolve each pixel.
  std::vector<std::size_t> start(frame.pixel_count() + 1, 0);
  for (const auto& h : hits)
    if (h.pixel >= 0) ++start[std::size_t(h.pixel) + 1];
  std::partial_sum(start.begin(), start.end(), start.begin());
  std::vector<std::size_t> fill(start.begin(), start.end() - 1);
  std::vector<std::size_t> bucket(start.back());
  for (std::size_t i = 0; i < hits.size(); ++i)
    if (hits[i].pixel >= 0) bucket[fill[std::size_t(hits[i].pixel)]++] = i;

  const auto pixels = static_cast<std::int64_t>(frame.pixel_count());
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (std::int64_t px = 0; px < pixels; ++px) {
    const auto p = static_cast<std::size_t>(px);
    for (std::size_t b = start[p]; b < start[p + 1]; ++b) {
      const std::size_t i = bucket[b];
      if (closer(hits[i].depth, std::int64_t(i), plan.depth[p], plan.point[p])) {
        plan.point[p] = static_cast<std::int64_t>(i);
        plan.depth[p] = hits[i].depth;
      }
    }
  }
  return plan;
}

}  // namespace kernels::parallel

ProjectionPlan projection_plan(const ColoredPointCloud& cloud, const RgbdFrame& frame) {
  return kernels::parallel::zbuffer(cloud, frame);
}

template <typename T>
FeatureMap<T> project_features(const FeatureVolume<T>& volume, const RgbdFrame& frame) {
  if (!volume.cloud) fail(ErrorCode::kInvalidInput, "project_features: volume has no cloud");
  if (volume.features.rank() != 2 || volume.features.dim(0) != volume.cloud->size())
    fail(ErrorCode::kShapeMismatch, "project_features: feature rows do not match cloud");
  const ProjectionPlan plan = projection_plan(*volume.cloud, frame);
  FeatureMap<T> out;
  out.height = frame.height();
  out.width = frame.width();
  out.view_id = frame.frame_id;
  out.coverage.resize(plan.point.size());
  for (std::size_t p = 0; p < plan.point.size(); ++p) out.coverage[p] = plan.point[p] >= 0 ? 1 : 0;
  const std::vector<T> ones(plan.point.size(), T(1));
  const auto rows = nn::gather_rows(volume.features, plan.point, ones, 1);
  out.data = nn::reshape(rows, {std::size_t(out.height), std::size_t(out.width), volume.channels});
  return out;
}

template FeatureVolume<float> knn_interpolate(const nn::Tensor<float>&, const VoxelGrid&,
                                              std::shared_ptr<const ColoredPointCloud>, int);
template FeatureVolume<double> knn_interpolate(const nn::Tensor<double>&, const VoxelGrid&,
                                               std::shared_ptr<const ColoredPointCloud>, int);
template FeatureMap<float> project_features(const FeatureVolume<float>&, const RgbdFrame&);
template FeatureMap<double> project_features(const FeatureVolume<double>&, const RgbdFrame&);

}  // namespace mvnet
