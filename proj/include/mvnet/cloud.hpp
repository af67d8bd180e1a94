#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "mvnet/geometry.hpp"
#include "mvnet/nn/tensor.hpp"

namespace mvnet {

inline constexpr double kDefaultVoxelSize = 0.05;
inline constexpr int kDefaultKnn = 3;
inline constexpr double kKnnEpsilon = 1e-8;
inline constexpr double kDepthTieTolerance = 1e-9;

// Source pixel of a point. `view` is 1-based.
struct PointProvenance {
  std::uint8_t view = 1;
  int row = 0;
  int col = 0;
};

struct ColoredPointCloud {
  std::vector<Eigen::Vector3d> positions;
  std::vector<Eigen::Vector3f> colors;
  std::vector<PointProvenance> provenance;
  std::vector<std::uint8_t> labels;   // per point, empty when frames are unlabeled
  std::vector<std::string> view_ids;  // frame_id of view 1, 2, ...

  std::size_t size() const { return positions.size(); }
  void validate() const;
};

struct PatchMask {
  int patch_size = 1;
  int rows = 0;  // patches along H
  int cols = 0;  // patches along W
  double ratio = 0.0;
  std::vector<std::uint8_t> masked;  // rows * cols

  std::size_t total() const { return masked.size(); }
  std::size_t masked_count() const;
  bool masks_pixel(int row, int col) const {
    return masked[std::size_t(row / patch_size) * cols + std::size_t(col / patch_size)] != 0;
  }
};

struct VoxelIndex {
  int x = 0, y = 0, z = 0;
  friend bool operator==(const VoxelIndex&, const VoxelIndex&) = default;
  friend auto operator<=>(const VoxelIndex&, const VoxelIndex&) = default;
};

struct VoxelIndexHash {
  std::size_t operator()(const VoxelIndex& v) const noexcept {
    std::uint64_t h = std::uint64_t(std::uint32_t(v.x)) * 0x9E3779B97F4A7C15ull;
    h ^= std::uint64_t(std::uint32_t(v.y)) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= std::uint64_t(std::uint32_t(v.z)) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

struct VoxelCell {
  VoxelIndex index;
  std::array<double, 6> mean_feature{};  // xyz (meters) + rgb
  std::vector<std::size_t> members;
};

// Occupied cells are enumerated in lexicographic (x, y, z) index order.
struct VoxelGrid {
  double voxel_size = kDefaultVoxelSize;
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  std::vector<VoxelCell> cells;
  std::unordered_map<VoxelIndex, std::size_t, VoxelIndexHash> lookup;
  std::vector<std::size_t> point_to_voxel;

  std::size_t size() const { return cells.size(); }
  Eigen::Vector3d center(std::size_t cell) const;
  // Per-axis cell count of the bounding box (max index + 1).
  std::array<int, 3> extent() const;
};

template <typename T>
struct FeatureVolume {
  nn::Tensor<T> features;  // [M, C]
  std::size_t channels = 0;
  std::shared_ptr<const ColoredPointCloud> cloud;
};

template <typename T>
struct FeatureMap {
  nn::Tensor<T> data;  // [H, W, C]; zero where uncovered
  std::vector<std::uint8_t> coverage;
  std::string view_id;
  int height = 0;
  int width = 0;
  std::size_t channels() const { return data.dim(2); }
};

// Nearest-neighbour plan used by knn_interpolate: `fan_in` voxel indices and
// normalized weights per point (index -1 for unused slots).
struct KnnPlan {
  std::size_t fan_in = 0;
  std::vector<std::int64_t> index;
  std::vector<double> weight;
};

// Per-pixel source point (-1 when uncovered) chosen by the z-buffer.
struct ProjectionPlan {
  int height = 0;
  int width = 0;
  std::vector<std::int64_t> point;
  std::vector<double> depth;
};

struct ViewInput {
  const RgbdFrame* frame = nullptr;
  const PatchMask* mask = nullptr;
};

ColoredPointCloud build_point_cloud(std::span<const ViewInput> views);
ColoredPointCloud build_point_cloud(const RgbdFrame& f1, const RgbdFrame& f2, const PatchMask* mask1 = nullptr,
                                    const PatchMask* mask2 = nullptr);

VoxelIndex voxel_index(const Eigen::Vector3d& p, const Eigen::Vector3d& origin, double voxel_size);

VoxelGrid voxelize(const ColoredPointCloud& cloud, double voxel_size = kDefaultVoxelSize);
VoxelGrid voxelize(const ColoredPointCloud& cloud, double voxel_size, const Eigen::Vector3d& origin);

KnnPlan knn_plan(const VoxelGrid& grid, const ColoredPointCloud& cloud, int k);

template <typename T>
FeatureVolume<T> knn_interpolate(const nn::Tensor<T>& voxel_features, const VoxelGrid& grid,
                                 std::shared_ptr<const ColoredPointCloud> cloud, int k = kDefaultKnn);

PatchMask sample_patch_mask(double ratio, int patch_size, int height, int width, std::uint64_t seed);

ProjectionPlan projection_plan(const ColoredPointCloud& cloud, const RgbdFrame& frame);

template <typename T>
FeatureMap<T> project_features(const FeatureVolume<T>& volume, const RgbdFrame& frame);

namespace kernels {

// Serial references and OpenMP versions of the point kernels. The parallel
// versions partition by output (point or pixel) and match the references
// exactly.
namespace reference {
KnnPlan knn(std::span<const Eigen::Vector3d> centers, std::span<const Eigen::Vector3d> points, int k);
ProjectionPlan zbuffer(const ColoredPointCloud& cloud, const RgbdFrame& frame);
}  // namespace reference

namespace parallel {
KnnPlan knn(std::span<const Eigen::Vector3d> centers, std::span<const Eigen::Vector3d> points, int k);
ProjectionPlan zbuffer(const ColoredPointCloud& cloud, const RgbdFrame& frame);
}  // namespace parallel

}  // namespace kernels

}  // namespace mvnet
