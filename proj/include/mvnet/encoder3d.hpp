#pragma once

#include <array>
#include <memory>
#include <vector>

#include "mvnet/cloud.hpp"
#include "mvnet/nn/layers.hpp"

namespace mvnet {

struct EncoderConfig {
  // Output widths of the stride-2 stages; the stem uses the first width.
  std::vector<int> channels_per_stage{16, 32, 48, 64};
  int out_channels = 96;
  int in_channels = 6;  // voxel mean xyz (relative to the grid origin) + rgb
  int max_extent = 64;  // per axis, after padding
  bool skip_connections = true;

  int num_stages() const { return static_cast<int>(channels_per_stage.size()); }
  // Padded grids are multiples of this per axis.
  int alignment() const { return 1 << num_stages(); }
  void validate() const;
  // Closed-form parameter count of the architecture below.
  std::size_t parameter_count() const;
};

namespace detail {

template <typename T>
class DownBlock : public nn::Module<T> {
 public:
  DownBlock(int cin, int cout, nn::Rng& rng);
  nn::Tensor<T> operator()(const nn::Tensor<T>& x);
  nn::Conv3d<T> conv1;
  nn::BatchNorm<T> bn1;
  nn::Conv3d<T> conv2;
  nn::BatchNorm<T> bn2;
};

template <typename T>
class UpBlock : public nn::Module<T> {
 public:
  UpBlock(int cin, int cskip, int fuse_kernel, nn::Rng& rng);
  nn::Tensor<T> operator()(const nn::Tensor<T>& x, const nn::Tensor<T>& skip);
  nn::ConvTranspose3d<T> up;
  nn::BatchNorm<T> bn_up;
  nn::Conv3d<T> fuse;
  nn::BatchNorm<T> bn_fuse;
};

}  // namespace detail

// Dense U-Net over the voxel grid's padded bounding box. Stem and stride-2
// stages form the encoder half; upsampling stages and the head the decoder.
template <typename T>
class Encoder3d : public nn::Module<T> {
 public:
  Encoder3d(EncoderConfig config, nn::Rng& rng);

  // Per-voxel features [M', C] in the grid's cell order.
  nn::Tensor<T> operator()(const VoxelGrid& grid);

  const EncoderConfig& config() const { return config_; }

  nn::Conv3d<T> stem;
  nn::BatchNorm<T> stem_bn;
  std::vector<std::unique_ptr<detail::DownBlock<T>>> down;
  std::vector<std::unique_ptr<detail::UpBlock<T>>> up;
  nn::Linear<T> head;

 private:
  EncoderConfig config_;
};

// Padded bounding box (per axis) that the encoder runs on.
std::array<int, 3> padded_extent(const VoxelGrid& grid, const EncoderConfig& config);

// Dense [X, Y, Z, in_channels] input volume; empty cells are zero.
template <typename T>
nn::Tensor<T> densify(const VoxelGrid& grid, const std::array<int, 3>& extent);

template <typename T>
nn::Tensor<T> encoder_forward(Encoder3d<T>& model, const VoxelGrid& grid);

// voxelize -> encoder -> knn_interpolate.
template <typename T>
FeatureVolume<T> encode_points(Encoder3d<T>& model, std::shared_ptr<const ColoredPointCloud> cloud,
                               double voxel_size = kDefaultVoxelSize, int k = kDefaultKnn);

extern template class Encoder3d<float>;
extern template class Encoder3d<double>;

}  // namespace mvnet
