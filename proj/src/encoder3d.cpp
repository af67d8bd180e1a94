#include "mvnet/encoder3d.hpp"

#include <sstream>

#include "mvnet/error.hpp"
#include "mvnet/nn/ops.hpp"

namespace mvnet {

using nn::Tensor;

void EncoderConfig::validate() const {
  if (channels_per_stage.empty()) fail(ErrorCode::kInvalidInput, "encoder needs at least one stage");
  for (int c : channels_per_stage)
    if (c < 1) fail(ErrorCode::kInvalidInput, "encoder stage width must be positive");
  if (out_channels < 1 || in_channels < 1) fail(ErrorCode::kInvalidInput, "encoder channel counts must be positive");
  if (max_extent < alignment() || max_extent % alignment() != 0)
    fail(ErrorCode::kInvalidInput, "encoder max_extent must be a positive multiple of the stage alignment");
}

std::size_t EncoderConfig::parameter_count() const {
  const auto& ch = channels_per_stage;
  const std::size_t n = ch.size();
  auto conv = [](std::size_t k, std::size_t a, std::size_t b) { return k * k * k * a * b; };
  auto bn = [](std::size_t c) { return 2 * c; };
  std::size_t total = conv(3, in_channels, ch[0]) + bn(ch[0]);
  std::size_t prev = ch[0];
  for (std::size_t s = 0; s < n; ++s) {
    total += conv(3, prev, ch[s]) + bn(ch[s]) + conv(3, ch[s], ch[s]) + bn(ch[s]);
    prev = ch[s];
  }
  // Upsampling stage u restores the resolution of stage n-2-u (the stem for
  // the last one), whose width equals ch[max(n-2-u, 0)].
  for (std::size_t u = 0; u < n; ++u) {
    const std::size_t skip = u + 1 < n ? ch[n - 2 - u] : ch[0];
    const std::size_t k = u + 1 < n ? 3 : 1;
    total += 8 * prev * skip + bn(skip) + conv(k, 2 * skip, skip) + bn(skip);
    prev = skip;
  }
  return total + prev * out_channels + out_channels;
}

namespace detail {

template <typename T>
DownBlock<T>::DownBlock(int cin, int cout, nn::Rng& rng)
    : conv1(cin, cout, 3, 2, 1, rng), bn1(cout), conv2(cout, cout, 3, 1, 1, rng), bn2(cout) {
  this->add_child(conv1, "conv1");
  this->add_child(bn1, "bn1");
  this->add_child(conv2, "conv2");
  this->add_child(bn2, "bn2");
}

template <typename T>
Tensor<T> DownBlock<T>::operator()(const Tensor<T>& x) {
  const Tensor<T> a = nn::relu(bn1(conv1(x)));
  return nn::relu(nn::add(a, bn2(conv2(a))));
}

template <typename T>
UpBlock<T>::UpBlock(int cin, int cskip, int fuse_kernel, nn::Rng& rng)
    : up(cin, cskip, rng), bn_up(cskip), fuse(2 * cskip, cskip, fuse_kernel, 1, fuse_kernel / 2, rng), bn_fuse(cskip) {
  this->add_child(up, "up");
  this->add_child(bn_up, "bn_up");
  this->add_child(fuse, "fuse");
  this->add_child(bn_fuse, "bn_fuse");
}

template <typename T>
Tensor<T> UpBlock<T>::operator()(const Tensor<T>& x, const Tensor<T>& skip) {
  const Tensor<T> u = nn::relu(bn_up(up(x)));
  return nn::relu(bn_fuse(fuse(nn::concat<T>({u, skip}, 3))));
}

template class DownBlock<float>;
template class DownBlock<double>;
template class UpBlock<float>;
template class UpBlock<double>;

}  // namespace detail

template <typename T>
Encoder3d<T>::Encoder3d(EncoderConfig config, nn::Rng& rng)
    : stem((config.validate(), config.in_channels), config.channels_per_stage[0], 3, 1, 1, rng),
      stem_bn(config.channels_per_stage[0]),
      head(config.channels_per_stage[0], config.out_channels, rng),
      config_(std::move(config)) {
  const auto& ch = config_.channels_per_stage;
  const int n = config_.num_stages();
  this->add_child(stem, "stem");
  this->add_child(stem_bn, "stem_bn");
  int prev = ch[0];
  for (int s = 0; s < n; ++s) {
    down.push_back(std::make_unique<detail::DownBlock<T>>(prev, ch[s], rng));
    this->add_child(*down.back(), "down" + std::to_string(s));
    prev = ch[s];
  }
  for (int u = 0; u < n; ++u) {
    const bool last = u + 1 == n;
    const int skip = last ? ch[0] : ch[n - 2 - u];
    up.push_back(std::make_unique<detail::UpBlock<T>>(prev, skip, last ? 1 : 3, rng));
    this->add_child(*up.back(), "up" + std::to_string(u));
    prev = skip;
  }
  this->add_child(head, "head");

  stem.set_tag(nn::HalfTag::kEncoder);
  stem_bn.set_tag(nn::HalfTag::kEncoder);
  for (auto& d : down) d->set_tag(nn::HalfTag::kEncoder);
  for (auto& u : up) u->set_tag(nn::HalfTag::kDecoder);
  head.set_tag(nn::HalfTag::kDecoder);
}

std::array<int, 3> padded_extent(const VoxelGrid& grid, const EncoderConfig& config) {
  if (grid.size() == 0) fail(ErrorCode::kEmptyCloud, "encoder: empty voxel grid");
  const auto e = grid.extent();
  const int a = config.alignment();
  std::array<int, 3> out{};
  for (int i = 0; i < 3; ++i) out[i] = (e[i] + a - 1) / a * a;
  if (out[0] > config.max_extent || out[1] > config.max_extent || out[2] > config.max_extent) {
    std::ostringstream os;
    os << "voxel bounding box " << e[0] << "x" << e[1] << "x" << e[2] << " (padded " << out[0] << "x" << out[1]
       << "x" << out[2] << ") exceeds the " << config.max_extent << "^3 limit";
    fail(ErrorCode::kGridTooLarge, os.str());
  }
  return out;
}

namespace {

std::size_t flat_cell(const VoxelIndex& v, const std::array<int, 3>& e) {
  return (std::size_t(v.x) * std::size_t(e[1]) + std::size_t(v.y)) * std::size_t(e[2]) + std::size_t(v.z);
}

}  // namespace

template <typename T>
Tensor<T> densify(const VoxelGrid& grid, const std::array<int, 3>& e) {
  constexpr std::size_t kC = 6;
  Tensor<T> x({std::size_t(e[0]), std::size_t(e[1]), std::size_t(e[2]), kC});
  auto d = x.data();
  for (const auto& cell : grid.cells) {
    if (cell.index.x < 0 || cell.index.y < 0 || cell.index.z < 0 || cell.index.x >= e[0] || cell.index.y >= e[1] ||
        cell.index.z >= e[2])
      fail(ErrorCode::kInvalidInput, "densify: cell outside the padded box");
    const std::size_t base = flat_cell(cell.index, e) * kC;
    for (int a = 0; a < 3; ++a) d[base + a] = static_cast<T>(cell.mean_feature[a] - grid.origin[a]);
    for (int a = 3; a < 6; ++a) d[base + a] = static_cast<T>(cell.mean_feature[a]);
  }
  return x;
}

template <typename T>
Tensor<T> Encoder3d<T>::operator()(const VoxelGrid& grid) {
  if (config_.in_channels != 6) fail(ErrorCode::kInvalidInput, "encoder: voxel input has 6 channels");
  const auto e = padded_extent(grid, config_);
  const Tensor<T> x = densify<T>(grid, e);

  std::vector<Tensor<T>> skips;
  Tensor<T> h = nn::relu(stem_bn(stem(x)));
  skips.push_back(h);
  for (auto& d : down) {
    h = (*d)(h);
    skips.push_back(h);
  }
  const int n = config_.num_stages();
  for (int u = 0; u < n; ++u) {
    Tensor<T> skip = skips[std::size_t(n - 1 - u)];
    if (!config_.skip_connections) skip = Tensor<T>(skip.shape());
    h = (*up[std::size_t(u)])(h, skip);
  }

  std::vector<std::int64_t> rows(grid.size());
  for (std::size_t c = 0; c < grid.size(); ++c) rows[c] = std::int64_t(flat_cell(grid.cells[c].index, e));
  const Tensor<T> flat = nn::reshape(h, {h.numel() / h.dim(3), h.dim(3)});
  const Tensor<T> occupied = nn::gather_rows(flat, rows, std::vector<T>(rows.size(), T(1)), 1);
  return head(occupied);
}

template <typename T>
Tensor<T> encoder_forward(Encoder3d<T>& model, const VoxelGrid& grid) {
  return model(grid);
}

template <typename T>
FeatureVolume<T> encode_points(Encoder3d<T>& model, std::shared_ptr<const ColoredPointCloud> cloud, double voxel_size,
                               int k) {
  if (!cloud) fail(ErrorCode::kInvalidInput, "encode_points: null cloud");
  const VoxelGrid grid = voxelize(*cloud, voxel_size);
  return knn_interpolate(model(grid), grid, std::move(cloud), k);
}

template class Encoder3d<float>;
template class Encoder3d<double>;
template Tensor<float> densify(const VoxelGrid&, const std::array<int, 3>&);
template Tensor<double> densify(const VoxelGrid&, const std::array<int, 3>&);
template Tensor<float> encoder_forward(Encoder3d<float>&, const VoxelGrid&);
template Tensor<double> encoder_forward(Encoder3d<double>&, const VoxelGrid&);
template FeatureVolume<float> encode_points(Encoder3d<float>&, std::shared_ptr<const ColoredPointCloud>, double, int);
template FeatureVolume<double> encode_points(Encoder3d<double>&, std::shared_ptr<const ColoredPointCloud>, double, int);

}  // namespace mvnet
