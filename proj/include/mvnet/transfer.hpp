#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mvnet/cloud.hpp"
#include "mvnet/nn/layers.hpp"

namespace mvnet {

inline constexpr int kDefaultStartLayer = 3;

struct Vit2dConfig {
  int num_blocks = 12;
  int heads = 6;
  int hidden_dim = 96;
  int patch_size = 8;
  int in_channels = 3;
  int mlp_ratio = 2;

  void validate() const;
};

// Per-block token outputs B_1..B_N, each [tokens, hidden].
template <typename T>
struct BlockActivations {
  std::vector<nn::Tensor<T>> blocks;

  std::size_t size() const { return blocks.size(); }
  std::size_t tokens() const { return blocks.empty() ? 0 : blocks.front().dim(0); }
  std::size_t dim() const { return blocks.empty() ? 0 : blocks.front().dim(1); }
};

namespace detail {

template <typename T>
class VitBlock : public nn::Module<T> {
 public:
  VitBlock(int dim, int heads, int hidden, nn::Rng& rng);
  nn::Tensor<T> operator()(const nn::Tensor<T>& x);
  nn::LayerNorm<T> ln1;
  nn::MultiHeadAttention<T> attn;
  nn::LayerNorm<T> ln2;
  nn::Mlp<T> mlp;
};

}  // namespace detail

// Patch embedding + fixed sinusoidal positions + pre-norm transformer blocks.
// Patch tokens only.
template <typename T>
class Vit : public nn::Module<T> {
 public:
  Vit(Vit2dConfig config, nn::Rng& rng);

  // image [H, W, in_channels]; H and W must be multiples of the patch size.
  BlockActivations<T> operator()(const nn::Tensor<T>& image);

  const Vit2dConfig& config() const { return config_; }

  nn::Conv2d<T> patch_embed;
  std::vector<std::unique_ptr<detail::VitBlock<T>>> blocks;

 private:
  Vit2dConfig config_;
};

// [H, W, 3] color tensor of a frame.
template <typename T>
nn::Tensor<T> image_tensor(const RgbdFrame& frame);

// Frozen teacher: either a seeded random network evaluated on demand, or
// activations imported from archives listed in a manifest. Results are
// cached by frame_id.
class TeacherSource {
 public:
  enum class Mode { kSeeded, kImported };

  static TeacherSource seeded(const Vit2dConfig& config, std::uint64_t seed);
  // `expected` fixes (N, dim); token counts are checked against the frame.
  static TeacherSource imported(const std::string& manifest_path, const Vit2dConfig& expected);

  Mode mode() const { return mode_; }
  const Vit2dConfig& config() const { return config_; }
  Vit<float>* network() { return network_.get(); }

  const BlockActivations<float>& activations(const RgbdFrame& frame);
  void clear_cache() { cache_.clear(); }

 private:
  TeacherSource() = default;
  Mode mode_ = Mode::kSeeded;
  Vit2dConfig config_;
  std::shared_ptr<Vit<float>> network_;
  std::map<std::string, std::string> archive_paths_;
  std::map<std::string, BlockActivations<float>> cache_;
};

// Teacher forward pass with gradient recording disabled.
BlockActivations<float> teacher_forward(Vit<float>& teacher, const nn::Tensor<float>& image);

template <typename T>
BlockActivations<T> student_forward(Vit<T>& student, const FeatureMap<T>& fmap);

// sum_{j = start_layer}^{N} ||teacher_j - student_j||^2 (sum of squared
// entries); start_layer is 1-based.
template <typename T>
nn::Tensor<T> loss_2d(const BlockActivations<T>& student, const BlockActivations<T>& teacher,
                      int start_layer = kDefaultStartLayer);

enum class ViewReduction { kSum, kMean };

// Activation archive ("MVTA") and the JSON manifest mapping frame ids to
// archive files (paths relative to the manifest).
void write_activation_archive(const std::string& path, const BlockActivations<float>& acts);
BlockActivations<float> read_activation_archive(const std::string& path);
void write_activation_manifest(const std::string& path, const std::map<std::string, std::string>& archives);
std::map<std::string, std::string> read_activation_manifest(const std::string& path);

extern template class Vit<float>;
extern template class Vit<double>;

}  // namespace mvnet
