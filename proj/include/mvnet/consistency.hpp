#pragma once

#include <memory>
#include <vector>

#include <Eigen/Core>

#include "mvnet/cloud.hpp"
#include "mvnet/geometry.hpp"
#include "mvnet/nn/layers.hpp"

namespace mvnet {

// Canvas coordinates cover the side-by-side H x 2W image: view 1 occupies
// x in [0, 0.5), view 2 occupies [0.5, 1].
Eigen::Vector2d to_canvas(int view, const Eigen::Vector2d& x);
std::pair<int, Eigen::Vector2d> from_canvas(const Eigen::Vector2d& c);

struct DecoderConfig {
  int layers = 3;
  int heads = 4;
  int dim = 96;
  int query_freqs = 24;  // per axis; encoding width 4 * query_freqs
  int context_pool = 4;  // feature maps are average-pooled by this before tokenizing
  int mlp_ratio = 2;

  void validate() const;
};

// Pooled F1 | F2 tokens with sinusoidal canvas positions added, row-major
// over a rows x cols token grid (cols spans both views).
template <typename T>
struct ConcatContext {
  nn::Tensor<T> tokens;  // [rows * cols, C]
  int rows = 0;
  int cols = 0;
  int height = 0;  // per-view pixel resolution
  int width = 0;
};

template <typename T>
ConcatContext<T> make_context(const FeatureMap<T>& f1, const FeatureMap<T>& f2, const DecoderConfig& config);

// Anything that maps canvas queries [Q, 2] to canvas predictions [Q, 2].
template <typename T>
class CorrespondenceModel {
 public:
  virtual ~CorrespondenceModel() = default;
  virtual nn::Tensor<T> predict(const nn::Tensor<T>& queries, const ConcatContext<T>& ctx) = 0;
};

namespace detail {

template <typename T>
class DecoderLayer : public nn::Module<T> {
 public:
  DecoderLayer(int dim, int heads, int hidden, nn::Rng& rng);
  nn::Tensor<T> operator()(const nn::Tensor<T>& q, const nn::Tensor<T>& ctx);
  nn::LayerNorm<T> ln_q;
  nn::LayerNorm<T> ln_ctx;
  nn::MultiHeadAttention<T> cross;
  nn::LayerNorm<T> ln_mlp;
  nn::Mlp<T> mlp;
};

}  // namespace detail

// Cross-attention decoder: encoded queries attend to the context, then a
// linear layer and a logistic map produce canvas coordinates.
template <typename T>
class CorrespondenceDecoder : public nn::Module<T>, public CorrespondenceModel<T> {
 public:
  CorrespondenceDecoder(DecoderConfig config, nn::Rng& rng);

  nn::Tensor<T> predict(const nn::Tensor<T>& queries, const ConcatContext<T>& ctx) override;
  const DecoderConfig& config() const { return config_; }

  nn::Linear<T> context_proj;
  nn::Linear<T> query_proj;
  std::vector<std::unique_ptr<detail::DecoderLayer<T>>> layers;
  nn::LayerNorm<T> out_norm;
  nn::Linear<T> out;

 private:
  DecoderConfig config_;
};

// Validates the queries (each coordinate in [0, 1]) and runs the model.
template <typename T>
nn::Tensor<T> predict_correspondence(CorrespondenceModel<T>& model, const nn::Tensor<T>& queries,
                                     const ConcatContext<T>& ctx);

// Canvas query / target tensors for a correspondence set: x in view 1, x_gt
// in view 2.
template <typename T>
std::pair<nn::Tensor<T>, nn::Tensor<T>> canvas_pairs(const CorrespondenceSet& pairs);

// mean_i ||x_gt - x'||^2 + ||x - F(x')||^2 in canvas coordinates, with the
// cycle pass querying x' against the same context.
template <typename T>
nn::Tensor<T> loss_m(CorrespondenceModel<T>& model, const CorrespondenceSet& pairs, const ConcatContext<T>& ctx);

// Mean Euclidean error of the forward prediction in view-2 pixels.
template <typename T>
double eval_correspondence_error(CorrespondenceModel<T>& model, const CorrespondenceSet& pairs,
                                 const ConcatContext<T>& ctx);

extern template class CorrespondenceDecoder<float>;
extern template class CorrespondenceDecoder<double>;

}  // namespace mvnet
