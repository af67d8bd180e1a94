#include "mvnet/consistency.hpp"

#include <cmath>

#include "mvnet/error.hpp"
#include "mvnet/nn/ops.hpp"

namespace mvnet {

using nn::Tensor;

Eigen::Vector2d to_canvas(int view, const Eigen::Vector2d& x) {
  if (view != 1 && view != 2) fail(ErrorCode::kInvalidInput, "canvas view must be 1 or 2");
  return {0.5 * (view - 1) + 0.5 * x.x(), x.y()};
}

std::pair<int, Eigen::Vector2d> from_canvas(const Eigen::Vector2d& c) {
  if (c.x() < 0.5) return {1, {2.0 * c.x(), c.y()}};
  return {2, {2.0 * (c.x() - 0.5), c.y()}};
}

void DecoderConfig::validate() const {
  if (layers < 1 || heads < 1 || dim < 1 || query_freqs < 2 || context_pool < 1 || mlp_ratio < 1)
    fail(ErrorCode::kInvalidInput, "decoder config entries must be positive");
  if (dim % heads != 0) fail(ErrorCode::kInvalidInput, "decoder dim must be divisible by heads");
  if (dim % 4 != 0) fail(ErrorCode::kInvalidInput, "decoder dim must be divisible by 4");
}

namespace {
// Positions of the context tokens use the same encoding as queries.
constexpr double kPositionScale = 32.0;
}  // namespace

template <typename T>
ConcatContext<T> make_context(const FeatureMap<T>& f1, const FeatureMap<T>& f2, const DecoderConfig& config) {
  config.validate();
  if (f1.data.shape() != f2.data.shape())
    fail(ErrorCode::kShapeMismatch, "context: feature maps " + nn::to_string(f1.data.shape()) + " and " +
                                        nn::to_string(f2.data.shape()) + " differ");
  if (f1.data.rank() != 3 || f1.data.dim(2) != std::size_t(config.dim))
    fail(ErrorCode::kInvalidInput, "context: feature maps must have " + std::to_string(config.dim) + " channels");
  const int p = config.context_pool;
  if (f1.data.dim(0) % std::size_t(p) != 0 || f1.data.dim(1) % std::size_t(p) != 0)
    fail(ErrorCode::kInvalidGeometry, "context: pool " + std::to_string(p) + " does not divide the feature map");

  ConcatContext<T> ctx;
  ctx.height = int(f1.data.dim(0));
  ctx.width = int(f1.data.dim(1));
  ctx.rows = ctx.height / p;
  ctx.cols = 2 * (ctx.width / p);
  const auto c = std::size_t(config.dim);
  const Tensor<T> left = p > 1 ? nn::avg_pool2d(f1.data, p) : f1.data;
  const Tensor<T> right = p > 1 ? nn::avg_pool2d(f2.data, p) : f2.data;
  const Tensor<T> canvas = nn::concat<T>({left, right}, 1);
  const std::size_t n = std::size_t(ctx.rows) * std::size_t(ctx.cols);

  Tensor<T> coords({n, 2});
  for (int r = 0; r < ctx.rows; ++r)
    for (int q = 0; q < ctx.cols; ++q) {
      const std::size_t i = std::size_t(r) * ctx.cols + q;
      // Pixel-center convention: a pooled token centered on pixels
      // [q*p, (q+1)*p) sits at ((q + 0.5) * p - 0.5) / W in its view.
      const int view_w = ctx.cols / 2;
      const double in_view = ((q % view_w + 0.5) * p - 0.5) / ctx.width;
      coords[i * 2] = T(0.5 * (q / view_w) + 0.5 * in_view);
      coords[i * 2 + 1] = T(((r + 0.5) * p - 0.5) / ctx.height);
    }
  const Tensor<T> pos = nn::sinusoidal_encode(coords, config.dim / 4, T(kPositionScale));
  ctx.tokens = nn::add(nn::reshape(canvas, {n, c}), pos);
  return ctx;
}

namespace detail {

template <typename T>
DecoderLayer<T>::DecoderLayer(int dim, int heads, int hidden, nn::Rng& rng)
    : ln_q(dim), ln_ctx(dim), cross(dim, heads, rng), ln_mlp(dim), mlp(dim, hidden, rng) {
  this->add_child(ln_q, "ln_q");
  this->add_child(ln_ctx, "ln_ctx");
  this->add_child(cross, "cross");
  this->add_child(ln_mlp, "ln_mlp");
  this->add_child(mlp, "mlp");
}

template <typename T>
Tensor<T> DecoderLayer<T>::operator()(const Tensor<T>& q, const Tensor<T>& ctx) {
  const Tensor<T> h = nn::add(q, cross(ln_q(q), ln_ctx(ctx)));
  return nn::add(h, mlp(ln_mlp(h)));
}

template class DecoderLayer<float>;
template class DecoderLayer<double>;

}  // namespace detail

template <typename T>
CorrespondenceDecoder<T>::CorrespondenceDecoder(DecoderConfig config, nn::Rng& rng)
    : context_proj((config.validate(), config.dim), config.dim, rng),
      query_proj(4 * config.query_freqs, config.dim, rng),
      out_norm(config.dim),
      out(config.dim, 2, rng),
      config_(config) {
  this->add_child(context_proj, "context_proj");
  this->add_child(query_proj, "query_proj");
  for (int l = 0; l < config_.layers; ++l) {
    layers.push_back(
        std::make_unique<detail::DecoderLayer<T>>(config_.dim, config_.heads, config_.dim * config_.mlp_ratio, rng));
    this->add_child(*layers.back(), "layer" + std::to_string(l));
  }
  this->add_child(out_norm, "out_norm");
  this->add_child(out, "out");
  this->set_tag(nn::HalfTag::kAuxiliary);
}

template <typename T>
Tensor<T> CorrespondenceDecoder<T>::predict(const Tensor<T>& queries, const ConcatContext<T>& ctx) {
  if (queries.rank() != 2 || queries.dim(1) != 2)
    fail(ErrorCode::kDimension, "decoder: queries must be [Q, 2], got " + nn::to_string(queries.shape()));
  if (ctx.tokens.rank() != 2 || ctx.tokens.dim(1) != std::size_t(config_.dim))
    fail(ErrorCode::kInvalidInput, "decoder: context width does not match the decoder dim");
  const Tensor<T> kv = context_proj(ctx.tokens);
  Tensor<T> q = query_proj(nn::sinusoidal_encode(queries, config_.query_freqs, T(kPositionScale)));
  for (auto& layer : layers) q = (*layer)(q, kv);
  return nn::sigmoid(out(out_norm(q)));
}

template <typename T>
Tensor<T> predict_correspondence(CorrespondenceModel<T>& model, const Tensor<T>& queries, const ConcatContext<T>& ctx) {
  for (T v : queries.data())
    if (!(v >= T(0) && v <= T(1))) fail(ErrorCode::kInvalidQuery, "query coordinate outside [0, 1]");
  return model.predict(queries, ctx);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> canvas_pairs(const CorrespondenceSet& pairs) {
  const std::size_t n = pairs.size();
  Tensor<T> x({n, 2}), gt({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector2d a = to_canvas(1, pairs.pairs[i].x), b = to_canvas(2, pairs.pairs[i].x_gt);
    x[2 * i] = T(a.x());
    x[2 * i + 1] = T(a.y());
    gt[2 * i] = T(b.x());
    gt[2 * i + 1] = T(b.y());
  }
  return {x, gt};
}

template <typename T>
Tensor<T> loss_m(CorrespondenceModel<T>& model, const CorrespondenceSet& pairs, const ConcatContext<T>& ctx) {
  if (pairs.empty()) fail(ErrorCode::kUndefinedLoss, "loss_m: empty correspondence set");
  const auto [x, gt] = canvas_pairs<T>(pairs);
  const Tensor<T> pred = predict_correspondence(model, x, ctx);
  const Tensor<T> cycle = model.predict(pred, ctx);
  const T inv = T(1) / T(pairs.size());
  return nn::scale(nn::add(nn::squared_distance(pred, gt), nn::squared_distance(cycle, x)), inv);
}

template <typename T>
double eval_correspondence_error(CorrespondenceModel<T>& model, const CorrespondenceSet& pairs,
                                 const ConcatContext<T>& ctx) {
  if (pairs.empty()) fail(ErrorCode::kUndefinedLoss, "eval_correspondence_error: empty correspondence set");
  nn::NoGradGuard guard;
  const auto [x, gt] = canvas_pairs<T>(pairs);
  const Tensor<T> pred = predict_correspondence(model, x, ctx);
  const double w = pairs.width > 0 ? pairs.width : ctx.width;
  const double h = pairs.height > 0 ? pairs.height : ctx.height;
  double total = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double dx = (double(pred[2 * i]) - double(gt[2 * i])) * 2.0 * w;
    const double dy = (double(pred[2 * i + 1]) - double(gt[2 * i + 1])) * h;
    total += std::hypot(dx, dy);
  }
  return total / double(pairs.size());
}

template ConcatContext<float> make_context(const FeatureMap<float>&, const FeatureMap<float>&, const DecoderConfig&);
template ConcatContext<double> make_context(const FeatureMap<double>&, const FeatureMap<double>&,
                                            const DecoderConfig&);
template class CorrespondenceDecoder<float>;
template class CorrespondenceDecoder<double>;
template Tensor<float> predict_correspondence(CorrespondenceModel<float>&, const Tensor<float>&,
                                              const ConcatContext<float>&);
template Tensor<double> predict_correspondence(CorrespondenceModel<double>&, const Tensor<double>&,
                                               const ConcatContext<double>&);
template std::pair<Tensor<float>, Tensor<float>> canvas_pairs(const CorrespondenceSet&);
template std::pair<Tensor<double>, Tensor<double>> canvas_pairs(const CorrespondenceSet&);
template Tensor<float> loss_m(CorrespondenceModel<float>&, const CorrespondenceSet&, const ConcatContext<float>&);
template Tensor<double> loss_m(CorrespondenceModel<double>&, const CorrespondenceSet&, const ConcatContext<double>&);
template double eval_correspondence_error(CorrespondenceModel<float>&, const CorrespondenceSet&,
                                          const ConcatContext<float>&);
template double eval_correspondence_error(CorrespondenceModel<double>&, const CorrespondenceSet&,
                                          const ConcatContext<double>&);

}  // namespace mvnet
