#include "mvnet/pipeline/evaluate.hpp"

#include "mvnet/binary_io.hpp"
#include "mvnet/error.hpp"

namespace mvnet::pipeline {
namespace {

constexpr int kPairAttempts = 64;

// Eval mode plus no gradient recording for the guard's lifetime.
class EvalScope {
 public:
  explicit EvalScope(Models& m) : models_(m), was_training_(m.encoder->training()) { m.set_training(false); }
  ~EvalScope() { models_.set_training(was_training_); }

 private:
  Models& models_;
  bool was_training_;
  nn::NoGradGuard no_grad_;
};

}  // namespace

TrainConfig config_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("config")) fail(ErrorCode::kInvalidInput, "checkpoint carries no config");
  return config_from_json(ckpt.meta.at("config"));
}

std::unique_ptr<Models> models_from_checkpoint(const Checkpoint& ckpt) {
  auto models = std::make_unique<Models>(config_from_checkpoint(ckpt));
  load_module(ckpt, *models->encoder, "encoder");
  load_module(ckpt, *models->student, "student");
  load_module(ckpt, *models->decoder, "decoder");
  return models;
}

std::unique_ptr<Encoder3d<float>> encoder_from_checkpoint(const Checkpoint& ckpt, bool encoder_half_only) {
  const TrainConfig cfg = config_from_checkpoint(ckpt);
  nn::Rng rng(cfg.seed);
  auto encoder = std::make_unique<Encoder3d<float>>(cfg.encoder, rng);
  if (!encoder_half_only) {
    load_module(ckpt, *encoder, "encoder");
    return encoder;
  }
  const Checkpoint half = encoder_half(ckpt);
  for (const auto& np : encoder->named_parameters("encoder")) {
    if (np.param->tag != nn::HalfTag::kEncoder) continue;
    const TensorRecord* t = half.find(np.path);
    if (!t || t->data.size() != np.param->tensor.numel())
      fail(ErrorCode::kShapeMismatch, "checkpoint encoder half lacks " + np.path);
    std::copy(t->data.begin(), t->data.end(), np.param->tensor.data().begin());
  }
  for (const auto& nb : encoder->named_buffers("encoder")) {
    if (nb.tag != nn::HalfTag::kEncoder) continue;
    const TensorRecord* t = half.find(nb.path);
    if (!t || t->data.size() != nb.data->size()) fail(ErrorCode::kShapeMismatch, "checkpoint encoder half lacks " + nb.path);
    *nb.data = t->data;
  }
  return encoder;
}

CorrEvalResult evaluate_correspondence(Models& models, const Dataset& data, std::uint64_t seed, int pairs_per_scene) {
  const TrainConfig& cfg = models.config;
  const OverlapRange range{cfg.overlap_low, cfg.overlap_high};
  EvalScope scope(models);
  CorrEvalResult result;
  double sum = 0.0;
  for (std::size_t s = 0; s < data.scenes.size(); ++s) {
    const auto& frames = data.scenes[s].frames;
    if (frames.size() < 2) continue;
    const OverlapTable table(frames);
    auto rng = step_rng(seed, s);
    for (int p = 0; p < pairs_per_scene; ++p) {
      std::optional<FramePair> pair;
      for (int attempt = 0; attempt < kPairAttempts && !pair; ++attempt) {
        try {
          pair = sample_pair(table, range, cfg.candidate_views, rng);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kNoPair) throw;
        }
      }
      if (!pair) break;
      const RgbdFrame& f1 = frames[pair->first];
      const RgbdFrame& f2 = frames[pair->second];
      const auto corr = ground_truth_correspondences(f1, f2, cfg.correspondence_stride);
      if (corr.empty()) continue;
      auto cloud = std::make_shared<const ColoredPointCloud>(build_point_cloud(f1, f2));
      const auto volume = encode_points(*models.encoder, cloud, cfg.voxel_size, cfg.knn_k);
      const auto ctx = make_context(project_features(volume, f1), project_features(volume, f2), cfg.decoder);
      sum += eval_correspondence_error(*models.decoder, corr, ctx);
      ++result.pairs;
      result.queries += corr.size();
    }
  }
  if (result.pairs == 0) fail(ErrorCode::kNoPair, "no evaluation pair has overlap in range");
  result.mean_error_px = sum / double(result.pairs);
  return result;
}

nlohmann::json to_json(const CorrEvalResult& r) {
  return {{"mean_error_px", r.mean_error_px}, {"pairs", r.pairs}, {"queries", r.queries}};
}

void export_features(Encoder3d<float>& encoder, const Scene& scene, const TrainConfig& config,
                     const std::string& path) {
  std::vector<ViewInput> views;
  for (const auto& f : scene.frames) views.push_back({&f, nullptr});
  auto cloud = std::make_shared<const ColoredPointCloud>(build_point_cloud(views));
  const bool was_training = encoder.training();
  encoder.set_training(false);
  FeatureVolume<float> volume;
  {
    nn::NoGradGuard no_grad;
    volume = encode_points(encoder, cloud, config.voxel_size, config.knn_k);
  }
  encoder.set_training(was_training);

  io::Writer w;
  w.magic("MVFV");
  w.u32(kFeatureFileVersion);
  w.u32(static_cast<std::uint32_t>(cloud->size()));
  w.u32(static_cast<std::uint32_t>(volume.channels));
  for (std::size_t i = 0; i < cloud->size(); ++i) {
    for (int a = 0; a < 3; ++a) w.f32(static_cast<float>(cloud->positions[i][a]));
    for (int a = 0; a < 3; ++a) w.f32(cloud->colors[i][a]);
    w.u8(cloud->labels.empty() ? 255 : cloud->labels[i]);
  }
  w.f32s(volume.features.data());
  w.save(path);
}

}  // namespace mvnet::pipeline
