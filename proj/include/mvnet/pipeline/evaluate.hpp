#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "mvnet/pipeline/checkpoint.hpp"
#include "mvnet/pipeline/trainer.hpp"

namespace mvnet::pipeline {

// Builds models from the checkpoint's config and loads every model tensor.
std::unique_ptr<Models> models_from_checkpoint(const Checkpoint& ckpt);
TrainConfig config_from_checkpoint(const Checkpoint& ckpt);
// The 3D network of a checkpoint. With `encoder_half_only`, tensors tagged
// decoder keep their seeded initialization.
std::unique_ptr<Encoder3d<float>> encoder_from_checkpoint(const Checkpoint& ckpt, bool encoder_half_only = false);

struct CorrEvalResult {
  double mean_error_px = 0.0;  // mean over pairs of the per-pair mean error
  std::size_t pairs = 0;
  std::size_t queries = 0;
};

// Unmasked pairs drawn like training pairs (overlap range, candidates) with
// the RNG of `seed`; `pairs_per_scene` per scene with at least 2 frames. The
// models run in eval mode without gradient recording.
CorrEvalResult evaluate_correspondence(Models& models, const Dataset& data, std::uint64_t seed,
                                       int pairs_per_scene = 4);

nlohmann::json to_json(const CorrEvalResult& r);

// Per-point features of one scene (all frames fused, unmasked), written as
// "MVFV": u32 version, u32 points, u32 channels, then per point f32 xyz,
// f32 rgb, u8 label (255 when unlabeled), then f32 features row-major.
void export_features(Encoder3d<float>& encoder, const Scene& scene, const TrainConfig& config,
                     const std::string& path);

inline constexpr std::uint32_t kFeatureFileVersion = 1;

}  // namespace mvnet::pipeline
