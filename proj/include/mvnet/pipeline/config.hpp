#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "mvnet/cloud.hpp"
#include "mvnet/consistency.hpp"
#include "mvnet/encoder3d.hpp"
#include "mvnet/transfer.hpp"

namespace mvnet::pipeline {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int batch_size = 1;  // pairs per step
  int epochs = 1;      // an epoch is one step per training frame, rounded up per batch
  int max_steps = 0;   // > 0 caps the run
  double lambda = 0.5;
  double mask_ratio = 0.30;
  int mask_patch = 4;
  double overlap_low = 0.4;
  double overlap_high = 0.8;
  int candidate_views = 5;
  int start_layer = kDefaultStartLayer;
  double voxel_size = kDefaultVoxelSize;
  int channels = 96;  // C; also the student / teacher width
  int knn_k = kDefaultKnn;
  int queries = 64;  // correspondences sampled per pair
  int correspondence_stride = 2;
  ViewReduction view_reduction = ViewReduction::kSum;
  std::uint64_t seed = 0;
  std::uint64_t teacher_seed = 17;

  EncoderConfig encoder;
  Vit2dConfig vit;
  DecoderConfig decoder;

  // Copies `channels` into the sub-configs that depend on it.
  void sync();
  void validate() const;
  std::size_t steps_for(std::size_t training_frames) const;
};

nlohmann::json to_json(const TrainConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig load_config(const std::string& path);

}  // namespace mvnet::pipeline
