#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "mvnet/consistency.hpp"
#include "mvnet/encoder3d.hpp"
#include "mvnet/nn/optim.hpp"
#include "mvnet/pipeline/config.hpp"
#include "mvnet/pipeline/dataset.hpp"
#include "mvnet/pipeline/sampler.hpp"
#include "mvnet/transfer.hpp"

namespace mvnet::pipeline {

// Everything pre-training touches. Parameters are initialized from
// config.seed in the order encoder, student, decoder; the teacher comes from
// config.teacher_seed and is frozen.
struct Models {
  explicit Models(const TrainConfig& config);

  TrainConfig config;
  std::unique_ptr<Encoder3d<float>> encoder;
  std::unique_ptr<Vit<float>> student;
  std::unique_ptr<CorrespondenceDecoder<float>> decoder;
  TeacherSource teacher;

  // "encoder.*", "student.*", "decoder.*".
  std::vector<nn::NamedParameter<float>> named_parameters();
  std::vector<nn::NamedBuffer<float>> named_buffers();
  std::vector<nn::Parameter<float>*> trainable();
  void set_training(bool on);
};

// The RNG of step `step` under `seed`; independent of any earlier draws.
std::mt19937_64 step_rng(std::uint64_t seed, std::uint64_t step);

// Inputs of one pair, fixed before any model runs.
struct PreparedPair {
  const RgbdFrame* first = nullptr;
  const RgbdFrame* second = nullptr;
  double overlap = 0.0;
  PatchMask mask1;
  PatchMask mask2;
  CorrespondenceSet correspondences;  // sampled subset
};

struct LossReport {
  double l2d = 0.0;
  double lm = 0.0;
  double total = 0.0;  // l2d + lambda * lm, composed in double
  double graph_total = 0.0;  // the float value that was differentiated
  std::size_t pairs = 0;
};

// Forward pass of one pair; returns (L_2d, L_m) as graph tensors.
std::pair<nn::Tensor<float>, nn::Tensor<float>> pair_losses(Models& models, const PreparedPair& pair);

// Batch mean of L_2d + lambda * L_m, then one AdamW step over the trainable
// parameters (teacher frozen).
LossReport train_step(Models& models, std::span<const PreparedPair> batch, nn::AdamW<float>& optimizer);

// Samples pairs, masks and correspondences for a training step. Depends only
// on (config.seed, step) and the dataset, so it may run on another thread.
class BatchSampler {
 public:
  BatchSampler(const TrainConfig& config, const Dataset& data);
  std::vector<PreparedPair> batch(std::uint64_t step) const;
  PreparedPair prepare(std::size_t scene, std::size_t first, std::size_t second, std::mt19937_64& rng) const;
  const OverlapTable& overlaps(std::size_t scene) const { return tables_[scene]; }

 private:
  TrainConfig config_;
  const Dataset& data_;
  std::vector<OverlapTable> tables_;
  std::vector<std::size_t> usable_scenes_;
};

struct Checkpoint;

class Trainer {
 public:
  Trainer(const TrainConfig& config, const Dataset& data);

  // Runs the next step (0-based numbering continues across calls).
  LossReport step();
  // Runs `steps` more steps. Outside deterministic mode a producer thread
  // prepares batches ahead through a bounded queue.
  std::vector<LossReport> run(std::size_t steps, const std::function<void(std::size_t, const LossReport&)>& on_step = {});

  std::uint64_t steps_done() const { return step_; }
  Models& models() { return models_; }
  nn::AdamW<float>& optimizer() { return optimizer_; }
  const TrainConfig& config() const { return config_; }

  Checkpoint checkpoint();
  void restore(const Checkpoint& ckpt);

 private:
  TrainConfig config_;
  const Dataset& data_;
  BatchSampler sampler_;
  Models models_;
  nn::AdamW<float> optimizer_;
  std::uint64_t step_ = 0;
};

}  // namespace mvnet::pipeline
