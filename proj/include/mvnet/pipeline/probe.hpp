#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "mvnet/encoder3d.hpp"
#include "mvnet/pipeline/config.hpp"
#include "mvnet/pipeline/dataset.hpp"

namespace mvnet::pipeline {

struct ProbeOptions {
  std::uint64_t seed = 0;
  // Scenes are shuffled by `seed`; this fraction (at least one scene each
  // side) is used for fitting, the rest is held out.
  double train_fraction = 0.5;
  std::size_t max_points_per_scene = 1024;
  int iterations = 400;
  double learning_rate = 0.5;
  double l2 = 1e-4;
};

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double test_loss = 0.0;  // mean cross-entropy on held-out points
  int classes = 0;
  std::size_t train_points = 0;
  std::size_t test_points = 0;
};

// Softmax regression on standardized features by full-batch gradient
// descent. Fewer than two classes in the training labels raises
// ErrorCode::kDegenerateProbe.
ProbeResult fit_linear_probe(const Eigen::MatrixXd& train_x, const std::vector<int>& train_y,
                             const Eigen::MatrixXd& test_x, const std::vector<int>& test_y,
                             const ProbeOptions& options);

struct PointFeatures {
  Eigen::MatrixXd features;  // [points, C]
  std::vector<int> labels;
};

// Frozen-encoder features of every labeled point of a scene (all frames
// fused), subsampled to max_points with the given seed. The encoder runs in
// eval mode without gradient recording; its parameters are not modified.
PointFeatures scene_features(Encoder3d<float>& encoder, const Scene& scene, const TrainConfig& config,
                             std::size_t max_points, std::uint64_t seed);

ProbeResult linear_probe(Encoder3d<float>& encoder, const Dataset& labeled, const TrainConfig& config,
                         const ProbeOptions& options);

}  // namespace mvnet::pipeline
