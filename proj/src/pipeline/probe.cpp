#include "mvnet/pipeline/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <Eigen/Dense>

#include "mvnet/error.hpp"

namespace mvnet::pipeline {
namespace {

Eigen::MatrixXd with_bias(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd out(z.rows(), z.cols() + 1);
  out.leftCols(z.cols()) = z;
  out.col(z.cols()).setOnes();
  return out;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    p.row(i).array() -= p.row(i).maxCoeff();
    p.row(i) = p.row(i).array().exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double accuracy(const Eigen::MatrixXd& p, const std::vector<int>& y) {
  if (y.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    Eigen::Index arg = 0;
    p.row(Eigen::Index(i)).maxCoeff(&arg);
    hits += arg == y[i];
  }
  return double(hits) / double(y.size());
}

void partial_shuffle(std::vector<std::size_t>& idx, std::size_t count, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < count && i + 1 < idx.size(); ++i)
    std::swap(idx[i], idx[std::uniform_int_distribution<std::size_t>(i, idx.size() - 1)(rng)]);
}

}  // namespace

ProbeResult fit_linear_probe(const Eigen::MatrixXd& train_x, const std::vector<int>& train_y,
                             const Eigen::MatrixXd& test_x, const std::vector<int>& test_y,
                             const ProbeOptions& options) {
  if (std::size_t(train_x.rows()) != train_y.size() || std::size_t(test_x.rows()) != test_y.size() ||
      train_x.cols() != test_x.cols())
    fail(ErrorCode::kShapeMismatch, "probe features and labels disagree in size");
  const std::set<int> classes(train_y.begin(), train_y.end());
  if (classes.size() < 2)
    fail(ErrorCode::kDegenerateProbe, "probe training labels contain " + std::to_string(classes.size()) + " class(es)");
  int k = 0;
  for (int y : train_y) k = std::max(k, y + 1);
  for (int y : test_y) k = std::max(k, y + 1);
  if (*classes.begin() < 0) fail(ErrorCode::kInvalidInput, "probe labels must be non-negative");

  const Eigen::Index d = train_x.cols();
  const Eigen::RowVectorXd mu = train_x.colwise().mean();
  Eigen::RowVectorXd inv_sd(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double var = (train_x.col(j).array() - mu(j)).square().mean();
    inv_sd(j) = var > 1e-24 ? 1.0 / std::sqrt(var) : 0.0;
  }
  auto standardize = [&](const Eigen::MatrixXd& x) {
    return with_bias(((x.rowwise() - mu).array().rowwise() * inv_sd.array()).matrix());
  };
  const Eigen::MatrixXd ztr = standardize(train_x);
  const Eigen::MatrixXd zte = standardize(test_x);

  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(ztr.rows(), k);
  for (std::size_t i = 0; i < train_y.size(); ++i) y(Eigen::Index(i), train_y[i]) = 1.0;

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(ztr.cols(), k);
  const double n = double(ztr.rows());
  for (int it = 0; it < options.iterations; ++it) {
    const Eigen::MatrixXd p = softmax_rows(ztr * w);
    Eigen::MatrixXd g = ztr.transpose() * (p - y) / n;
    g.topRows(d) += options.l2 * w.topRows(d);
    w -= options.learning_rate * g;
  }

  ProbeResult r;
  r.classes = int(classes.size());
  r.train_points = train_y.size();
  r.test_points = test_y.size();
  r.train_accuracy = accuracy(softmax_rows(ztr * w), train_y);
  const Eigen::MatrixXd pte = softmax_rows(zte * w);
  r.test_accuracy = accuracy(pte, test_y);
  double loss = 0.0;
  for (std::size_t i = 0; i < test_y.size(); ++i) loss -= std::log(std::max(pte(Eigen::Index(i), test_y[i]), 1e-12));
  r.test_loss = test_y.empty() ? 0.0 : loss / double(test_y.size());
  return r;
}

PointFeatures scene_features(Encoder3d<float>& encoder, const Scene& scene, const TrainConfig& config,
                             std::size_t max_points, std::uint64_t seed) {
  if (!scene.labeled()) fail(ErrorCode::kInvalidInput, "scene " + scene.name + " carries no labels");
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

  std::vector<std::size_t> idx(cloud->size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (idx.size() > max_points) {
    std::mt19937_64 rng(seed);
    partial_shuffle(idx, max_points, rng);
    idx.resize(max_points);
    std::sort(idx.begin(), idx.end());
  }
  const std::size_t c = volume.channels;
  PointFeatures out;
  out.features.resize(Eigen::Index(idx.size()), Eigen::Index(c));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    for (std::size_t j = 0; j < c; ++j) out.features(Eigen::Index(r), Eigen::Index(j)) = volume.features[idx[r] * c + j];
    out.labels.push_back(cloud->labels[idx[r]]);
  }
  return out;
}

ProbeResult linear_probe(Encoder3d<float>& encoder, const Dataset& labeled, const TrainConfig& config,
                         const ProbeOptions& options) {
  const std::size_t n = labeled.scenes.size();
  if (n < 2) fail(ErrorCode::kInvalidInput, "the probe needs at least 2 labeled scenes");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(options.seed);
  partial_shuffle(order, n, rng);
  const auto n_train = std::clamp<std::size_t>(std::size_t(std::lround(options.train_fraction * double(n))), 1, n - 1);

  auto gather = [&](std::size_t from, std::size_t to, Eigen::MatrixXd& x, std::vector<int>& y) {
    std::vector<PointFeatures> parts;
    Eigen::Index rows = 0;
    for (std::size_t i = from; i < to; ++i) {
      const std::size_t s = order[i];
      parts.push_back(scene_features(encoder, labeled.scenes[s], config, options.max_points_per_scene,
                                     options.seed * 1000003ull + s));
      rows += parts.back().features.rows();
    }
    x.resize(rows, parts.front().features.cols());
    Eigen::Index at = 0;
    for (auto& p : parts) {
      x.middleRows(at, p.features.rows()) = p.features;
      at += p.features.rows();
      y.insert(y.end(), p.labels.begin(), p.labels.end());
    }
  };
  Eigen::MatrixXd xtr, xte;
  std::vector<int> ytr, yte;
  gather(0, n_train, xtr, ytr);
  gather(n_train, n, xte, yte);
  return fit_linear_probe(xtr, ytr, xte, yte, options);
}

}  // namespace mvnet::pipeline
