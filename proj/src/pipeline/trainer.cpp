#include "mvnet/pipeline/trainer.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>

#include "mvnet/error.hpp"
#include "mvnet/parallel.hpp"
#include "mvnet/pipeline/checkpoint.hpp"

namespace mvnet::pipeline {
namespace {

constexpr int kPairAttempts = 64;

Vit2dConfig student_config(const TrainConfig& c) {
  Vit2dConfig v = c.vit;
  v.in_channels = c.channels;
  return v;
}

Vit2dConfig teacher_config(const TrainConfig& c) {
  Vit2dConfig v = c.vit;
  v.in_channels = 3;
  return v;
}

const TrainConfig& checked(const TrainConfig& c) {
  c.validate();
  return c;
}

// Single-producer bounded queue; close() wakes both sides.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  bool push(T item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(item));
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
  bool closed_ = false;
};

struct Produced {
  std::vector<PreparedPair> batch;
  std::exception_ptr error;
};

}  // namespace

Models::Models(const TrainConfig& cfg)
    : config(checked(cfg)), teacher(TeacherSource::seeded(teacher_config(cfg), cfg.teacher_seed)) {
  nn::Rng rng(cfg.seed);
  encoder = std::make_unique<Encoder3d<float>>(cfg.encoder, rng);
  student = std::make_unique<Vit<float>>(student_config(cfg), rng);
  student->set_tag(nn::HalfTag::kAuxiliary);
  decoder = std::make_unique<CorrespondenceDecoder<float>>(cfg.decoder, rng);
}

std::vector<nn::NamedParameter<float>> Models::named_parameters() {
  auto out = encoder->named_parameters("encoder");
  for (auto& p : student->named_parameters("student")) out.push_back(p);
  for (auto& p : decoder->named_parameters("decoder")) out.push_back(p);
  return out;
}

std::vector<nn::NamedBuffer<float>> Models::named_buffers() {
  auto out = encoder->named_buffers("encoder");
  for (auto& b : student->named_buffers("student")) out.push_back(b);
  for (auto& b : decoder->named_buffers("decoder")) out.push_back(b);
  return out;
}

std::vector<nn::Parameter<float>*> Models::trainable() {
  std::vector<nn::Parameter<float>*> out;
  for (auto& np : named_parameters())
    if (!np.param->frozen) out.push_back(np.param);
  return out;
}

void Models::set_training(bool on) {
  encoder->set_training(on);
  student->set_training(on);
  decoder->set_training(on);
}

std::mt19937_64 step_rng(std::uint64_t seed, std::uint64_t step) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(step), std::uint32_t(step >> 32)};
  return std::mt19937_64(seq);
}

std::pair<nn::Tensor<float>, nn::Tensor<float>> pair_losses(Models& models, const PreparedPair& pair) {
  const TrainConfig& cfg = models.config;
  const RgbdFrame& f1 = *pair.first;
  const RgbdFrame& f2 = *pair.second;
  try {
    auto cloud = std::make_shared<const ColoredPointCloud>(build_point_cloud(f1, f2, &pair.mask1, &pair.mask2));
    const auto volume = encode_points(*models.encoder, cloud, cfg.voxel_size, cfg.knn_k);
    const FeatureMap<float> map1 = project_features(volume, f1);
    const FeatureMap<float> map2 = project_features(volume, f2);

    nn::Tensor<float> l2d;
    for (const auto* view : {&map1, &map2}) {
      const RgbdFrame& frame = view == &map1 ? f1 : f2;
      const auto student = student_forward(*models.student, *view);
      const auto l = loss_2d(student, models.teacher.activations(frame), cfg.start_layer);
      l2d = l2d.defined() ? nn::add(l2d, l) : l;
    }
    if (cfg.view_reduction == ViewReduction::kMean) l2d = nn::scale(l2d, 0.5f);

    const auto ctx = make_context(map1, map2, cfg.decoder);
    const auto lm = loss_m(*models.decoder, pair.correspondences, ctx);
    return {l2d, lm};
  } catch (const Error& e) {
    fail(e.code(), "pair (" + f1.frame_id + ", " + f2.frame_id + "): " + e.what());
  }
}

LossReport train_step(Models& models, std::span<const PreparedPair> batch, nn::AdamW<float>& optimizer) {
  if (batch.empty()) fail(ErrorCode::kInvalidInput, "train_step needs at least one pair");
  const float lambda = static_cast<float>(models.config.lambda);
  optimizer.zero_grad();
  nn::Tensor<float> l2d, lm;
  for (const auto& pair : batch) {
    auto [a, b] = pair_losses(models, pair);
    l2d = l2d.defined() ? nn::add(l2d, a) : a;
    lm = lm.defined() ? nn::add(lm, b) : b;
  }
  const float inv = 1.0f / static_cast<float>(batch.size());
  l2d = nn::scale(l2d, inv);
  lm = nn::scale(lm, inv);
  const auto total = nn::add(l2d, nn::scale(lm, lambda));
  total.backward();
  optimizer.step();

  LossReport r;
  r.l2d = l2d.item();
  r.lm = lm.item();
  r.total = r.l2d + models.config.lambda * r.lm;
  r.graph_total = total.item();
  r.pairs = batch.size();
  return r;
}

BatchSampler::BatchSampler(const TrainConfig& config, const Dataset& data) : config_(config), data_(data) {
  for (std::size_t s = 0; s < data.scenes.size(); ++s) {
    tables_.emplace_back(data.scenes[s].frames);
    if (data.scenes[s].frames.size() >= 2) usable_scenes_.push_back(s);
  }
  if (usable_scenes_.empty()) fail(ErrorCode::kInvalidInput, "no scene has at least 2 frames");
}

PreparedPair BatchSampler::prepare(std::size_t scene, std::size_t first, std::size_t second,
                                   std::mt19937_64& rng) const {
  const auto& frames = data_.scenes.at(scene).frames;
  PreparedPair p;
  p.first = &frames.at(first);
  p.second = &frames.at(second);
  p.overlap = tables_[scene](first, second);
  p.mask1 = sample_patch_mask(config_.mask_ratio, config_.mask_patch, p.first->height(), p.first->width(), rng());
  p.mask2 = sample_patch_mask(config_.mask_ratio, config_.mask_patch, p.second->height(), p.second->width(), rng());
  p.correspondences = ground_truth_correspondences(*p.first, *p.second, config_.correspondence_stride);
  auto& pairs = p.correspondences.pairs;
  const std::size_t q = std::size_t(config_.queries);
  if (pairs.size() > q) {
    std::vector<std::size_t> idx(pairs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < q; ++i) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(i, idx.size() - 1)(rng);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(q);
    std::sort(idx.begin(), idx.end());
    std::vector<Correspondence> kept;
    for (auto i : idx) kept.push_back(pairs[i]);
    pairs = std::move(kept);
  }
  return p;
}

std::vector<PreparedPair> BatchSampler::batch(std::uint64_t step) const {
  auto rng = step_rng(config_.seed, step);
  const OverlapRange range{config_.overlap_low, config_.overlap_high};
  std::vector<PreparedPair> out;
  for (int b = 0; b < config_.batch_size; ++b) {
    std::optional<std::pair<std::size_t, FramePair>> drawn;
    for (int attempt = 0; attempt < kPairAttempts && !drawn; ++attempt) {
      const std::size_t s = usable_scenes_[std::uniform_int_distribution<std::size_t>(0, usable_scenes_.size() - 1)(rng)];
      try {
        drawn.emplace(s, sample_pair(tables_[s], range, config_.candidate_views, rng));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNoPair) throw;
      }
    }
    if (!drawn)
      fail(ErrorCode::kNoPair, "no frame pair with overlap in range after " + std::to_string(kPairAttempts) + " draws");
    out.push_back(prepare(drawn->first, drawn->second.first, drawn->second.second, rng));
  }
  return out;
}

Trainer::Trainer(const TrainConfig& config, const Dataset& data)
    : config_(checked(config)),
      data_(data),
      sampler_(config_, data),
      models_(config_),
      optimizer_(models_.trainable(), nn::AdamWConfig{config.lr, config.weight_decay}) {}

LossReport Trainer::step() {
  const auto batch = sampler_.batch(step_);
  const auto report = train_step(models_, batch, optimizer_);
  ++step_;
  return report;
}

std::vector<LossReport> Trainer::run(std::size_t steps,
                                     const std::function<void(std::size_t, const LossReport&)>& on_step) {
  std::vector<LossReport> reports;
  if (deterministic_mode() || steps < 2) {
    for (std::size_t i = 0; i < steps; ++i) {
      reports.push_back(step());
      if (on_step) on_step(step_ - 1, reports.back());
    }
    return reports;
  }

  BoundedQueue<Produced> queue(2);
  const std::uint64_t first = step_;
  std::thread producer([&] {
    for (std::uint64_t s = first; s < first + steps; ++s) {
      Produced item;
      try {
        item.batch = sampler_.batch(s);
      } catch (...) {
        item.error = std::current_exception();
      }
      const bool failed = item.error != nullptr;
      if (!queue.push(std::move(item)) || failed) break;
    }
  });
  try {
    for (std::size_t i = 0; i < steps; ++i) {
      auto item = queue.pop();
      if (!item) fail(ErrorCode::kInvalidInput, "batch producer stopped early");
      if (item->error) std::rethrow_exception(item->error);
      reports.push_back(train_step(models_, item->batch, optimizer_));
      ++step_;
      if (on_step) on_step(step_ - 1, reports.back());
    }
  } catch (...) {
    queue.close();
    producer.join();
    throw;
  }
  queue.close();
  producer.join();
  return reports;
}

Checkpoint Trainer::checkpoint() {
  Checkpoint c;
  c.meta = {{"config", to_json(config_)},
            {"step", step_},
            {"rng", {{"seed", config_.seed}, {"step", step_}}},
            {"optimizer_step", optimizer_.state().step}};
  append_module(c, *models_.encoder, "encoder");
  append_module(c, *models_.student, "student");
  append_module(c, *models_.decoder, "decoder");
  const auto named = models_.named_parameters();
  const auto& state = optimizer_.state();
  std::size_t k = 0;
  for (const auto& np : named) {
    if (np.param->frozen) continue;
    for (int which = 0; which < 2; ++which) {
      TensorRecord t;
      t.name = std::string(which == 0 ? "optim.m." : "optim.v.") + np.path;
      t.tag = nn::HalfTag::kOptimizer;
      t.data = which == 0 ? state.first_moment[k] : state.second_moment[k];
      t.dims = {static_cast<std::uint32_t>(t.data.size())};
      c.tensors.push_back(std::move(t));
    }
    ++k;
  }
  return c;
}

void Trainer::restore(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("config") || ckpt.meta.at("config") != to_json(config_))
    fail(ErrorCode::kInvalidInput, "checkpoint was written with a different training config");
  load_module(ckpt, *models_.encoder, "encoder");
  load_module(ckpt, *models_.student, "student");
  load_module(ckpt, *models_.decoder, "decoder");
  auto& state = optimizer_.state();
  std::size_t k = 0;
  for (const auto& np : models_.named_parameters()) {
    if (np.param->frozen) continue;
    const TensorRecord* m = ckpt.find("optim.m." + np.path);
    const TensorRecord* v = ckpt.find("optim.v." + np.path);
    if (!m || !v || m->data.size() != state.first_moment[k].size() || v->data.size() != state.second_moment[k].size())
      fail(ErrorCode::kShapeMismatch, "checkpoint optimizer state does not match " + np.path);
    state.first_moment[k] = m->data;
    state.second_moment[k] = v->data;
    ++k;
  }
  step_ = ckpt.meta.value("step", std::uint64_t{0});
  state.step = ckpt.meta.value("optimizer_step", std::uint64_t{0});
}

}  // namespace mvnet::pipeline
