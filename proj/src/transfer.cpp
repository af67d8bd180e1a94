#include "mvnet/transfer.hpp"

#include <filesystem>

#include <json.hpp>

#include "mvnet/binary_io.hpp"
#include "mvnet/error.hpp"
#include "mvnet/nn/ops.hpp"

namespace mvnet {

using nn::Tensor;

namespace {
constexpr std::uint32_t kArchiveVersion = 1;
}

void Vit2dConfig::validate() const {
  if (num_blocks < 1 || heads < 1 || hidden_dim < 1 || patch_size < 1 || in_channels < 1 || mlp_ratio < 1)
    fail(ErrorCode::kInvalidInput, "vit config entries must be positive");
  if (hidden_dim % heads != 0) fail(ErrorCode::kInvalidInput, "vit hidden_dim must be divisible by heads");
  if (hidden_dim % 4 != 0) fail(ErrorCode::kInvalidInput, "vit hidden_dim must be divisible by 4");
}

namespace detail {

template <typename T>
VitBlock<T>::VitBlock(int dim, int heads, int hidden, nn::Rng& rng)
    : ln1(dim), attn(dim, heads, rng), ln2(dim), mlp(dim, hidden, rng) {
  this->add_child(ln1, "ln1");
  this->add_child(attn, "attn");
  this->add_child(ln2, "ln2");
  this->add_child(mlp, "mlp");
}

template <typename T>
Tensor<T> VitBlock<T>::operator()(const Tensor<T>& x) {
  const Tensor<T> n1 = ln1(x);
  const Tensor<T> h = nn::add(x, attn(n1, n1));
  return nn::add(h, mlp(ln2(h)));
}

template class VitBlock<float>;
template class VitBlock<double>;

}  // namespace detail

template <typename T>
Vit<T>::Vit(Vit2dConfig config, nn::Rng& rng)
    : patch_embed((config.validate(), config.in_channels), config.hidden_dim, config.patch_size, config.patch_size, 0,
                  rng),
      config_(config) {
  this->add_child(patch_embed, "patch_embed");
  for (int b = 0; b < config_.num_blocks; ++b) {
    blocks.push_back(
        std::make_unique<detail::VitBlock<T>>(config_.hidden_dim, config_.heads, config_.hidden_dim * config_.mlp_ratio, rng));
    this->add_child(*blocks.back(), "block" + std::to_string(b));
  }
}

template <typename T>
BlockActivations<T> Vit<T>::operator()(const Tensor<T>& image) {
  const int p = config_.patch_size;
  if (image.rank() != 3 || image.dim(0) % std::size_t(p) != 0 || image.dim(1) % std::size_t(p) != 0 ||
      image.dim(0) == 0 || image.dim(1) == 0)
    fail(ErrorCode::kInvalidGeometry, "vit: image " + nn::to_string(image.shape()) + " is not a multiple of patch " +
                                          std::to_string(p));
  if (image.dim(2) != std::size_t(config_.in_channels))
    fail(ErrorCode::kInvalidInput, "vit: expected " + std::to_string(config_.in_channels) + " input channels, got " +
                                       std::to_string(image.dim(2)));
  const std::size_t rows = image.dim(0) / std::size_t(p), cols = image.dim(1) / std::size_t(p);
  const std::size_t dim = std::size_t(config_.hidden_dim);

  Tensor<T> coords({rows * cols, 2});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      coords[(r * cols + c) * 2] = T((r + 0.5) / double(rows));
      coords[(r * cols + c) * 2 + 1] = T((c + 0.5) / double(cols));
    }
  const Tensor<T> pos = nn::sinusoidal_encode(coords, config_.hidden_dim / 4, T(16));

  Tensor<T> x = nn::add(nn::reshape(patch_embed(image), {rows * cols, dim}), pos);
  BlockActivations<T> out;
  for (auto& b : blocks) {
    x = (*b)(x);
    out.blocks.push_back(x);
  }
  return out;
}

template <typename T>
Tensor<T> image_tensor(const RgbdFrame& frame) {
  Tensor<T> t({std::size_t(frame.height()), std::size_t(frame.width()), 3});
  for (std::size_t i = 0; i < frame.rgb.size(); ++i) t[i] = T(frame.rgb[i]);
  return t;
}

BlockActivations<float> teacher_forward(Vit<float>& teacher, const Tensor<float>& image) {
  for (float v : image.data())
    if (!(v >= 0.f && v <= 1.f)) fail(ErrorCode::kInvalidInput, "teacher image values must lie in [0, 1]");
  nn::NoGradGuard guard;
  teacher.set_training(false);
  auto acts = teacher(image);
  for (auto& b : acts.blocks) b = b.detach();
  return acts;
}

template <typename T>
BlockActivations<T> student_forward(Vit<T>& student, const FeatureMap<T>& fmap) {
  if (fmap.data.rank() != 3 || fmap.data.dim(2) != std::size_t(student.config().in_channels))
    fail(ErrorCode::kInvalidInput, "student: feature map " + nn::to_string(fmap.data.shape()) + " does not have " +
                                       std::to_string(student.config().in_channels) + " channels");
  return student(fmap.data);
}

template <typename T>
Tensor<T> loss_2d(const BlockActivations<T>& student, const BlockActivations<T>& teacher, int start_layer) {
  if (student.size() != teacher.size())
    fail(ErrorCode::kInvalidInput, "loss_2d: student has " + std::to_string(student.size()) +
                                       " blocks, teacher has " + std::to_string(teacher.size()));
  const int n = static_cast<int>(student.size());
  if (start_layer < 1 || start_layer > n)
    fail(ErrorCode::kInvalidInput, "loss_2d: start layer " + std::to_string(start_layer) + " outside [1, " +
                                       std::to_string(n) + "]");
  Tensor<T> total;
  for (int j = start_layer; j <= n; ++j) {
    const auto& s = student.blocks[std::size_t(j - 1)];
    const auto& t = teacher.blocks[std::size_t(j - 1)];
    if (s.shape() != t.shape())
      fail(ErrorCode::kShapeMismatch, "loss_2d: block " + std::to_string(j) + " shapes " + nn::to_string(s.shape()) +
                                          " vs " + nn::to_string(t.shape()));
    const Tensor<T> term = nn::squared_distance(s, t.requires_grad() ? t.detach() : t);
    total = total.defined() ? nn::add(total, term) : term;
  }
  return total;
}

TeacherSource TeacherSource::seeded(const Vit2dConfig& config, std::uint64_t seed) {
  TeacherSource t;
  t.mode_ = Mode::kSeeded;
  t.config_ = config;
  nn::Rng rng(seed);
  t.network_ = std::make_shared<Vit<float>>(config, rng);
  t.network_->set_frozen(true);
  t.network_->set_training(false);
  return t;
}

TeacherSource TeacherSource::imported(const std::string& manifest_path, const Vit2dConfig& expected) {
  expected.validate();
  TeacherSource t;
  t.mode_ = Mode::kImported;
  t.config_ = expected;
  t.archive_paths_ = read_activation_manifest(manifest_path);
  return t;
}

const BlockActivations<float>& TeacherSource::activations(const RgbdFrame& frame) {
  if (auto it = cache_.find(frame.frame_id); it != cache_.end()) return it->second;
  BlockActivations<float> acts;
  const std::size_t tokens = std::size_t(frame.height() / config_.patch_size) * (frame.width() / config_.patch_size);
  if (mode_ == Mode::kSeeded) {
    acts = teacher_forward(*network_, image_tensor<float>(frame));
  } else {
    const auto it = archive_paths_.find(frame.frame_id);
    if (it == archive_paths_.end())
      fail(ErrorCode::kInvalidInput, "no imported teacher activations for frame '" + frame.frame_id + "'");
    acts = read_activation_archive(it->second);
    if (acts.size() != std::size_t(config_.num_blocks) || acts.tokens() != tokens ||
        acts.dim() != std::size_t(config_.hidden_dim))
      fail(ErrorCode::kShapeMismatch, "imported activations for '" + frame.frame_id + "' have N=" +
                                          std::to_string(acts.size()) + ", tokens=" + std::to_string(acts.tokens()) +
                                          ", dim=" + std::to_string(acts.dim()) + "; expected N=" +
                                          std::to_string(config_.num_blocks) + ", tokens=" + std::to_string(tokens) +
                                          ", dim=" + std::to_string(config_.hidden_dim));
  }
  return cache_.emplace(frame.frame_id, std::move(acts)).first->second;
}

void write_activation_archive(const std::string& path, const BlockActivations<float>& acts) {
  io::Writer w;
  w.magic("MVTA");
  w.u32(kArchiveVersion);
  w.u32(std::uint32_t(acts.size()));
  w.u32(std::uint32_t(acts.tokens()));
  w.u32(std::uint32_t(acts.dim()));
  for (const auto& b : acts.blocks) {
    if (b.shape() != nn::Shape{acts.tokens(), acts.dim()})
      fail(ErrorCode::kShapeMismatch, "activation blocks must share one shape");
    w.f32s(b.data());
  }
  w.save(path);
}

BlockActivations<float> read_activation_archive(const std::string& path) {
  auto r = io::Reader::open(path);
  r.expect_magic("MVTA");
  const auto version = r.u32();
  if (version != kArchiveVersion)
    fail(ErrorCode::kVersionMismatch, path + ": archive version " + std::to_string(version));
  const std::size_t n = r.u32(), tokens = r.u32(), dim = r.u32();
  BlockActivations<float> acts;
  for (std::size_t j = 0; j < n; ++j) {
    Tensor<float> b({tokens, dim});
    r.f32s(b.data());
    acts.blocks.push_back(b);
  }
  return acts;
}

void write_activation_manifest(const std::string& path, const std::map<std::string, std::string>& archives) {
  nlohmann::json j;
  j["format"] = "MVTA";
  j["version"] = kArchiveVersion;
  j["archives"] = archives;
  const std::string text = j.dump(2);
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::map<std::string, std::string> read_activation_manifest(const std::string& path) {
  const auto bytes = io::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidInput, path + ": " + e.what());
  }
  if (!j.contains("archives") || !j["archives"].is_object())
    fail(ErrorCode::kInvalidInput, path + ": manifest has no 'archives' object");
  const auto base = std::filesystem::path(path).parent_path();
  std::map<std::string, std::string> out;
  for (const auto& [id, file] : j["archives"].items()) out[id] = (base / file.get<std::string>()).string();
  return out;
}

template class Vit<float>;
template class Vit<double>;
template Tensor<float> image_tensor(const RgbdFrame&);
template Tensor<double> image_tensor(const RgbdFrame&);
template BlockActivations<float> student_forward(Vit<float>&, const FeatureMap<float>&);
template BlockActivations<double> student_forward(Vit<double>&, const FeatureMap<double>&);
template Tensor<float> loss_2d(const BlockActivations<float>&, const BlockActivations<float>&, int);
template Tensor<double> loss_2d(const BlockActivations<double>&, const BlockActivations<double>&, int);

}  // namespace mvnet
