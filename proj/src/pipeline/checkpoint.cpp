#include "mvnet/pipeline/checkpoint.hpp"

#include "mvnet/binary_io.hpp"
#include "mvnet/error.hpp"

namespace mvnet::pipeline {
namespace {

const TensorRecord& must_find(const Checkpoint& ckpt, const std::string& name) {
  const TensorRecord* r = ckpt.find(name);
  if (!r) fail(ErrorCode::kShapeMismatch, "checkpoint has no tensor " + name);
  return *r;
}

}  // namespace

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<std::uint8_t> Checkpoint::encode() const {
  io::Writer w;
  w.magic("MVNT");
  w.u32(version);
  w.string(meta.dump());
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    std::size_t n = 1;
    for (auto d : t.dims) n *= d;
    if (n != t.data.size()) fail(ErrorCode::kShapeMismatch, "tensor " + t.name + " data does not match its dims");
    w.string(t.name);
    w.u8(static_cast<std::uint8_t>(t.tag));
    w.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    w.f32s(t.data);
  }
  return w.buffer();
}

Checkpoint Checkpoint::decode(std::vector<std::uint8_t> bytes, const std::string& what) {
  io::Reader r(std::move(bytes), what);
  r.expect_magic("MVNT");
  Checkpoint c;
  c.version = r.u32();
  if (c.version != kCheckpointVersion)
    fail(ErrorCode::kVersionMismatch, what + ": version " + std::to_string(c.version) + ", expected " +
                                          std::to_string(kCheckpointVersion));
  const std::string meta = r.string();
  try {
    c.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidInput, what + ": config blob is not JSON: " + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = r.string();
    const std::uint8_t tag = r.u8();
    if (tag > static_cast<std::uint8_t>(nn::HalfTag::kOptimizer))
      fail(ErrorCode::kInvalidInput, what + ": tensor " + t.name + " has unknown tag " + std::to_string(tag));
    t.tag = static_cast<nn::HalfTag>(tag);
    const std::uint32_t ndim = r.u32();
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.dims.push_back(r.u32());
      n *= t.dims.back();
    }
    if (n * 4 > r.remaining()) fail(ErrorCode::kTruncated, what + ": tensor " + t.name + " is cut short");
    t.data.resize(n);
    r.f32s(t.data);
    c.tensors.push_back(std::move(t));
  }
  if (!r.at_end()) fail(ErrorCode::kInvalidInput, what + ": trailing bytes after the last tensor");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = ckpt.encode();
  io::write_file(path, bytes);
}

Checkpoint load_checkpoint(const std::string& path) { return Checkpoint::decode(io::read_file(path), path); }

Checkpoint encoder_half(const Checkpoint& ckpt) {
  Checkpoint out;
  out.version = ckpt.version;
  out.meta = ckpt.meta;
  for (const auto& t : ckpt.tensors)
    if (t.tag == nn::HalfTag::kEncoder) out.tensors.push_back(t);
  return out;
}

void append_module(Checkpoint& ckpt, nn::Module<float>& module, const std::string& prefix) {
  for (const auto& np : module.named_parameters(prefix)) {
    TensorRecord t;
    t.name = np.path;
    t.tag = np.param->tag;
    for (auto d : np.param->tensor.shape()) t.dims.push_back(static_cast<std::uint32_t>(d));
    const auto data = np.param->tensor.data();
    t.data.assign(data.begin(), data.end());
    ckpt.tensors.push_back(std::move(t));
  }
  for (const auto& nb : module.named_buffers(prefix)) {
    TensorRecord t;
    t.name = nb.path;
    t.tag = nb.tag;
    t.dims = {static_cast<std::uint32_t>(nb.data->size())};
    t.data = *nb.data;
    ckpt.tensors.push_back(std::move(t));
  }
}

void load_module(const Checkpoint& ckpt, nn::Module<float>& module, const std::string& prefix) {
  for (const auto& np : module.named_parameters(prefix)) {
    const TensorRecord& t = must_find(ckpt, np.path);
    std::vector<std::uint32_t> dims;
    for (auto d : np.param->tensor.shape()) dims.push_back(static_cast<std::uint32_t>(d));
    if (dims != t.dims) fail(ErrorCode::kShapeMismatch, "tensor " + np.path + " has a different shape");
    auto data = np.param->tensor.data();
    std::copy(t.data.begin(), t.data.end(), data.begin());
  }
  for (const auto& nb : module.named_buffers(prefix)) {
    const TensorRecord& t = must_find(ckpt, nb.path);
    if (t.data.size() != nb.data->size()) fail(ErrorCode::kShapeMismatch, "buffer " + nb.path + " has a different size");
    *nb.data = t.data;
  }
}

}  // namespace mvnet::pipeline
