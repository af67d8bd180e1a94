#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvnet/nn/module.hpp"

namespace mvnet::pipeline {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  nn::HalfTag tag = nn::HalfTag::kAuxiliary;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

// Binary layout: "MVNT", u32 version, u32 JSON length + bytes, u32 record
// count, then per record: u32 name length + name, u8 tag, u32 ndim,
// u32 dims[], f32 data. All little-endian.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  // {"config": ..., "step": n, "rng": {"seed": s, "step": n}, ...}
  nlohmann::json meta = nlohmann::json::object();
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;
  std::vector<std::uint8_t> encode() const;
  static Checkpoint decode(std::vector<std::uint8_t> bytes, const std::string& what = "checkpoint");
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
// Errors: kBadMagic, kVersionMismatch, kTruncated (each distinct).
Checkpoint load_checkpoint(const std::string& path);

// Only the tensors tagged kEncoder.
Checkpoint encoder_half(const Checkpoint& ckpt);

// Parameters and buffers of a module under `prefix`, with their tags.
void append_module(Checkpoint& ckpt, nn::Module<float>& module, const std::string& prefix);
// Copies matching records into the module; a missing tensor or a shape
// mismatch raises kShapeMismatch.
void load_module(const Checkpoint& ckpt, nn::Module<float>& module, const std::string& prefix);

}  // namespace mvnet::pipeline
