#include "mvnet/pipeline/config.hpp"

#include <set>

#include "mvnet/binary_io.hpp"
#include "mvnet/error.hpp"

namespace mvnet::pipeline {
using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) fail(ErrorCode::kInvalidInput, where + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) fail(ErrorCode::kInvalidInput, "unknown config key " + where + "." + key);
}

template <typename V>
void read(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace

void TrainConfig::sync() {
  encoder.out_channels = channels;
  vit.hidden_dim = channels;
}

void TrainConfig::validate() const {
  if (!(lr > 0)) fail(ErrorCode::kInvalidInput, "lr must be positive");
  if (weight_decay < 0) fail(ErrorCode::kInvalidInput, "weight_decay must be >= 0");
  if (batch_size < 1 || epochs < 1 || max_steps < 0) fail(ErrorCode::kInvalidInput, "batch_size and epochs must be >= 1");
  if (!(lambda >= 0)) fail(ErrorCode::kInvalidInput, "lambda must be >= 0");
  if (!(mask_ratio >= 0 && mask_ratio <= 1)) fail(ErrorCode::kInvalidInput, "mask_ratio must lie in [0, 1]");
  if (mask_patch < 1) fail(ErrorCode::kInvalidInput, "mask_patch must be positive");
  if (!(overlap_low >= 0 && overlap_low <= overlap_high && overlap_high <= 1))
    fail(ErrorCode::kInvalidInput, "overlap_range must satisfy 0 <= low <= high <= 1");
  if (candidate_views < 1) fail(ErrorCode::kInvalidInput, "candidate_views must be positive");
  if (start_layer < 1 || start_layer > vit.num_blocks)
    fail(ErrorCode::kInvalidInput, "start_layer must lie in [1, num_blocks]");
  if (!(voxel_size > 0)) fail(ErrorCode::kInvalidInput, "voxel_size must be positive");
  if (channels < 1 || knn_k < 1 || queries < 1 || correspondence_stride < 1)
    fail(ErrorCode::kInvalidInput, "channels, knn_k, queries and correspondence_stride must be positive");
  if (encoder.out_channels != channels || vit.hidden_dim != channels)
    fail(ErrorCode::kInvalidInput, "encoder and vit widths must equal channels");
  encoder.validate();
  vit.validate();
  decoder.validate();
}

std::size_t TrainConfig::steps_for(std::size_t training_frames) const {
  const std::size_t per_epoch = (training_frames + batch_size - 1) / batch_size;
  const std::size_t total = per_epoch * std::size_t(epochs);
  return max_steps > 0 ? std::min<std::size_t>(total, std::size_t(max_steps)) : total;
}

json to_json(const TrainConfig& c) {
  return {
      {"lr", c.lr},
      {"weight_decay", c.weight_decay},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"max_steps", c.max_steps},
      {"lambda", c.lambda},
      {"mask_ratio", c.mask_ratio},
      {"mask_patch", c.mask_patch},
      {"overlap_range", {c.overlap_low, c.overlap_high}},
      {"candidate_views", c.candidate_views},
      {"start_layer", c.start_layer},
      {"voxel_size", c.voxel_size},
      {"channels", c.channels},
      {"knn_k", c.knn_k},
      {"queries", c.queries},
      {"correspondence_stride", c.correspondence_stride},
      {"view_reduction", c.view_reduction == ViewReduction::kSum ? "sum" : "mean"},
      {"seed", c.seed},
      {"teacher_seed", c.teacher_seed},
      {"encoder",
       {{"channels_per_stage", c.encoder.channels_per_stage},
        {"max_extent", c.encoder.max_extent},
        {"skip_connections", c.encoder.skip_connections}}},
      {"vit",
       {{"num_blocks", c.vit.num_blocks},
        {"heads", c.vit.heads},
        {"patch_size", c.vit.patch_size},
        {"mlp_ratio", c.vit.mlp_ratio}}},
      {"decoder",
       {{"layers", c.decoder.layers},
        {"heads", c.decoder.heads},
        {"dim", c.decoder.dim},
        {"query_freqs", c.decoder.query_freqs},
        {"context_pool", c.decoder.context_pool},
        {"mlp_ratio", c.decoder.mlp_ratio}}},
  };
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  try {
    reject_unknown(j,
                   {"lr", "weight_decay", "batch_size", "epochs", "max_steps", "lambda", "mask_ratio", "mask_patch",
                    "overlap_range", "candidate_views", "start_layer", "voxel_size", "channels", "knn_k", "queries",
                    "correspondence_stride", "view_reduction", "seed", "teacher_seed", "encoder", "vit", "decoder"},
                   "config");
    read(j, "lr", c.lr);
    read(j, "weight_decay", c.weight_decay);
    read(j, "batch_size", c.batch_size);
    read(j, "epochs", c.epochs);
    read(j, "max_steps", c.max_steps);
    read(j, "lambda", c.lambda);
    read(j, "mask_ratio", c.mask_ratio);
    read(j, "mask_patch", c.mask_patch);
    if (j.contains("overlap_range")) {
      const auto r = j.at("overlap_range").get<std::vector<double>>();
      if (r.size() != 2) fail(ErrorCode::kInvalidInput, "overlap_range needs two values");
      c.overlap_low = r[0];
      c.overlap_high = r[1];
    }
    read(j, "candidate_views", c.candidate_views);
    read(j, "start_layer", c.start_layer);
    read(j, "voxel_size", c.voxel_size);
    read(j, "channels", c.channels);
    read(j, "knn_k", c.knn_k);
    read(j, "queries", c.queries);
    read(j, "correspondence_stride", c.correspondence_stride);
    read(j, "seed", c.seed);
    read(j, "teacher_seed", c.teacher_seed);
    if (j.contains("view_reduction")) {
      const auto v = j.at("view_reduction").get<std::string>();
      if (v == "sum") c.view_reduction = ViewReduction::kSum;
      else if (v == "mean") c.view_reduction = ViewReduction::kMean;
      else fail(ErrorCode::kInvalidInput, "view_reduction must be \"sum\" or \"mean\"");
    }
    if (j.contains("encoder")) {
      const auto& e = j.at("encoder");
      reject_unknown(e, {"channels_per_stage", "max_extent", "skip_connections"}, "encoder");
      read(e, "channels_per_stage", c.encoder.channels_per_stage);
      read(e, "max_extent", c.encoder.max_extent);
      read(e, "skip_connections", c.encoder.skip_connections);
    }
    if (j.contains("vit")) {
      const auto& v = j.at("vit");
      reject_unknown(v, {"num_blocks", "heads", "patch_size", "mlp_ratio"}, "vit");
      read(v, "num_blocks", c.vit.num_blocks);
      read(v, "heads", c.vit.heads);
      read(v, "patch_size", c.vit.patch_size);
      read(v, "mlp_ratio", c.vit.mlp_ratio);
    }
    if (j.contains("decoder")) {
      const auto& d = j.at("decoder");
      reject_unknown(d, {"layers", "heads", "dim", "query_freqs", "context_pool", "mlp_ratio"}, "decoder");
      read(d, "layers", c.decoder.layers);
      read(d, "heads", c.decoder.heads);
      read(d, "dim", c.decoder.dim);
      read(d, "query_freqs", c.decoder.query_freqs);
      read(d, "context_pool", c.decoder.context_pool);
      read(d, "mlp_ratio", c.decoder.mlp_ratio);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidInput, std::string("config: ") + e.what());
  }
  c.sync();
  c.validate();
  return c;
}

TrainConfig load_config(const std::string& path) {
  const auto bytes = io::read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidInput, path + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace mvnet::pipeline
