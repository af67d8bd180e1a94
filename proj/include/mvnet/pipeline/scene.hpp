#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mvnet/geometry.hpp"

namespace mvnet::pipeline {

// Per-pixel semantic labels written by the generator.
enum class SurfaceLabel : std::uint8_t { kFloor = 0, kCeiling = 1, kWall = 2, kObject = 3 };
inline constexpr int kNumSurfaceLabels = 4;

struct BoxObject {
  Eigen::Vector3d lo;
  Eigen::Vector3d hi;
  int palette_index = 0;
};

// Rectangular opening in the ceiling; rays leaving through it return nothing.
struct Skylight {
  double x0 = 0, x1 = 0, z0 = 0, z1 = 0;
};

// World frame: the room spans [0, extents] with +y up (floor at y = 0).
struct SceneSpec {
  std::uint64_t seed = 0;
  std::string name = "scene";
  Eigen::Vector3d room_extents{1.6, 1.2, 1.6};
  std::vector<BoxObject> objects;
  // Linear RGB colors; floor, ceiling and walls use entries 0, 1, 2.
  std::vector<Eigen::Vector3f> palette;
  std::vector<CameraExtrinsics> trajectory;
  std::optional<Skylight> skylight;
  int height = 32;
  int width = 32;
  double fov_deg = 60.0;

  std::size_t object_count() const { return objects.size(); }
  CameraIntrinsics intrinsics() const;
  void validate() const;
};

// Randomized desk-scale room: `objects` boxes on the floor and a camera that
// sweeps its yaw while drifting slowly, so neighbouring frames overlap.
SceneSpec random_scene_spec(std::uint64_t seed, int frames, int height = 32, int width = 32, int objects = 3);

// Receives a message for every frame excluded as degenerate.
using WarningSink = std::function<void(const std::string&)>;

// Ray-casts every camera. Frames that see nothing are dropped with a warning.
std::vector<RgbdFrame> generate_scene(const SceneSpec& spec, const WarningSink& warn = {});

}  // namespace mvnet::pipeline
