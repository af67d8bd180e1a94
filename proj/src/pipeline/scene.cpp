#include "mvnet/pipeline/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "mvnet/error.hpp"

namespace mvnet::pipeline {
namespace {

constexpr double kHitEpsilon = 1e-9;

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  SurfaceLabel label = SurfaceLabel::kWall;
  int palette = 2;
  int axis = 0;  // normal axis of the face that was hit
  bool valid = false;
};

bool inside(const Eigen::Vector3d& p, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
  return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
}

// Exit point of a ray started inside the room.
Hit room_hit(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const SceneSpec& spec) {
  Hit h;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) continue;
    const double bound = d[a] > 0 ? spec.room_extents[a] : 0.0;
    const double t = (bound - o[a]) / d[a];
    if (t > kHitEpsilon && t < h.t) {
      h.t = t;
      h.axis = a;
      h.valid = true;
      if (a == 1 && d[a] < 0) {
        h.label = SurfaceLabel::kFloor;
        h.palette = 0;
      } else if (a == 1) {
        h.label = SurfaceLabel::kCeiling;
        h.palette = 1;
      } else {
        h.label = SurfaceLabel::kWall;
        h.palette = 2;
      }
    }
  }
  if (h.valid && h.label == SurfaceLabel::kCeiling && spec.skylight) {
    const Eigen::Vector3d p = o + h.t * d;
    const Skylight& s = *spec.skylight;
    if (p.x() > s.x0 && p.x() < s.x1 && p.z() > s.z0 && p.z() < s.z1) h.valid = false;
  }
  return h;
}

// Slab test; only entering hits count, so a camera inside a box sees through it.
std::optional<std::pair<double, int>> box_hit(const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                                              const BoxObject& box) {
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  int axis = 0;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < box.lo[a] || o[a] > box.hi[a]) return std::nullopt;
      continue;
    }
    double ta = (box.lo[a] - o[a]) / d[a], tb = (box.hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis = a;
    }
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t0 <= kHitEpsilon) return std::nullopt;
  return std::make_pair(t0, axis);
}

// Checker plus a soft stripe, in surface coordinates.
float shade(const Eigen::Vector3d& p, int axis, int palette) {
  const int u = axis == 0 ? 1 : 0, v = axis == 2 ? 1 : 2;
  const double cell = 0.1 + 0.04 * (palette % 3);
  const long iu = static_cast<long>(std::floor(p[u] / cell)), iv = static_cast<long>(std::floor(p[v] / cell));
  const double checker = ((iu + iv) & 1) ? 0.78 : 1.0;
  const double stripe = 0.9 + 0.1 * std::sin(p[u] * 23.0 + p[v] * 11.0 + palette);
  return static_cast<float>(checker * stripe);
}

float quantize(double c) {
  const double q = std::round(std::clamp(c, 0.0, 1.0) * 255.0);
  return static_cast<float>(q) / 255.0f;
}

Eigen::Vector3f hsv(double h, double s, double v) {
  const double c = v * s, hp = std::fmod(h, 1.0) * 6.0;
  const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  Eigen::Vector3d rgb;
  if (hp < 1) rgb = {c, x, 0};
  else if (hp < 2) rgb = {x, c, 0};
  else if (hp < 3) rgb = {0, c, x};
  else if (hp < 4) rgb = {0, x, c};
  else if (hp < 5) rgb = {x, 0, c};
  else rgb = {c, 0, x};
  return (rgb.array() + (v - c)).cast<float>();
}

}  // namespace

CameraIntrinsics SceneSpec::intrinsics() const {
  CameraIntrinsics k;
  const double f = 0.5 * width / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
  k.fx = k.fy = f;
  k.cx = 0.5 * (width - 1);
  k.cy = 0.5 * (height - 1);
  k.width = width;
  k.height = height;
  return k;
}

void SceneSpec::validate() const {
  if (trajectory.size() < 2) fail(ErrorCode::kInvalidInput, "scene needs at least 2 cameras");
  if (!(room_extents.array() > 0).all()) fail(ErrorCode::kInvalidGeometry, "room extents must be positive");
  if (height <= 0 || width <= 0) fail(ErrorCode::kInvalidGeometry, "resolution must be positive");
  if (!(fov_deg > 0 && fov_deg < 180)) fail(ErrorCode::kInvalidGeometry, "field of view must be in (0, 180)");
  if (palette.size() < 3) fail(ErrorCode::kInvalidInput, "palette needs floor, ceiling and wall colors");
  for (const auto& box : objects) {
    if (!(box.lo.array() < box.hi.array()).all()) fail(ErrorCode::kInvalidGeometry, "object box is empty");
    if (box.palette_index < 0 || std::size_t(box.palette_index) >= palette.size())
      fail(ErrorCode::kInvalidInput, "object palette index out of range");
  }
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    trajectory[i].validate();
    if (!inside(trajectory[i].camera_center(), Eigen::Vector3d::Zero(), room_extents))
      fail(ErrorCode::kInvalidGeometry, "camera " + std::to_string(i) + " is outside the room");
  }
}

SceneSpec random_scene_spec(std::uint64_t seed, int frames, int height, int width, int objects) {
  if (frames < 2) fail(ErrorCode::kInvalidInput, "a scene needs at least 2 frames");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double a, double b) { return a + (b - a) * u01(rng); };

  SceneSpec spec;
  spec.seed = seed;
  spec.name = "scene_" + std::to_string(seed);
  spec.height = height;
  spec.width = width;
  const Eigen::Vector3d& room = spec.room_extents;

  spec.palette.push_back(hsv(uniform(0.05, 0.12), uniform(0.4, 0.6), uniform(0.45, 0.6)));  // floor
  spec.palette.push_back(hsv(uniform(0.0, 1.0), 0.05, uniform(0.85, 0.95)));               // ceiling
  spec.palette.push_back(hsv(uniform(0.0, 1.0), uniform(0.1, 0.25), uniform(0.7, 0.85)));  // walls
  const double hue0 = u01(rng);
  for (int i = 0; i < objects; ++i)
    spec.palette.push_back(hsv(hue0 + double(i) / std::max(objects, 1), uniform(0.7, 0.95), uniform(0.6, 0.9)));

  // Objects stand on the floor away from the central camera region.
  const Eigen::Vector3d mid = 0.5 * room;
  for (int i = 0; i < objects; ++i) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double sx = uniform(0.15, 0.4), sz = uniform(0.15, 0.4), sy = uniform(0.1, 0.5);
      const double x0 = uniform(0.05, room.x() - 0.05 - sx), z0 = uniform(0.05, room.z() - 0.05 - sz);
      BoxObject box{{x0, 0.0, z0}, {x0 + sx, sy, z0 + sz}, 3 + i};
      const bool clear_of_camera = box.hi.x() < mid.x() - 0.3 || box.lo.x() > mid.x() + 0.3 ||
                                   box.hi.z() < mid.z() - 0.3 || box.lo.z() > mid.z() + 0.3;
      if (clear_of_camera || attempt == 99) {
        spec.objects.push_back(box);
        break;
      }
    }
  }

  // 12 degrees of yaw per frame; the eye drifts a few centimetres.
  const double yaw0 = uniform(0.0, 2.0 * std::numbers::pi);
  const double step = 12.0 * std::numbers::pi / 180.0 * (u01(rng) < 0.5 ? -1.0 : 1.0);
  const double pitch = -uniform(0.15, 0.3);
  const Eigen::Vector3d drift(uniform(-0.01, 0.01), 0.0, uniform(-0.01, 0.01));
  const Eigen::Vector3d start = mid + Eigen::Vector3d(uniform(-0.1, 0.1), uniform(-0.05, 0.05), uniform(-0.1, 0.1));
  for (int k = 0; k < frames; ++k) {
    const double yaw = yaw0 + k * step;
    const Eigen::Vector3d eye = start + k * drift;
    const Eigen::Vector3d dir(std::cos(pitch) * std::cos(yaw), std::sin(pitch), std::cos(pitch) * std::sin(yaw));
    spec.trajectory.push_back(CameraExtrinsics::look_at(eye, eye + dir, Eigen::Vector3d::UnitY()));
  }
  return spec;
}

std::vector<RgbdFrame> generate_scene(const SceneSpec& spec, const WarningSink& warn) {
  spec.validate();
  const CameraIntrinsics k = spec.intrinsics();
  const Eigen::Matrix3d k_inv = k.matrix().inverse();
  std::vector<RgbdFrame> frames;
  for (std::size_t c = 0; c < spec.trajectory.size(); ++c) {
    RgbdFrame f;
    f.frame_id = spec.name + "/" + std::to_string(c);
    f.intrinsics = k;
    f.extrinsics = spec.trajectory[c];
    f.allocate();
    f.labels.assign(f.pixel_count(), 0);
    const Eigen::Vector3d eye = f.extrinsics.camera_center();
    const Eigen::Matrix3d rt = f.extrinsics.rotation.transpose();
    for (int row = 0; row < k.height; ++row) {
      for (int col = 0; col < k.width; ++col) {
        // Camera ray with unit z, so the hit parameter is the camera depth.
        const Eigen::Vector3d d = rt * (k_inv * Eigen::Vector3d(col, row, 1.0));
        Hit hit = room_hit(eye, d, spec);
        for (const auto& box : spec.objects) {
          const auto b = box_hit(eye, d, box);
          if (b && b->first < hit.t) {
            hit = Hit{b->first, SurfaceLabel::kObject, box.palette_index, b->second, true};
          }
        }
        if (!hit.valid) continue;
        const std::size_t i = f.index(row, col);
        const Eigen::Vector3d p = eye + hit.t * d;
        const float s = shade(p, hit.axis, hit.palette);
        for (int ch = 0; ch < 3; ++ch) f.rgb[i * 3 + ch] = quantize(s * spec.palette[hit.palette][ch]);
        f.depth[i] = static_cast<float>(hit.t);
        f.valid[i] = 1;
        f.labels[i] = static_cast<std::uint8_t>(hit.label);
      }
    }
    if (f.valid_count() == 0) {
      if (warn) warn("degenerate frame " + f.frame_id + " sees nothing; excluded");
      continue;
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace mvnet::pipeline
