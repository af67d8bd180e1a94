#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace mvnet {

// Pinhole intrinsics. Pixel centers sit at integer coordinates.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double skew = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  Eigen::Matrix3d matrix() const;
  void validate() const;
};

// World-to-camera rigid transform: X_cam = R * X_world + T.
struct CameraExtrinsics {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Matrix4d matrix() const;
  Eigen::Vector3d camera_center() const;
  void validate() const;

  // Camera at `eye` looking at `target`; camera y axis points along -up.
  static CameraExtrinsics look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                  const Eigen::Vector3d& up);
};

struct RgbdFrame {
  std::string frame_id;
  CameraIntrinsics intrinsics;
  CameraExtrinsics extrinsics;
  std::vector<float> rgb;       // H*W*3, row-major, values in [0,1]
  std::vector<float> depth;     // H*W meters
  std::vector<std::uint8_t> valid;   // H*W
  std::vector<std::uint8_t> labels;  // H*W semantic labels; empty when unlabeled

  int width() const { return intrinsics.width; }
  int height() const { return intrinsics.height; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width()) * static_cast<std::size_t>(height());
  }
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width()) +
           static_cast<std::size_t>(col);
  }
  bool is_valid(int row, int col) const { return valid[index(row, col)] != 0; }
  std::size_t valid_count() const;

  // Allocates zeroed buffers for the current intrinsics resolution.
  void allocate();
  void validate() const;
};

struct Projection {
  Eigen::Vector2d pixel;  // (x, y) = (col, row)
  double depth = 0.0;     // camera-frame Z; may be <= 0
};

// Normalized coordinates are (x / W, y / H).
struct Correspondence {
  Eigen::Vector2d x;
  Eigen::Vector2d x_gt;
};

struct CorrespondenceSet {
  std::vector<Correspondence> pairs;
  std::pair<std::string, std::string> source_ids;
  int width = 0;   // resolution of the second view
  int height = 0;

  bool empty() const { return pairs.empty(); }
  std::size_t size() const { return pairs.size(); }
};

inline constexpr double kDefaultDepthTolerance = 0.01;
inline constexpr int kDefaultCorrespondenceStride = 4;

Projection project(const Eigen::Vector3d& point, const CameraIntrinsics& intr,
                   const CameraExtrinsics& extr);

Eigen::Vector3d unproject(const Eigen::Vector2d& pixel, double depth,
                          const CameraIntrinsics& intr, const CameraExtrinsics& extr);

// Nearest pixel (col, row) of a continuous projection using floor(x + 0.5).
std::pair<int, int> nearest_pixel(const Eigen::Vector2d& pixel);

// Reprojects pixel (row, col) of `from` into `to`. Returns the destination
// (col, row) when it is in bounds, valid, and passes the occlusion test.
std::optional<std::pair<int, int>> reproject_visible(const RgbdFrame& from, int row, int col,
                                                     const RgbdFrame& to, double depth_tol);

CorrespondenceSet ground_truth_correspondences(const RgbdFrame& f1, const RgbdFrame& f2,
                                               int stride = kDefaultCorrespondenceStride,
                                               double depth_tol = kDefaultDepthTolerance);

// Fraction of f1's valid pixels visibly re-observed in f2. Directional.
double overlap_ratio(const RgbdFrame& f1, const RgbdFrame& f2,
                     double depth_tol = kDefaultDepthTolerance);

}  // namespace mvnet
