#include "mvnet/geometry.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Geometry>

#include "mvnet/error.hpp"
#include "mvnet/parallel.hpp"

namespace mvnet {

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy)) {
    fail(ErrorCode::kInvalidGeometry, "focal lengths must be positive and finite");
  }
  if (!std::isfinite(skew) || !std::isfinite(cx) || !std::isfinite(cy)) {
    fail(ErrorCode::kInvalidGeometry, "intrinsics must be finite");
  }
  if (width < 1 || height < 1) {
    std::ostringstream os;
    os << "resolution must be at least 1x1, got " << width << "x" << height;
    fail(ErrorCode::kInvalidGeometry, os.str());
  }
}

Eigen::Matrix4d CameraExtrinsics::matrix() const {
  Eigen::Matrix4d e = Eigen::Matrix4d::Identity();
  e.topLeftCorner<3, 3>() = rotation;
  e.topRightCorner<3, 1>() = translation;
  return e;
}

Eigen::Vector3d CameraExtrinsics::camera_center() const {
  return -rotation.transpose() * translation;
}

void CameraExtrinsics::validate() const {
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  const double det = rotation.determinant();
  if (!(ortho <= 1e-9) || !(std::abs(det - 1.0) <= 1e-9)) {
    std::ostringstream os;
    os << "rotation is not a proper rotation (|RtR-I|=" << ortho << ", det=" << det << ")";
    fail(ErrorCode::kInvalidGeometry, os.str());
  }
  if (!translation.allFinite()) fail(ErrorCode::kInvalidGeometry, "translation must be finite");
}

CameraExtrinsics CameraExtrinsics::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                           const Eigen::Vector3d& up) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d right = forward.cross(up);
  if (right.norm() < 1e-12) fail(ErrorCode::kInvalidGeometry, "look_at: up is parallel to view direction");
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);
  CameraExtrinsics e;
  e.rotation.row(0) = right.transpose();
  e.rotation.row(1) = down.transpose();
  e.rotation.row(2) = forward.transpose();
  e.translation = -e.rotation * eye;
  return e;
}

std::size_t RgbdFrame::valid_count() const {
  std::size_t n = 0;
  for (auto v : valid) n += v != 0;
  return n;
}

void RgbdFrame::allocate() {
  const std::size_t n = pixel_count();
  rgb.assign(n * 3, 0.0f);
  depth.assign(n, 0.0f);
  valid.assign(n, 0);
}

void RgbdFrame::validate() const {
  intrinsics.validate();
  extrinsics.validate();
  const std::size_t n = pixel_count();
  if (rgb.size() != n * 3 || depth.size() != n || valid.size() != n ||
      (!labels.empty() && labels.size() != n)) {
    fail(ErrorCode::kInvalidInput, "frame '" + frame_id + "' buffers do not match its resolution");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (valid[i] && !(depth[i] > 0.0f && std::isfinite(depth[i]))) {
      fail(ErrorCode::kInvalidInput, "frame '" + frame_id + "' marks a non-positive depth valid");
    }
  }
  for (float c : rgb) {
    if (!(c >= 0.0f && c <= 1.0f)) fail(ErrorCode::kInvalidInput, "frame '" + frame_id + "' color outside [0,1]");
  }
}

Projection project(const Eigen::Vector3d& point, const CameraIntrinsics& intr,
                   const CameraExtrinsics& extr) {
  if (!point.allFinite()) fail(ErrorCode::kInvalidInput, "project: non-finite point");
  const Eigen::Vector3d cam = extr.rotation * point + extr.translation;
  const Eigen::Vector3d h = intr.matrix() * cam;
  Projection p;
  p.depth = cam.z();
  p.pixel = Eigen::Vector2d(h.x() / h.z(), h.y() / h.z());
  return p;
}

Eigen::Vector3d unproject(const Eigen::Vector2d& pixel, double depth, const CameraIntrinsics& intr,
                          const CameraExtrinsics& extr) {
  if (!(depth > 0.0) || !std::isfinite(depth)) {
    std::ostringstream os;
    os << "unproject: depth must be positive, got " << depth;
    fail(ErrorCode::kInvalidDepth, os.str());
  }
  if (!pixel.allFinite() || pixel.x() < -0.5 || pixel.y() < -0.5 || pixel.x() > intr.width - 0.5 ||
      pixel.y() > intr.height - 0.5) {
    fail(ErrorCode::kInvalidInput, "unproject: pixel outside image bounds");
  }
  const double yn = (pixel.y() - intr.cy) / intr.fy;
  const double xn = (pixel.x() - intr.cx - intr.skew * yn) / intr.fx;
  const Eigen::Vector3d cam(xn * depth, yn * depth, depth);
  return extr.rotation.transpose() * (cam - extr.translation);
}

std::pair<int, int> nearest_pixel(const Eigen::Vector2d& pixel) {
  return {static_cast<int>(std::floor(pixel.x() + 0.5)), static_cast<int>(std::floor(pixel.y() + 0.5))};
}

std::optional<std::pair<int, int>> reproject_visible(const RgbdFrame& from, int row, int col,
                                                     const RgbdFrame& to, double depth_tol) {
  const std::size_t idx = from.index(row, col);
  if (!from.valid[idx]) return std::nullopt;
  const Eigen::Vector3d world =
      unproject(Eigen::Vector2d(col, row), from.depth[idx], from.intrinsics, from.extrinsics);
  const Projection p = project(world, to.intrinsics, to.extrinsics);
  if (!(p.depth > 0.0) || !p.pixel.allFinite()) return std::nullopt;
  // Guard the int conversion for points projecting far outside the image.
  if (std::abs(p.pixel.x()) > 1e7 || std::abs(p.pixel.y()) > 1e7) return std::nullopt;
  const auto [u, v] = nearest_pixel(p.pixel);
  if (u < 0 || v < 0 || u >= to.width() || v >= to.height()) return std::nullopt;
  const std::size_t dst = to.index(v, u);
  if (!to.valid[dst]) return std::nullopt;
  if (std::abs(p.depth - static_cast<double>(to.depth[dst])) > depth_tol) return std::nullopt;
  return std::make_pair(u, v);
}

CorrespondenceSet ground_truth_correspondences(const RgbdFrame& f1, const RgbdFrame& f2, int stride,
                                               double depth_tol) {
  if (stride < 1) fail(ErrorCode::kInvalidInput, "correspondence stride must be >= 1");
  CorrespondenceSet out;
  out.source_ids = {f1.frame_id, f2.frame_id};
  out.width = f2.width();
  out.height = f2.height();
  const double w1 = f1.width(), h1 = f1.height();
  const double w2 = f2.width(), h2 = f2.height();
  for (int r = 0; r < f1.height(); r += stride) {
    for (int c = 0; c < f1.width(); c += stride) {
      const auto hit = reproject_visible(f1, r, c, f2, depth_tol);
      if (!hit) continue;
      out.pairs.push_back({Eigen::Vector2d(c / w1, r / h1),
                           Eigen::Vector2d(hit->first / w2, hit->second / h2)});
    }
  }
  return out;
}

double overlap_ratio(const RgbdFrame& f1, const RgbdFrame& f2, double depth_tol) {
  const int h = f1.height(), w = f1.width();
  long long valid = 0, seen = 0;
#pragma omp parallel for reduction(+ : valid, seen) schedule(static) num_threads(kernel_threads())
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!f1.is_valid(r, c)) continue;
      ++valid;
      if (reproject_visible(f1, r, c, f2, depth_tol)) ++seen;
    }
  }
  if (valid == 0) fail(ErrorCode::kUndefinedRatio, "overlap_ratio: frame '" + f1.frame_id + "' has no valid pixels");
  return static_cast<double>(seen) / static_cast<double>(valid);
}

}  // namespace mvnet
