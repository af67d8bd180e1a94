#include <doctest.h>

#include <random>

#include <Eigen/Geometry>

#include "mvnet/error.hpp"
#include "mvnet/geometry.hpp"
#include "oracles.hpp"

using namespace mvnet;

namespace {

CameraIntrinsics k100() {
  CameraIntrinsics k;
  k.fx = k.fy = 100;
  k.cx = k.cy = 64;
  k.width = k.height = 128;
  return k;
}

CameraExtrinsics random_pose(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  CameraExtrinsics e;
  e.rotation = q.toRotationMatrix();
  e.translation = Eigen::Vector3d(n(rng), n(rng), n(rng));
  return e;
}

}  // namespace

TEST_CASE("project: principal ray and off-axis point") {
  auto p = project({0, 0, 2}, k100(), {});
  CHECK(p.pixel.x() == 64);
  CHECK(p.pixel.y() == 64);
  CHECK(p.depth == 2);
  p = project({0.5, 0, 2}, k100(), {});
  CHECK(p.pixel.x() == doctest::Approx(89));
  CHECK(p.pixel.y() == doctest::Approx(64));
  CHECK(project({0, 0, -1}, k100(), {}).depth == -1);
  CHECK_THROWS_AS(project({std::nan(""), 0, 1}, k100(), {}), Error);
}

TEST_CASE("unproject: identity case and invalid depth") {
  const Eigen::Vector3d p = unproject({64, 64}, 2, k100(), {});
  CHECK((p - Eigen::Vector3d(0, 0, 2)).norm() < 1e-12);
  try {
    unproject({64, 64}, 0, k100(), {});
    FAIL("expected invalid depth");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidDepth);
  }
}

TEST_CASE("project and unproject are mutual inverses under random poses") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  CameraIntrinsics k = k100();
  k.skew = 0.7;
  double max_px = 0, max_m = 0;
  for (int i = 0; i < 10000; ++i) {
    const CameraExtrinsics e = random_pose(rng);
    const Eigen::Vector2d px(u(rng) * 127, u(rng) * 127);
    const double d = 0.1 + 10 * u(rng);
    const Eigen::Vector3d w = unproject(px, d, k, e);
    const auto back = project(w, k, e);
    max_px = std::max(max_px, (back.pixel - px).norm());
    max_m = std::max(max_m, std::abs(back.depth - d));
    const Eigen::Vector3d w2 = unproject(back.pixel, back.depth, k, e);
    max_m = std::max(max_m, (w2 - w).norm());
  }
  CHECK(max_px < 1e-4);
  CHECK(max_m < 1e-6);
}

TEST_CASE("unproject-then-project is pose independent") {
  std::mt19937_64 rng(12);
  const Eigen::Vector2d px(30.25, 90.5);
  for (int i = 0; i < 100; ++i) {
    const auto e = random_pose(rng);
    const auto p = project(unproject(px, 3.0, k100(), e), k100(), e);
    CHECK((p.pixel - px).norm() < 1e-6);
    CHECK(std::abs(p.depth - 3.0) < 1e-6);
  }
}

TEST_CASE("extrinsics validation rejects improper rotations") {
  CameraExtrinsics e;
  e.rotation(0, 0) = -1;  // reflection
  CHECK_THROWS_AS(e.validate(), Error);
  CameraIntrinsics k;
  k.fx = 0;
  CHECK_THROWS_AS(k.validate(), Error);
}

TEST_CASE("identical frames: full overlap and exact identity correspondences") {
  const auto k = oracle::intrinsics(32, 24);
  const auto f = oracle::render("a", k, oracle::room_camera(0.3), oracle::test_room(), oracle::test_boxes());
  CHECK(overlap_ratio(f, f) == 1.0);
  const auto set = ground_truth_correspondences(f, f, 4);
  CHECK(!set.empty());
  for (const auto& p : set.pairs) CHECK(p.x == p.x_gt);
}

TEST_CASE("opposite-facing cameras share nothing") {
  const auto k = oracle::intrinsics(32, 32, 50);
  const auto a = oracle::render("a", k, oracle::room_camera(0.0), oracle::test_room(), {});
  const auto b = oracle::render("b", k, oracle::room_camera(M_PI), oracle::test_room(), {});
  CHECK(overlap_ratio(a, b) == 0.0);
  CHECK(ground_truth_correspondences(a, b, 1).empty());
}

TEST_CASE("overlap of an empty frame is undefined") {
  RgbdFrame f;
  f.intrinsics = oracle::intrinsics(8, 8);
  f.allocate();
  try {
    overlap_ratio(f, f);
    FAIL("expected undefined ratio");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kUndefinedRatio);
  }
}

TEST_CASE("overlap and correspondences match the exhaustive oracle on rendered pairs") {
  const auto k = oracle::intrinsics(32, 24);
  for (int s = 0; s < 6; ++s) {
    const double yaw = 0.4 * s;
    const auto a = oracle::render("a", k, oracle::room_camera(yaw), oracle::test_room(), oracle::test_boxes());
    const auto b = oracle::render("b", k, oracle::room_camera(yaw + 0.35, {0.2, 1.1, -0.3}), oracle::test_room(),
                                  oracle::test_boxes());
    CHECK(overlap_ratio(a, b) == oracle::overlap(a, b, kDefaultDepthTolerance));
    CHECK(overlap_ratio(b, a) == oracle::overlap(b, a, kDefaultDepthTolerance));
    const auto all = oracle::all_correspondences(a, b, kDefaultDepthTolerance);
    const auto dense = ground_truth_correspondences(a, b, 1);
    REQUIRE(dense.size() == all.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
      CHECK(dense.pairs[i].x.x() == all[i].x0);
      CHECK(dense.pairs[i].x.y() == all[i].x1);
      CHECK(dense.pairs[i].x_gt.x() == all[i].g0);
      CHECK(dense.pairs[i].x_gt.y() == all[i].g1);
    }
    std::size_t lattice = 0;
    for (const auto& p : all)
      if (int(std::lround(p.x0 * 32)) % 4 == 0 && int(std::lround(p.x1 * 24)) % 4 == 0) ++lattice;
    CHECK(ground_truth_correspondences(a, b, 4).size() == lattice);
  }
}

TEST_CASE("correspondence coordinates stay in the unit square") {
  const auto k = oracle::intrinsics(24, 24);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int s = 0; s < 20; ++s) {
    const double yaw = 3 * u(rng);
    const auto a = oracle::render("a", k, oracle::room_camera(yaw, {u(rng), 1.2, u(rng)}), oracle::test_room(),
                                  oracle::test_boxes());
    const auto b = oracle::render("b", k, oracle::room_camera(yaw + 0.3 * u(rng), {u(rng), 1.0, u(rng)}),
                                  oracle::test_room(), oracle::test_boxes());
    for (const auto& p : ground_truth_correspondences(a, b, 2).pairs) {
      CHECK(p.x.minCoeff() >= 0);
      CHECK(p.x.maxCoeff() <= 1);
      CHECK(p.x_gt.minCoeff() >= 0);
      CHECK(p.x_gt.maxCoeff() <= 1);
    }
  }
}
