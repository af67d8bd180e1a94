#pragma once

#include <random>
#include <span>
#include <vector>

#include "mvnet/geometry.hpp"

namespace mvnet::pipeline {

// overlap_ratio(frames[i], frames[j]) for every ordered pair; the diagonal is 1.
class OverlapTable {
 public:
  explicit OverlapTable(std::span<const RgbdFrame> frames, double depth_tol = kDefaultDepthTolerance);
  // Precomputed n x n ratios, row-major.
  OverlapTable(std::size_t n, std::vector<double> values);
  double operator()(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }
  std::size_t size() const { return n_; }

 private:
  std::size_t n_ = 0;
  std::vector<double> values_;
};

struct OverlapRange {
  double low = 0.4;
  double high = 0.8;
  bool contains(double r) const { return r >= low && r <= high; }
};

// Frames j != i with overlap(i, j) in range, in index order, at most `limit`.
std::vector<std::size_t> pair_candidates(const OverlapTable& table, std::size_t i, OverlapRange range,
                                         int limit);

struct FramePair {
  std::size_t first = 0;
  std::size_t second = 0;
  double overlap = 0.0;
};

// Draws f1 uniformly and f2 uniformly among its candidates. Raises
// ErrorCode::kNoPair when f1 has none.
FramePair sample_pair(const OverlapTable& table, OverlapRange range, int candidate_views, std::mt19937_64& rng);
FramePair sample_pair(std::span<const RgbdFrame> frames, OverlapRange range, int candidate_views,
                      std::mt19937_64& rng);

}  // namespace mvnet::pipeline
