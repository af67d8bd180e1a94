#include "mvnet/pipeline/sampler.hpp"

#include "mvnet/error.hpp"

namespace mvnet::pipeline {

OverlapTable::OverlapTable(std::span<const RgbdFrame> frames, double depth_tol) : n_(frames.size()) {
  values_.assign(n_ * n_, 1.0);
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j)
      if (i != j) values_[i * n_ + j] = overlap_ratio(frames[i], frames[j], depth_tol);
}

OverlapTable::OverlapTable(std::size_t n, std::vector<double> values) : n_(n), values_(std::move(values)) {
  if (values_.size() != n_ * n_) fail(ErrorCode::kShapeMismatch, "overlap table needs n * n values");
}

std::vector<std::size_t> pair_candidates(const OverlapTable& table, std::size_t i, OverlapRange range,
                                         int limit) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < table.size() && int(out.size()) < limit; ++j)
    if (j != i && range.contains(table(i, j))) out.push_back(j);
  return out;
}

FramePair sample_pair(const OverlapTable& table, OverlapRange range, int candidate_views, std::mt19937_64& rng) {
  if (table.size() < 2) fail(ErrorCode::kInvalidInput, "pair sampling needs at least 2 frames");
  const std::size_t i = std::uniform_int_distribution<std::size_t>(0, table.size() - 1)(rng);
  const auto candidates = pair_candidates(table, i, range, candidate_views);
  if (candidates.empty())
    fail(ErrorCode::kNoPair, "frame " + std::to_string(i) + " has no partner with overlap in [" +
                                 std::to_string(range.low) + ", " + std::to_string(range.high) + "]");
  const std::size_t j = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
  return {i, j, table(i, j)};
}

FramePair sample_pair(std::span<const RgbdFrame> frames, OverlapRange range, int candidate_views,
                      std::mt19937_64& rng) {
  return sample_pair(OverlapTable(frames), range, candidate_views, rng);
}

}  // namespace mvnet::pipeline
