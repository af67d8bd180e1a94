#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mvnet/nn/module.hpp"

namespace mvnet::nn {

struct GradCheckOptions {
  double step = 1e-5;
  // 0 checks every entry; otherwise a seeded random subset per tensor.
  std::size_t max_entries_per_tensor = 0;
  bool check_inputs = false;
  // Entries whose one-sided differences disagree (a ReLU kink inside the
  // stencil) are replaced by another sample instead of being compared.
  bool skip_kinks = true;
  std::uint64_t seed = 1234;
};

struct GradCheckEntry {
  std::string name;
  // max|analytic - numeric| / max(|analytic|, |numeric|) over the tensor; the
  // denominator is floored at 1e-3 of the largest magnitude in the check.
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_error() const;
  bool passed(double tolerance) const { return max_error() < tolerance; }
  std::string summary() const;
};

using ForwardFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Compares reverse-mode gradients of L = sum(R * forward(inputs)), with R a
// fixed random tensor, against central finite differences. Inputs are drawn
// from N(0, 1) with the given shapes unless `inputs` is supplied.
GradCheckReport grad_check(const ForwardFn& forward, const std::vector<NamedParameter<double>>& params,
                           const std::vector<Shape>& input_shapes, const GradCheckOptions& options = {},
                           std::vector<Tensor<double>> inputs = {});

GradCheckReport grad_check(Module<double>& module, const ForwardFn& forward, const std::vector<Shape>& input_shapes,
                           const GradCheckOptions& options = {});

}  // namespace mvnet::nn
