#pragma once

#include <string>
#include <vector>

namespace mvnet::pipeline {

inline constexpr double kGradCheckTolerance = 1e-4;

struct GradSuiteEntry {
  std::string module;  // "layers", "encoder3d", "student" or "decoder"
  std::string name;
  double max_error = 0.0;
  double seconds = 0.0;
  bool passed() const { return max_error < kGradCheckTolerance; }
};

std::vector<std::string> gradient_suite_modules();

// Double-precision central-difference checks of every differentiable layer
// and of the composite modules (encoder on a 4^3 grid, student on a 16x16
// input, decoder on an 8x16 context). `module` is one of
// gradient_suite_modules() or "all".
std::vector<GradSuiteEntry> run_gradient_suite(const std::string& module = "all");

}  // namespace mvnet::pipeline
