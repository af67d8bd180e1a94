#include "mvnet/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mvnet/nn/ops.hpp"

namespace mvnet::nn {

double GradCheckReport::max_error() const {
  double e = 0.0;
  for (const auto& entry : entries) e = std::max(e, entry.max_rel_error);
  return e;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << e.name << ": max rel err " << e.max_rel_error << " over " << e.checked << " entries";
    if (e.skipped) os << " (" << e.skipped << " kinks skipped)";
    os << "\n";
  }
  return os.str();
}

namespace {

struct Target {
  std::string name;
  Tensor<double> tensor;
};

double evaluate(const ForwardFn& forward, const std::vector<Tensor<double>>& inputs, const Tensor<double>& weights) {
  NoGradGuard guard;
  const Tensor<double> out = forward(inputs);
  const auto o = out.data();
  const auto w = weights.data();
  double s = 0.0;
  for (std::size_t i = 0; i < o.size(); ++i) s += o[i] * w[i];
  return s;
}

}  // namespace

GradCheckReport grad_check(const ForwardFn& forward, const std::vector<NamedParameter<double>>& params,
                           const std::vector<Shape>& input_shapes, const GradCheckOptions& options,
                           std::vector<Tensor<double>> inputs) {
  Rng rng(options.seed);
  if (inputs.empty()) {
    for (const auto& s : input_shapes) {
      Tensor<double> t(s);
      fill_normal(t, 1.0, rng);
      inputs.push_back(t);
    }
  }
  for (auto& t : inputs) {
    t.set_requires_grad(options.check_inputs);
    t.zero_grad();
  }

  std::vector<Target> targets;
  for (const auto& np : params) {
    if (np.param->frozen) continue;
    np.param->tensor.set_requires_grad(true);
    np.param->tensor.zero_grad();
    targets.push_back({np.path, np.param->tensor});
  }
  if (options.check_inputs) {
    for (std::size_t i = 0; i < inputs.size(); ++i) targets.push_back({"input" + std::to_string(i), inputs[i]});
  }

  // Analytic pass.
  const Tensor<double> out = forward(inputs);
  Tensor<double> weights(out.shape());
  fill_normal(weights, 1.0, rng);
  sum(mul(out, weights)).backward();

  GradCheckReport report;
  std::vector<std::pair<double, double>> diff_mag;  // per target
  const double h = options.step;
  const double f0 = evaluate(forward, inputs, weights);
  for (auto& target : targets) {
    auto values = target.tensor.data();
    std::vector<double> analytic(target.tensor.grad().begin(), target.tensor.grad().end());
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (options.max_entries_per_tensor > 0) std::shuffle(order.begin(), order.end(), rng);
    const std::size_t want =
        options.max_entries_per_tensor == 0 ? values.size() : std::min(values.size(), options.max_entries_per_tensor);

    GradCheckEntry entry;
    entry.name = target.name;
    double max_diff = 0.0, max_mag = 0.0;
    for (std::size_t idx : order) {
      if (entry.checked >= want) break;
      const double saved = values[idx];
      values[idx] = saved + h;
      const double fp = evaluate(forward, inputs, weights);
      values[idx] = saved - h;
      const double fm = evaluate(forward, inputs, weights);
      values[idx] = saved;
      if (options.skip_kinks) {
        const double fwd = (fp - f0) / h;
        const double bwd = (f0 - fm) / h;
        const double curvature = std::abs(fwd - bwd);
        const double scale = std::max({std::abs(fwd), std::abs(bwd), 1e-8});
        if (curvature > 1e-3 * scale && curvature > 1e-6) {
          ++entry.skipped;
          continue;
        }
      }
      const double numeric = (fp - fm) / (2.0 * h);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[idx]));
      max_mag = std::max({max_mag, std::abs(numeric), std::abs(analytic[idx])});
      ++entry.checked;
    }
    diff_mag.emplace_back(max_diff, max_mag);
    report.entries.push_back(entry);
  }
  // A tensor whose true gradient vanishes (e.g. key biases under softmax)
  // would otherwise compare difference noise against itself.
  double global = 0.0;
  for (const auto& [d, m] : diff_mag) global = std::max(global, m);
  for (std::size_t i = 0; i < diff_mag.size(); ++i) {
    const double denom = std::max(diff_mag[i].second, 1e-3 * global);
    report.entries[i].max_rel_error = denom > 0.0 ? diff_mag[i].first / denom : diff_mag[i].first;
  }
  return report;
}

GradCheckReport grad_check(Module<double>& module, const ForwardFn& forward, const std::vector<Shape>& input_shapes,
                           const GradCheckOptions& options) {
  return grad_check(forward, module.named_parameters(), input_shapes, options);
}

}  // namespace mvnet::nn
