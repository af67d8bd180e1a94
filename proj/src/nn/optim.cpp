#include "mvnet/nn/optim.hpp"

#include <cmath>

#include "mvnet/error.hpp"

namespace mvnet::nn {

template <typename T>
void adamw_update(std::span<T> w, std::span<const T> g, std::span<T> m, std::span<T> v, std::uint64_t step,
                  const AdamWConfig& c) {
  if (g.size() != w.size() || m.size() != w.size() || v.size() != w.size()) {
    fail(ErrorCode::kShapeMismatch, "adamw: gradient or moment size differs from parameter size");
  }
  const T lr = T(c.lr);
  const T decay = T(1) - T(c.lr * c.weight_decay);
  const T b1 = T(c.beta1), b2 = T(c.beta2);
  const T corr1 = T(1) - T(std::pow(c.beta1, double(step)));
  const T corr2 = T(1) - T(std::pow(c.beta2, double(step)));
  const T eps = T(c.eps);
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] *= decay;
    m[i] = b1 * m[i] + (T(1) - b1) * g[i];
    v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
    const T mhat = m[i] / corr1;
    const T vhat = v[i] / corr2;
    w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <typename T>
void adamw_step(const std::vector<Parameter<T>*>& params, OptimizerState<T>& state) {
  if (state.first_moment.size() != params.size()) {
    state.first_moment.resize(params.size());
    state.second_moment.resize(params.size());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i]->tensor.numel();
    if (state.first_moment[i].size() != n) {
      state.first_moment[i].assign(n, T(0));
      state.second_moment[i].assign(n, T(0));
    }
  }
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    if (p.frozen) continue;
    auto grad = p.tensor.grad();
    adamw_update<T>(p.tensor.data(), grad, state.first_moment[i], state.second_moment[i], state.step, state.config);
  }
}

template <typename T>
AdamW<T>::AdamW(std::vector<Parameter<T>*> params, AdamWConfig config) : params_(std::move(params)) {
  state_.config = config;
  state_.first_moment.resize(params_.size());
  state_.second_moment.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    state_.first_moment[i].assign(params_[i]->tensor.numel(), T(0));
    state_.second_moment[i].assign(params_[i]->tensor.numel(), T(0));
  }
}

template <typename T>
void AdamW<T>::step() {
  adamw_step(params_, state_);
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto* p : params_) p->tensor.zero_grad();
}

template void adamw_update(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                           std::uint64_t, const AdamWConfig&);
template void adamw_update(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                           std::uint64_t, const AdamWConfig&);
template void adamw_step(const std::vector<Parameter<float>*>&, OptimizerState<float>&);
template void adamw_step(const std::vector<Parameter<double>*>&, OptimizerState<double>&);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace mvnet::nn
