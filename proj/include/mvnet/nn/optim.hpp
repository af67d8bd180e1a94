#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mvnet/nn/module.hpp"

namespace mvnet::nn {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct OptimizerState {
  AdamWConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

// One decoupled-weight-decay Adam update of a single tensor at step `step`
// (1-based): w <- w(1 - lr*wd), then the bias-corrected moment step.
template <typename T>
void adamw_update(std::span<T> w, std::span<const T> g, std::span<T> m, std::span<T> v, std::uint64_t step,
                  const AdamWConfig& config);

// Applies one step to every non-frozen parameter using its accumulated grad.
// Frozen parameters are left bitwise unchanged.
template <typename T>
void adamw_step(const std::vector<Parameter<T>*>& params, OptimizerState<T>& state);

template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Parameter<T>*> params, AdamWConfig config);

  void step();
  void zero_grad();
  OptimizerState<T>& state() { return state_; }
  const OptimizerState<T>& state() const { return state_; }
  const std::vector<Parameter<T>*>& params() const { return params_; }

 private:
  std::vector<Parameter<T>*> params_;
  OptimizerState<T> state_;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace mvnet::nn
