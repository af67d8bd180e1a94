#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mvnet/nn/tensor.hpp"

namespace mvnet::nn {

using Rng = std::mt19937_64;

// Which half of the model a parameter belongs to, as recorded in checkpoints.
// Only kEncoder tensors are meant to be transferred to downstream networks.
enum class HalfTag : std::uint8_t {
  kEncoder = 0,
  kDecoder = 1,
  kAuxiliary = 2,
  kOptimizer = 3,
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool frozen = false;
  HalfTag tag = HalfTag::kAuxiliary;
};

template <typename T>
struct NamedParameter {
  std::string path;
  Parameter<T>* param;
};

template <typename T>
struct NamedBuffer {
  std::string path;
  std::vector<T>* data;
  HalfTag tag;
};

// Base of every layer and model. Modules register their parameters, buffers
// and children by reference, so they are neither copyable nor movable.
template <typename T>
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;

  std::vector<NamedParameter<T>> named_parameters(const std::string& prefix = "");
  std::vector<NamedBuffer<T>> named_buffers(const std::string& prefix = "");
  std::vector<Parameter<T>*> parameters();
  std::size_t parameter_count();

  void set_training(bool on);
  bool training() const { return training_; }
  void set_frozen(bool frozen);
  void set_tag(HalfTag tag);
  void zero_grad();

 protected:
  Parameter<T>& add_parameter(Parameter<T>& p, std::string name, Tensor<T> init);
  void add_buffer(std::vector<T>& buffer, std::string name);
  void add_child(Module& child, std::string name);

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<std::pair<std::string, std::vector<T>*>> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
  HalfTag buffer_tag_ = HalfTag::kAuxiliary;
  bool training_ = true;
};

// Initializers.
template <typename T>
void fill_truncated_normal(Tensor<T>& t, double stddev, Rng& rng);
template <typename T>
void fill_normal(Tensor<T>& t, double stddev, Rng& rng);

extern template class Module<float>;
extern template class Module<double>;

}  // namespace mvnet::nn
