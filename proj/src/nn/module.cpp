#include "mvnet/nn/module.hpp"

namespace mvnet::nn {

namespace {
std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}
}  // namespace

template <typename T>
std::vector<NamedParameter<T>> Module<T>::named_parameters(const std::string& prefix) {
  std::vector<NamedParameter<T>> out;
  for (auto* p : params_) out.push_back({join(prefix, p->name), p});
  for (auto& [name, child] : children_) {
    auto sub = child->named_parameters(join(prefix, name));
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> Module<T>::named_buffers(const std::string& prefix) {
  std::vector<NamedBuffer<T>> out;
  for (auto& [name, buf] : buffers_) out.push_back({join(prefix, name), buf, buffer_tag_});
  for (auto& [name, child] : children_) {
    auto sub = child->named_buffers(join(prefix, name));
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

template <typename T>
std::vector<Parameter<T>*> Module<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& np : named_parameters()) out.push_back(np.param);
  return out;
}

template <typename T>
std::size_t Module<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->tensor.numel();
  return n;
}

template <typename T>
void Module<T>::set_training(bool on) {
  training_ = on;
  for (auto& [name, child] : children_) child->set_training(on);
}

template <typename T>
void Module<T>::set_frozen(bool frozen) {
  for (auto* p : parameters()) {
    p->frozen = frozen;
    p->tensor.set_requires_grad(!frozen);
  }
}

template <typename T>
void Module<T>::set_tag(HalfTag tag) {
  for (auto* p : params_) p->tag = tag;
  buffer_tag_ = tag;
  for (auto& [name, child] : children_) child->set_tag(tag);
}

template <typename T>
void Module<T>::zero_grad() {
  for (auto* p : parameters()) p->tensor.zero_grad();
}

template <typename T>
Parameter<T>& Module<T>::add_parameter(Parameter<T>& p, std::string name, Tensor<T> init) {
  p.name = std::move(name);
  p.tensor = std::move(init);
  p.tensor.set_requires_grad(true);
  params_.push_back(&p);
  return p;
}

template <typename T>
void Module<T>::add_buffer(std::vector<T>& buffer, std::string name) {
  buffers_.emplace_back(std::move(name), &buffer);
}

template <typename T>
void Module<T>::add_child(Module& child, std::string name) {
  children_.emplace_back(std::move(name), &child);
}

template <typename T>
void fill_truncated_normal(Tensor<T>& t, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : t.data()) {
    double z = dist(rng);
    while (z < -2.0 || z > 2.0) z = dist(rng);
    v = static_cast<T>(z * stddev);
  }
}

template <typename T>
void fill_normal(Tensor<T>& t, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template class Module<float>;
template class Module<double>;
template void fill_truncated_normal(Tensor<float>&, double, Rng&);
template void fill_truncated_normal(Tensor<double>&, double, Rng&);
template void fill_normal(Tensor<float>&, double, Rng&);
template void fill_normal(Tensor<double>&, double, Rng&);

}  // namespace mvnet::nn
