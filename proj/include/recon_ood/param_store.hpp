#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "recon_ood/tensor.hpp"

namespace recon_ood {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  // Throws DomainError unless lr > 0, beta1/beta2 in (0,1), epsilon > 0.
  void validate() const;
};

template <typename T>
struct Parameter {
  BasicTensor<T> value;
  BasicTensor<T> grad;
  BasicTensor<T> m;
  BasicTensor<T> v;
  bool has_grad = false;
};

/// Named trainable tensors with gradient accumulators and Adam moments.
/// Iteration order is lexicographic by name.
template <typename T>
class ParamStore {
 public:
  using Map = std::map<std::string, Parameter<T>>;

  Parameter<T>& add(const std::string& name, BasicTensor<T> init);
  bool contains(const std::string& name) const { return params_.contains(name); }
  Parameter<T>& at(const std::string& name);
  const Parameter<T>& at(const std::string& name) const;
  const BasicTensor<T>& value(const std::string& name) const { return at(name).value; }
  void set_value(const std::string& name, BasicTensor<T> value);

  std::vector<std::string> names() const;
  std::size_t parameter_count() const;
  std::uint64_t step() const noexcept { return step_; }

  void zero_grad();

  typename Map::const_iterator begin() const { return params_.begin(); }
  typename Map::const_iterator end() const { return params_.end(); }

  // Copies parameter values (not gradients or moments) into another precision.
  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, p] : params_) out.add(name, p.value.template cast<U>());
    return out;
  }

 private:
  template <typename U>
  friend void adam_step(ParamStore<U>& store, const AdamConfig& cfg);

  Map params_;
  std::uint64_t step_ = 0;
};

/// Bias-corrected Adam update over every parameter that received a gradient,
/// then zeroes all gradients. Throws ContractError if no gradient was populated.
template <typename T>
void adam_step(ParamStore<T>& store, const AdamConfig& cfg);

}  // namespace recon_ood
