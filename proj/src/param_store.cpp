#include "recon_ood/param_store.hpp"

#include <cmath>

#include "recon_ood/errors.hpp"

namespace recon_ood {

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0)) throw DomainError("adam: learning_rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw DomainError("adam: beta1 must lie in (0,1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw DomainError("adam: beta2 must lie in (0,1)");
  if (!(epsilon > 0.0)) throw DomainError("adam: epsilon must be positive");
}

template <typename T>
Parameter<T>& ParamStore<T>::add(const std::string& name, BasicTensor<T> init) {
  if (params_.contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  Parameter<T> p;
  p.grad = BasicTensor<T>(init.shape());
  p.m = BasicTensor<T>(init.shape());
  p.v = BasicTensor<T>(init.shape());
  p.value = std::move(init);
  return params_.emplace(name, std::move(p)).first->second;
}

template <typename T>
Parameter<T>& ParamStore<T>::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
const Parameter<T>& ParamStore<T>::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
void ParamStore<T>::set_value(const std::string& name, BasicTensor<T> value) {
  auto& p = at(name);
  if (value.shape() != p.value.shape()) {
    throw DimensionError("parameter '" + name + "' expects " + shape_string(p.value.shape()) +
                         ", got " + shape_string(value.shape()));
  }
  p.value = std::move(value);
}

template <typename T>
std::vector<std::string> ParamStore<T>::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(name);
  return out;
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [name, p] : params_) {
    p.grad.fill(T{0});
    p.has_grad = false;
  }
}

template <typename T>
void adam_step(ParamStore<T>& store, const AdamConfig& cfg) {
  cfg.validate();
  bool any = false;
  for (const auto& [name, p] : store.params_) any = any || p.has_grad;
  if (!any) throw ContractError("adam_step called without populated gradients");

  ++store.step_;
  const double t = static_cast<double>(store.step_);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : store.params_) {
    if (!p.has_grad) continue;
    auto value = p.value.data();
    auto grad = p.grad.data();
    auto m = p.m.data();
    auto v = p.v.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / bias1;
      const double v_hat = vi / bias2;
      value[i] = static_cast<T>(value[i] - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
    }
  }
  store.zero_grad();
}

template class ParamStore<float>;
template class ParamStore<double>;
template void adam_step(ParamStore<float>&, const AdamConfig&);
template void adam_step(ParamStore<double>&, const AdamConfig&);

}  // namespace recon_ood
