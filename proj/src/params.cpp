#include "pycat/params.hpp"

#include <cmath>

namespace pycat {

InitSpec InitSpec::he(int64_t fan_in) { return normal(std::sqrt(2.0 / static_cast<double>(fan_in))); }

InitSpec InitSpec::xavier(int64_t fan_in, int64_t fan_out) {
  return normal(std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
}

Tensor ParamStore::create(const std::string& name, Shape shape, InitSpec init, Rng& rng) {
  if (params_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
  std::vector<double> values(shape_numel(shape), init.value);
  if (init.kind == InitSpec::Kind::normal) {
    std::normal_distribution<double> dist(0.0, init.value);
    for (auto& v : values) v = dist(rng);
  }
  Tensor t(std::move(shape), std::move(values), true);
  params_.emplace(name, t);
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<Tensor> ParamStore::parameters() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [_, t] : params_) out.push_back(t);
  return out;
}

int64_t ParamStore::total_size() const {
  int64_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

}  // namespace pycat
