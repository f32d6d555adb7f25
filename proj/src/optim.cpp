#include "pycat/optim.hpp"

#include <cmath>

namespace pycat {

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state,
               const AdamOptions& opts) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: params/grads count mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state does not match params");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape() || static_cast<int64_t>(state.m[i].size()) != params[i].numel()) {
      throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(i) + " " +
                           shape_str(params[i].shape()) + " vs grad " + shape_str(grads[i].shape()));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_values();
    const auto g = grads[i].values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = opts.beta1 * m[j] + (1.0 - opts.beta1) * g[j];
      v[j] = opts.beta2 * v[j] + (1.0 - opts.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= opts.lr * mhat / (std::sqrt(vhat) + opts.eps);
    }
  }
}

void Adam::step(const Gradients& grads) {
  std::vector<Tensor> g;
  g.reserve(params_.size());
  for (const auto& p : params_) g.push_back(grads.of(p));
  adam_step(params_, g, state_, opts_);
}

}  // namespace pycat
