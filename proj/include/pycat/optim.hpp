#pragma once

#include <span>
#include <vector>

#include "pycat/tensor.hpp"

namespace pycat {

struct AdamOptions {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// Bias-corrected Adam update applied in place to `params`. The state is
/// sized on first use; shapes of params, grads and state must agree.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state,
               const AdamOptions& opts);

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {}

  void step(const Gradients& grads);
  const AdamState& state() const { return state_; }
  AdamOptions& options() { return opts_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions opts_;
  AdamState state_;
};

}  // namespace pycat
