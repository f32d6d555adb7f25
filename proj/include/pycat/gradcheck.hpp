#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pycat/tensor.hpp"

namespace pycat {

/// Central-difference gradient (f(x+h e_i) - f(x-h e_i)) / 2h of a scalar
/// function. `f` is evaluated with recording suspended and must not keep
/// references to its argument.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

/// Same oracle, perturbing a subset of entries of `param` in place (the
/// parameter is restored afterwards). Returns the derivative per listed entry.
std::vector<double> finite_diff_entries(const std::function<double()>& f, Tensor& param,
                                        const std::vector<int64_t>& entries, double h = 1e-5);

/// ||a - b|| / max(||a||, ||b||, floor); 0 when both are below floor.
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);

struct GradCheckResult {
  std::string name;
  double rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return rel_error < tolerance; }
};

/// Compares backward() of `loss_fn` (built on a fresh tape) against the
/// finite-difference oracle for each probed tensor. When `max_entries` is
/// positive only that many evenly spread entries per tensor are probed.
std::vector<GradCheckResult> check_gradients(const std::function<Tensor()>& loss_fn,
                                             const std::vector<std::pair<std::string, Tensor>>& probes,
                                             double tolerance, double h = 1e-5, int64_t max_entries = 0);

}  // namespace pycat
