#pragma once

#include <functional>
#include <string>
#include <vector>

namespace pycat {

struct GradSuiteResult {
  std::string module;
  std::string check;  // "operation/probe"
  double rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return rel_error < tolerance; }
};

/// Module names accepted by run_grad_suite, in run order.
const std::vector<std::string>& grad_suite_modules();

/// Central finite-difference checks of every differentiable operation
/// (rel-err < 1e-5) and of a tiny end-to-end PyCAT4 loss (rel-err < 1e-4).
/// An empty `module` runs everything; an unknown one is a ParseError.
std::vector<GradSuiteResult> run_grad_suite(const std::string& module = "",
                                            const std::function<void(const GradSuiteResult&)>& on_result = {});

}  // namespace pycat
