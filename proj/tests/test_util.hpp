#pragma once

#include <gtest/gtest.h>

#include <random>

#include "pycat/gradcheck.hpp"
#include "pycat/tensor.hpp"

namespace pycat::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = true) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Fixed random projection so that gradient checks see a generic upstream gradient.
inline Tensor probe_loss(const Tensor& y, uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Tensor w = random_tensor(y.shape(), rng, 1.0, false);
  return sum(y * w);
}

inline void expect_gradients(const std::function<Tensor()>& loss_fn,
                             const std::vector<std::pair<std::string, Tensor>>& probes, double tol,
                             int64_t max_entries = 0) {
  for (const auto& r : check_gradients(loss_fn, probes, tol, 1e-5, max_entries)) {
    EXPECT_LT(r.rel_error, tol) << r.name;
  }
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

}  // namespace pycat::testing
