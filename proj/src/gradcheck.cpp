#include "pycat/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace pycat {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  NoGradScope no_grad;
  std::vector<double> work(x.values().begin(), x.values().end());
  std::vector<double> grad(work.size());
  for (std::size_t i = 0; i < work.size(); ++i) {
    const double orig = work[i];
    work[i] = orig + h;
    const double fp = f(Tensor(x.shape(), work));
    work[i] = orig - h;
    const double fm = f(Tensor(x.shape(), work));
    work[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(grad));
}

std::vector<double> finite_diff_entries(const std::function<double()>& f, Tensor& param,
                                        const std::vector<int64_t>& entries, double h) {
  NoGradScope no_grad;
  auto v = param.mutable_values();
  std::vector<double> out;
  out.reserve(entries.size());
  for (auto i : entries) {
    const double orig = v[i];
    v[i] = orig + h;
    const double fp = f();
    v[i] = orig - h;
    const double fm = f();
    v[i] = orig;
    out.push_back((fp - fm) / (2.0 * h));
  }
  return out;
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  double diff = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nb)});
  if (denom < floor) return std::sqrt(diff) < floor ? 0.0 : std::sqrt(diff) / floor;
  return std::sqrt(diff) / denom;
}

std::vector<GradCheckResult> check_gradients(const std::function<Tensor()>& loss_fn,
                                             const std::vector<std::pair<std::string, Tensor>>& probes,
                                             double tolerance, double h, int64_t max_entries) {
  Gradients grads;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    grads = tape.backward(loss);
  }
  auto value = [&] { return loss_fn().item(); };
  std::vector<GradCheckResult> results;
  for (auto [name, t] : probes) {
    const int64_t n = t.numel();
    std::vector<int64_t> entries;
    if (max_entries > 0 && n > max_entries) {
      // Evenly spread, offset within each stride so that entries do not align
      // with channel boundaries.
      const int64_t stride = n / max_entries;
      for (int64_t k = 0; k < max_entries; ++k) entries.push_back(k * stride + (k * 7) % stride);
    } else {
      for (int64_t i = 0; i < n; ++i) entries.push_back(i);
    }
    const Tensor analytic = grads.of(t);
    std::vector<double> a;
    for (auto e : entries) a.push_back(analytic.values()[e]);
    const auto numeric = finite_diff_entries(value, t, entries, h);
    results.push_back({name, relative_error(a, numeric), tolerance});
  }
  return results;
}

}  // namespace pycat
