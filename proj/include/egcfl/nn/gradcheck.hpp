#pragma once

#include <functional>
#include <vector>

#include "egcfl/nn/tensor.hpp"

namespace egcfl::nn {

struct GradCheckReport {
  real_t max_rel_err = 0.0;
  int64_t checked = 0;
  bool ok(real_t tol = 1e-3) const { return checked > 0 && max_rel_err <= tol; }
};

// Compares reverse-mode gradients of a scalar loss against central finite
// differences. `loss_builder` must rebuild the graph from the leaves' current
// values on every call. Every element of every leaf is probed unless
// `max_checks_per_leaf` caps it (elements then probed at a fixed stride).
inline GradCheckReport check_gradients(const std::function<Tensor()>& loss_builder,
                                       const std::vector<Tensor>& leaves,
                                       real_t h = 1e-5,
                                       int64_t max_checks_per_leaf = 256) {
  GradCheckReport report;

  for (const auto& leaf : leaves) const_cast<Tensor&>(leaf).zero_grad();
  Tensor loss = loss_builder();
  loss.backward();

  std::vector<std::vector<real_t>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& leaf : leaves) {
    if (!leaf.has_grad())
      analytic.emplace_back(static_cast<size_t>(leaf.size()), 0.0);
    else
      analytic.push_back(leaf.grad_values());
  }

  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor leaf = leaves[li];
    const int64_t n = leaf.size();
    const int64_t stride = std::max<int64_t>(1, n / max_checks_per_leaf);
    for (int64_t j = 0; j < n; j += stride) {
      const real_t orig = leaf.data()[j];
      leaf.data()[j] = orig + h;
      real_t f_plus, f_minus;
      {
        NoGradGuard ng;
        f_plus = loss_builder().item();
        leaf.data()[j] = orig - h;
        f_minus = loss_builder().item();
      }
      leaf.data()[j] = orig;
      const real_t fd = (f_plus - f_minus) / (2.0 * h);
      const real_t a = analytic[li][static_cast<size_t>(j)];
      const real_t denom = std::max({std::fabs(a), std::fabs(fd), real_t(1e-6)});
      report.max_rel_err = std::max(report.max_rel_err, std::fabs(a - fd) / denom);
      ++report.checked;
    }
  }
  return report;
}

}  // namespace egcfl::nn
