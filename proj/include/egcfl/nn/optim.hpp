#pragma once

#include <vector>

#include "egcfl/nn/tensor.hpp"

namespace egcfl::nn {

// Adaptive-moment gradient descent over a fixed parameter list.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, real_t lr = 1e-3, real_t beta1 = 0.9,
                real_t beta2 = 0.999, real_t eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(static_cast<size_t>(params_[i].size()), 0.0);
      v_[i].assign(static_cast<size_t>(params_[i].size()), 0.0);
    }
  }

  void set_lr(real_t lr) { lr_ = lr; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const real_t bc1 = 1.0 - std::pow(beta1_, static_cast<real_t>(t_));
    const real_t bc2 = 1.0 - std::pow(beta2_, static_cast<real_t>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      if (!p.has_grad()) continue;
      const real_t* g = p.grad();
      real_t* x = p.data();
      real_t* m = m_[i].data();
      real_t* v = v_[i].data();
      const int64_t n = p.size();
      for (int64_t j = 0; j < n; ++j) {
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
        const real_t mhat = m[j] / bc1;
        const real_t vhat = v[j] / bc2;
        x[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<real_t>> m_, v_;
  real_t lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace egcfl::nn
