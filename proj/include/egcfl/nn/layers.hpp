#pragma once

#include <string>
#include <vector>

#include "egcfl/nn/ops.hpp"

namespace egcfl::nn {

// Named views of a module's trainable tensors and persistent buffers,
// used by the optimizer, checkpoint IO, and freeze/checksum logic.
struct ParamMap {
  std::vector<std::pair<std::string, Tensor>> params;
  std::vector<std::pair<std::string, std::vector<real_t>*>> buffers;

  void add(const std::string& name, const Tensor& t) { params.emplace_back(name, t); }
  void add_buffer(const std::string& name, std::vector<real_t>* v) {
    buffers.emplace_back(name, v);
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& [n, t] : params) out.push_back(t);
    return out;
  }

  void set_requires_grad(bool rg) const {
    for (const auto& [n, t] : params) const_cast<Tensor&>(t).set_requires_grad(rg);
  }

  void zero_grad() const {
    for (const auto& [n, t] : params) const_cast<Tensor&>(t).zero_grad();
  }

  void clear_grads() const {
    for (const auto& [n, t] : params) const_cast<Tensor&>(t).clear_grad();
  }

  // Hash over parameter and buffer contents; detects accidental updates to
  // frozen networks.
  uint64_t checksum() const;
};

struct Conv2d {
  Tensor weight, bias;
  int stride = 1, pad = 1;
  Activation act = Activation::kNone;
  real_t slope = 0.2;

  Conv2d() = default;
  Conv2d(int cin, int cout, int ksize, int stride_, int pad_, Activation act_, Rng& rng);

  Tensor operator()(const Tensor& x) const {
    return conv2d(x, weight, bias, stride, pad, act, slope);
  }

  // Center-tap kernel mapping input channel c to output channel c, zero
  // elsewhere; used by identity-configured pipelines and tests.
  void set_identity();

  void collect(const std::string& prefix, ParamMap& out) {
    out.add(prefix + ".weight", weight);
    out.add(prefix + ".bias", bias);
  }
};

struct Linear {
  Tensor weight, bias;

  Linear() = default;
  Linear(int fin, int fout, Rng& rng);

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }

  void collect(const std::string& prefix, ParamMap& out) {
    out.add(prefix + ".weight", weight);
    out.add(prefix + ".bias", bias);
  }
};

struct BatchNorm2d {
  Tensor gamma, beta;
  BatchNormState state;
  real_t momentum = 0.1, eps = 1e-5;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);

  Tensor operator()(const Tensor& x, bool training) const {
    return batch_norm2d(x, gamma, beta, const_cast<BatchNormState&>(state), training,
                        momentum, eps);
  }

  void collect(const std::string& prefix, ParamMap& out) {
    out.add(prefix + ".gamma", gamma);
    out.add(prefix + ".beta", beta);
    out.add_buffer(prefix + ".running_mean", &state.running_mean);
    out.add_buffer(prefix + ".running_var", &state.running_var);
  }
};

}  // namespace egcfl::nn
