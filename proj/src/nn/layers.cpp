#include "egcfl/nn/layers.hpp"

#include <cmath>

namespace egcfl::nn {

uint64_t ParamMap::checksum() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : params) {
    h = fnv1a(name.data(), name.size(), h);
    h = fnv1a(t.data(), static_cast<size_t>(t.size()) * sizeof(real_t), h);
  }
  for (const auto& [name, buf] : buffers) {
    h = fnv1a(name.data(), name.size(), h);
    h = fnv1a(buf->data(), buf->size() * sizeof(real_t), h);
  }
  return h;
}

Conv2d::Conv2d(int cin, int cout, int ksize, int stride_, int pad_, Activation act_,
               Rng& rng)
    : stride(stride_), pad(pad_), act(act_) {
  if (cin < 1 || cout < 1 || ksize < 1)
    throw InvalidArgument("Conv2d: channel and kernel sizes must be positive");
  weight = Tensor::zeros({cout, cin, ksize, ksize}, true);
  bias = Tensor::zeros({cout}, true);
  const real_t stddev = std::sqrt(2.0 / (static_cast<real_t>(cin) * ksize * ksize));
  rng.fill_normal(weight.data(), static_cast<size_t>(weight.size()), 0.0, stddev);
}

void Conv2d::set_identity() {
  std::fill(weight.values().begin(), weight.values().end(), 0.0);
  std::fill(bias.values().begin(), bias.values().end(), 0.0);
  const int cout = weight.dim(0), cin = weight.dim(1), k = weight.dim(2);
  const int center = (k / 2) * k + k / 2;
  for (int c = 0; c < std::min(cin, cout); ++c)
    weight.data()[(static_cast<int64_t>(c) * cin + c) * k * k + center] = 1.0;
}

Linear::Linear(int fin, int fout, Rng& rng) {
  if (fin < 1 || fout < 1) throw InvalidArgument("Linear: sizes must be positive");
  weight = Tensor::zeros({fout, fin}, true);
  bias = Tensor::zeros({fout}, true);
  const real_t stddev = std::sqrt(2.0 / static_cast<real_t>(fin));
  rng.fill_normal(weight.data(), static_cast<size_t>(weight.size()), 0.0, stddev);
}

BatchNorm2d::BatchNorm2d(int channels) {
  if (channels < 1) throw InvalidArgument("BatchNorm2d: channels must be positive");
  gamma = Tensor::full({channels}, 1.0, true);
  beta = Tensor::zeros({channels}, true);
  state.running_mean.assign(static_cast<size_t>(channels), 0.0);
  state.running_var.assign(static_cast<size_t>(channels), 1.0);
}

}  // namespace egcfl::nn
