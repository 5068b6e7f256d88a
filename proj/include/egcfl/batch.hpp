#pragma once

#include <vector>

#include "egcfl/nn/tensor.hpp"

namespace egcfl {

// A batch of images as a rank-4 (N, C, H, W) tensor with values in [0, 1],
// paired with integer class labels.
struct ImageBatch {
  nn::Tensor images;
  std::vector<int> labels;

  int count() const { return images.defined() ? images.dim(0) : 0; }

  ImageBatch slice(int begin, int n) const {
    if (begin < 0 || n < 0 || begin + n > count())
      throw InvalidArgument("ImageBatch::slice: range out of bounds");
    const int64_t stride = images.size() / count();
    ImageBatch out;
    nn::Shape s = images.shape();
    s[0] = n;
    out.images = nn::Tensor::zeros(s);
    std::copy_n(images.data() + begin * stride, n * stride, out.images.data());
    out.labels.assign(labels.begin() + begin, labels.begin() + begin + n);
    return out;
  }
};

}  // namespace egcfl
