#pragma once

#include <utility>
#include <vector>

#include "egcfl/nn/tensor.hpp"

namespace egcfl::nn {

// Backward rule for the deadzone nonlinearity. The function is flat inside
// [-delta, delta], so the true almost-everywhere derivative is a 0/1 mask;
// the straight-through variant substitutes identity (used by BPDA and by
// defense training).
enum class DeadzoneBackward { kMasked, kStraightThrough };

// Activation fused into conv2d/linear outputs to keep graphs small.
enum class Activation { kNone, kRelu, kLeakyRelu, kSigmoid };

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real_t s);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, real_t slope = 0.2);
Tensor sigmoid(const Tensor& x);
Tensor clamp(const Tensor& x, real_t lo, real_t hi);
Tensor deadzone(const Tensor& x, real_t delta, DeadzoneBackward mode);

// ---- structure ----
// a: (N,Ca,H,W), b: (N,Cb,H,W) -> (N,Ca+Cb,H,W)
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Same element count, new dims (copying).
Tensor reshape(const Tensor& x, const Shape& new_shape);
Tensor reflect_pad2d(const Tensor& x, int top, int bottom, int left, int right);
Tensor crop2d(const Tensor& x, int top, int left, int out_h, int out_w);
Tensor upsample_nearest2x(const Tensor& x);

// ---- neural net primitives ----
// x: (N,Cin,H,W), w: (Cout,Cin,kh,kw), b: (Cout) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
              Activation act = Activation::kNone, real_t leaky_slope = 0.2);
// x: (N,Fin), w: (Fout,Fin), b: (Fout) or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor maxpool2x2(const Tensor& x);
// (N,C,H,W) -> (N,C)
Tensor global_avg_pool(const Tensor& x);

struct BatchNormState {
  std::vector<real_t> running_mean, running_var;
};
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    BatchNormState& state, bool training, real_t momentum = 0.1,
                    real_t eps = 1e-5);

// Blockwise separable orthonormal transform over each (n, c) plane.
// basis1d is a row-major (block x block) orthonormal matrix; inverse applies
// its transpose. H and W must be multiples of block.
Tensor block_transform(const Tensor& x, const std::vector<real_t>& basis1d, int block,
                       bool inverse);

// ---- reductions and losses ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// Sum of squares of all entries.
Tensor sum_sq(const Tensor& x);
// mean over the leading dimension of the per-sample summed squared difference.
Tensor sq_l2_batchmean(const Tensor& a, const Tensor& b);
// logits: (N,K); mean cross-entropy against integer labels.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);
// Sum over samples of max(z_y - max_{j != y} z_j + confidence, 0).
Tensor cw_margin_sum(const Tensor& logits, const std::vector<int>& labels,
                     real_t confidence);
Tensor select_scalar(const Tensor& x, int64_t flat_index);
// Weighted sum of scalar tensors.
Tensor weighted_sum(const std::vector<std::pair<real_t, Tensor>>& terms);

// ---- value-only helpers (no gradients) ----
std::vector<int> argmax_rows(const Tensor& logits);
real_t accuracy(const Tensor& logits, const std::vector<int>& labels);
std::vector<real_t> softmax_rows(const Tensor& logits);

}  // namespace egcfl::nn
