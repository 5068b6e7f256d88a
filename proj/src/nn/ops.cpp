#include "egcfl/nn/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>

namespace egcfl::nn {

namespace {

using MatRM = Eigen::Matrix<real_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

void require(bool cond, const char* msg) {
  if (!cond) throw InvalidArgument(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw InvalidArgument(std::string(op) + ": shape mismatch");
}

using detail::attach;
using detail::recording;

// Elementwise op with gradient factors computed from input and output values.
template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const Tensor& x, Fwd fwd, Bwd bwd_factor) {
  Tensor out = Tensor::zeros(x.shape());
  const real_t* xv = x.data();
  real_t* ov = out.data();
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) ov[i] = fwd(xv[i]);
  if (recording({&x})) {
    auto* xn = x.node().get();
    auto* on = out.node().get();
    attach(out, {x}, [xn, on, bwd_factor]() {
      const int64_t m = static_cast<int64_t>(on->value.size());
      for (int64_t i = 0; i < m; ++i)
        xn->grad[i] += on->grad[i] * bwd_factor(xn->value[i], on->value[i]);
    });
  }
  return out;
}

real_t act_grad_from_output(Activation act, real_t slope, real_t out) {
  switch (act) {
    case Activation::kNone: return 1.0;
    case Activation::kRelu: return out > 0.0 ? 1.0 : 0.0;
    // slope > 0, so the sign of the pre-activation survives.
    case Activation::kLeakyRelu: return out > 0.0 ? 1.0 : (out < 0.0 ? slope : 1.0);
    case Activation::kSigmoid: return out * (1.0 - out);
  }
  return 1.0;
}

void apply_activation(real_t* v, int64_t n, Activation act, real_t slope) {
  switch (act) {
    case Activation::kNone: return;
    case Activation::kRelu:
      for (int64_t i = 0; i < n; ++i) v[i] = v[i] > 0.0 ? v[i] : 0.0;
      return;
    case Activation::kLeakyRelu:
      for (int64_t i = 0; i < n; ++i) v[i] = v[i] > 0.0 ? v[i] : slope * v[i];
      return;
    case Activation::kSigmoid:
      for (int64_t i = 0; i < n; ++i) v[i] = 1.0 / (1.0 + std::exp(-v[i]));
      return;
  }
}

struct ConvDims {
  int n, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  int k() const { return cin * kh * kw; }
  int p() const { return ho * wo; }
};

void im2col(const real_t* src, real_t* dst, const ConvDims& d) {
  int r = 0;
  for (int c = 0; c < d.cin; ++c) {
    const real_t* plane = src + static_cast<int64_t>(c) * d.h * d.w;
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj, ++r) {
        real_t* drow = dst + static_cast<int64_t>(r) * d.p();
        int idx = 0;
        for (int oh = 0; oh < d.ho; ++oh) {
          const int ih = oh * d.stride - d.pad + ki;
          if (ih < 0 || ih >= d.h) {
            for (int ow = 0; ow < d.wo; ++ow) drow[idx++] = 0.0;
            continue;
          }
          const real_t* srow = plane + static_cast<int64_t>(ih) * d.w;
          for (int ow = 0; ow < d.wo; ++ow) {
            const int iw = ow * d.stride - d.pad + kj;
            drow[idx++] = (iw >= 0 && iw < d.w) ? srow[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_accumulate(const real_t* col, real_t* dst, const ConvDims& d) {
  int r = 0;
  for (int c = 0; c < d.cin; ++c) {
    real_t* plane = dst + static_cast<int64_t>(c) * d.h * d.w;
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj, ++r) {
        const real_t* crow = col + static_cast<int64_t>(r) * d.p();
        int idx = 0;
        for (int oh = 0; oh < d.ho; ++oh) {
          const int ih = oh * d.stride - d.pad + ki;
          if (ih < 0 || ih >= d.h) {
            idx += d.wo;
            continue;
          }
          real_t* srow = plane + static_cast<int64_t>(ih) * d.w;
          for (int ow = 0; ow < d.wo; ++ow, ++idx) {
            const int iw = ow * d.stride - d.pad + kj;
            if (iw >= 0 && iw < d.w) srow[iw] += crow[idx];
          }
        }
      }
    }
  }
}

// Y = A * X * A^T over one (block x block) tile; transposed=true applies A^T * X * A.
void transform_block(const real_t* src, real_t* dst, int ld, int block,
                     const real_t* basis, bool transposed, real_t* scratch) {
  CMapRM a(basis, block, block);
  MapRM tmp(scratch, block, block);
  MapRM res(scratch + block * block, block, block);
  for (int i = 0; i < block; ++i)
    for (int j = 0; j < block; ++j) tmp(i, j) = src[i * ld + j];
  if (!transposed)
    res.noalias() = a * tmp * a.transpose();
  else
    res.noalias() = a.transpose() * tmp * a;
  for (int i = 0; i < block; ++i)
    for (int j = 0; j < block; ++j) dst[i * ld + j] = res(i, j);
}

void block_transform_plane(const real_t* src, real_t* dst, int h, int w, int block,
                           const real_t* basis, bool transposed, real_t* scratch) {
  for (int by = 0; by < h; by += block)
    for (int bx = 0; bx < w; bx += block)
      transform_block(src + static_cast<int64_t>(by) * w + bx,
                      dst + static_cast<int64_t>(by) * w + bx, w, block, basis,
                      transposed, scratch);
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (recording({&a, &b})) {
    auto *an = a.node().get(), *bn = b.node().get(), *on = out.node().get();
    attach(out, {a, b}, [an, bn, on]() {
      const int64_t m = static_cast<int64_t>(on->value.size());
      if (an->requires_grad)
        for (int64_t i = 0; i < m; ++i) an->grad[i] += on->grad[i];
      if (bn->requires_grad)
        for (int64_t i = 0; i < m; ++i) bn->grad[i] += on->grad[i];
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (recording({&a, &b})) {
    auto *an = a.node().get(), *bn = b.node().get(), *on = out.node().get();
    attach(out, {a, b}, [an, bn, on]() {
      const int64_t m = static_cast<int64_t>(on->value.size());
      if (an->requires_grad)
        for (int64_t i = 0; i < m; ++i) an->grad[i] += on->grad[i];
      if (bn->requires_grad)
        for (int64_t i = 0; i < m; ++i) bn->grad[i] -= on->grad[i];
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (recording({&a, &b})) {
    auto *an = a.node().get(), *bn = b.node().get(), *on = out.node().get();
    attach(out, {a, b}, [an, bn, on]() {
      const int64_t m = static_cast<int64_t>(on->value.size());
      if (an->requires_grad)
        for (int64_t i = 0; i < m; ++i) an->grad[i] += on->grad[i] * bn->value[i];
      if (bn->requires_grad)
        for (int64_t i = 0; i < m; ++i) bn->grad[i] += on->grad[i] * an->value[i];
    });
  }
  return out;
}

Tensor scale(const Tensor& a, real_t s) {
  return unary_elementwise(
      a, [s](real_t x) { return s * x; },
      [s](real_t, real_t) { return s; });
}

Tensor relu(const Tensor& x) {
  return unary_elementwise(
      x, [](real_t v) { return v > 0.0 ? v : 0.0; },
      [](real_t in, real_t) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, real_t slope) {
  return unary_elementwise(
      x, [slope](real_t v) { return v > 0.0 ? v : slope * v; },
      [slope](real_t in, real_t) { return in > 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      x, [](real_t v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](real_t, real_t out) { return out * (1.0 - out); });
}

Tensor clamp(const Tensor& x, real_t lo, real_t hi) {
  require(lo <= hi, "clamp: lo must not exceed hi");
  return unary_elementwise(
      x, [lo, hi](real_t v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](real_t in, real_t) { return (in >= lo && in <= hi) ? 1.0 : 0.0; });
}

Tensor deadzone(const Tensor& x, real_t delta, DeadzoneBackward mode) {
  require(delta >= 0.0, "deadzone: delta must be nonnegative");
  if (mode == DeadzoneBackward::kStraightThrough) {
    return unary_elementwise(
        x, [delta](real_t v) { return std::fabs(v) <= delta ? 0.0 : v; },
        [](real_t, real_t) { return 1.0; });
  }
  return unary_elementwise(
      x, [delta](real_t v) { return std::fabs(v) <= delta ? 0.0 : v; },
      [delta](real_t in, real_t) { return std::fabs(in) > delta ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.ndim() == 4 && b.ndim() == 4, "concat_channels: expects 4-d tensors");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: N/H/W mismatch");
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
  const int64_t plane = static_cast<int64_t>(h) * w;
  Tensor out = Tensor::zeros({n, ca + cb, h, w});
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * ca * plane, ca * plane,
                out.data() + static_cast<int64_t>(i) * (ca + cb) * plane);
    std::copy_n(b.data() + i * cb * plane, cb * plane,
                out.data() + static_cast<int64_t>(i) * (ca + cb) * plane + ca * plane);
  }
  if (recording({&a, &b})) {
    auto *an = a.node().get(), *bn = b.node().get(), *on = out.node().get();
    attach(out, {a, b}, [an, bn, on, n, ca, cb, plane]() {
      for (int i = 0; i < n; ++i) {
        const real_t* g = on->grad.data() + static_cast<int64_t>(i) * (ca + cb) * plane;
        if (an->requires_grad) {
          real_t* ga = an->grad.data() + i * ca * plane;
          for (int64_t j = 0; j < ca * plane; ++j) ga[j] += g[j];
        }
        if (bn->requires_grad) {
          real_t* gb = bn->grad.data() + i * cb * plane;
          for (int64_t j = 0; j < cb * plane; ++j) gb[j] += g[ca * plane + j];
        }
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, const Shape& new_shape) {
  if (numel(new_shape) != x.size())
    throw InvalidArgument("reshape: element count mismatch");
  Tensor out = Tensor::from_data(new_shape, x.values());
  if (recording({&x})) {
    auto *xn = x.node().get(), *on = out.node().get();
    attach(out, {x}, [xn, on]() {
      const int64_t m = static_cast<int64_t>(on->value.size());
      for (int64_t i = 0; i < m; ++i) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

namespace {
// Mirror-without-edge-repeat index: valid for 0 < pad < extent.
inline int reflect_index(int i, int extent) {
  if (i < 0) return -i;
  if (i >= extent) return 2 * extent - 2 - i;
  return i;
}
}  // namespace

Tensor reflect_pad2d(const Tensor& x, int top, int bottom, int left, int right) {
  require(x.ndim() == 4, "reflect_pad2d: expects 4-d tensor");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(top >= 0 && bottom >= 0 && left >= 0 && right >= 0,
          "reflect_pad2d: negative pad");
  require(top < h && bottom < h && left < w && right < w,
          "reflect_pad2d: pad must be smaller than the image extent");
  const int oh = h + top + bottom, ow = w + left + right;
  Tensor out = Tensor::zeros({n, c, oh, ow});
  for (int i = 0; i < n * c; ++i) {
    const real_t* src = x.data() + static_cast<int64_t>(i) * h * w;
    real_t* dst = out.data() + static_cast<int64_t>(i) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const int sy = reflect_index(y - top, h);
      for (int xx = 0; xx < ow; ++xx)
        dst[y * ow + xx] = src[sy * w + reflect_index(xx - left, w)];
    }
  }
  if (recording({&x})) {
    auto *xn = x.node().get(), *on = out.node().get();
    attach(out, {x}, [xn, on, n, c, h, w, oh, ow, top, left]() {
      for (int i = 0; i < n * c; ++i) {
        real_t* gx = xn->grad.data() + static_cast<int64_t>(i) * h * w;
        const real_t* g = on->grad.data() + static_cast<int64_t>(i) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          const int sy = reflect_index(y - top, h);
          for (int xx = 0; xx < ow; ++xx)
            gx[sy * w + reflect_index(xx - left, w)] += g[y * ow + xx];
        }
      }
    });
  }
  return out;
}

Tensor crop2d(const Tensor& x, int top, int left, int out_h, int out_w) {
  require(x.ndim() == 4, "crop2d: expects 4-d tensor");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(top >= 0 && left >= 0 && top + out_h <= h && left + out_w <= w,
          "crop2d: window out of range");
  Tensor out = Tensor::zeros({n, c, out_h, out_w});
  for (int i = 0; i < n * c; ++i) {
    const real_t* src = x.data() + static_cast<int64_t>(i) * h * w;
    real_t* dst = out.data() + static_cast<int64_t>(i) * out_h * out_w;
    for (int y = 0; y < out_h; ++y)
      std::copy_n(src + (top + y) * w + left, out_w, dst + y * out_w);
  }
  if (recording({&x})) {
    auto *xn = x.node().get(), *on = out.node().get();
    attach(out, {x}, [xn, on, n, c, h, w, out_h, out_w, top, left]() {
      for (int i = 0; i < n * c; ++i) {
        real_t* gx = xn->grad.data() + static_cast<int64_t>(i) * h * w;
        const real_t* g = on->grad.data() + static_cast<int64_t>(i) * out_h * out_w;
        for (int y = 0; y < out_h; ++y)
          for (int xx = 0; xx < out_w; ++xx)
            gx[(top + y) * w + left + xx] += g[y * out_w + xx];
      }
    });
  }
  return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
  require(x.ndim() == 4, "upsample_nearest2x: expects 4-d tensor");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out = Tensor::zeros({n, c, 2 * h, 2 * w});
  for (int i = 0; i < n * c; ++i) {
    const real_t* src = x.data() + static_cast<int64_t>(i) * h * w;
    real_t* dst = out.data() + static_cast<int64_t>(i) * 4 * h * w;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        const real_t v = src[y * w + xx];
        real_t* d = dst + (2 * y) * 2 * w + 2 * xx;
        d[0] = v;
        d[1] = v;
        d[2 * w] = v;
        d[2 * w + 1] = v;
      }
  }
  if (recording({&x})) {
    auto *xn = x.node().get(), *on = out.node().get();
    attach(out, {x}, [xn, on, n, c, h, w]() {
      for (int i = 0; i < n * c; ++i) {
        real_t* gx = xn->grad.data() + static_cast<int64_t>(i) * h * w;
        const real_t* g = on->grad.data() + static_cast<int64_t>(i) * 4 * h * w;
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            const real_t* s = g + (2 * y) * 2 * w + 2 * xx;
            gx[y * w + xx] += s[0] + s[1] + s[2 * w] + s[2 * w + 1];
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Neural net primitives
// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
              Activation act, real_t leaky_slope) {
  require(x.ndim() == 4 && w.ndim() == 4, "conv2d: expects 4-d input and weight");
  require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  ConvDims d;
  d.n = x.dim(0);
  d.cin = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.cout = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  if (w.dim(1) != d.cin)
    throw InvalidArgument("conv2d: input channel count does not match weight");
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  require(d.ho > 0 && d.wo > 0, "conv2d: kernel larger than padded input");
  const bool has_bias = b.defined();
  if (has_bias) require(b.size() == d.cout, "conv2d: bias size mismatch");

  Tensor out = Tensor::zeros({d.n, d.cout, d.ho, d.wo});
  {
    std::vector<real_t> col(static_cast<size_t>(d.k()) * d.p());
    CMapRM wm(w.data(), d.cout, d.k());
    for (int i = 0; i < d.n; ++i) {
      im2col(x.data() + static_cast<int64_t>(i) * d.cin * d.h * d.w, col.data(), d);
      MapRM om(out.data() + static_cast<int64_t>(i) * d.cout * d.p(), d.cout, d.p());
      om.noalias() = wm * CMapRM(col.data(), d.k(), d.p());
      if (has_bias)
        for (int cc = 0; cc < d.cout; ++cc) om.row(cc).array() += b.data()[cc];
    }
  }
  apply_activation(out.data(), out.size(), act, leaky_slope);

  if (recording({&x, &w, &b})) {
    auto* xn = x.node().get();
    auto* wn = w.node().get();
    auto* bn = has_bias ? b.node().get() : nullptr;
    auto* on = out.node().get();
    std::vector<Tensor> parents = {x, w};
    if (has_bias) parents.push_back(b);
    attach(out, std::move(parents), [xn, wn, bn, on, d, act, leaky_slope]() {
      const int64_t total = static_cast<int64_t>(on->value.size());
      std::vector<real_t> dpre;
      const real_t* dout = on->grad.data();
      if (act != Activation::kNone) {
        dpre.resize(static_cast<size_t>(total));
        for (int64_t i = 0; i < total; ++i)
          dpre[i] = on->grad[i] * act_grad_from_output(act, leaky_slope, on->value[i]);
        dout = dpre.data();
      }
      CMapRM wm(wn->value.data(), d.cout, d.k());
      const bool need_dx = xn->requires_grad;
      const bool need_dw = wn->requires_grad;
      const bool need_db = bn != nullptr && bn->requires_grad;
      std::vector<real_t> col;
      std::vector<real_t> dcol;
      if (need_dw) col.resize(static_cast<size_t>(d.k()) * d.p());
      if (need_dx) dcol.resize(static_cast<size_t>(d.k()) * d.p());
      for (int i = 0; i < d.n; ++i) {
        CMapRM dm(dout + static_cast<int64_t>(i) * d.cout * d.p(), d.cout, d.p());
        if (need_dw) {
          im2col(xn->value.data() + static_cast<int64_t>(i) * d.cin * d.h * d.w,
                 col.data(), d);
          MapRM gw(wn->grad.data(), d.cout, d.k());
          gw.noalias() += dm * CMapRM(col.data(), d.k(), d.p()).transpose();
        }
        if (need_db) {
          // sequential sum: Eigen's redux order depends on buffer alignment,
          // which would break bit reproducibility across runs
          for (int cc = 0; cc < d.cout; ++cc) {
            const real_t* row = dout + (static_cast<int64_t>(i) * d.cout + cc) * d.p();
            real_t s = 0.0;
            for (int j = 0; j < d.p(); ++j) s += row[j];
            bn->grad[cc] += s;
          }
        }
        if (need_dx) {
          MapRM dc(dcol.data(), d.k(), d.p());
          dc.noalias() = wm.transpose() * dm;
          col2im_accumulate(dcol.data(),
                            xn->grad.data() + static_cast<int64_t>(i) * d.cin * d.h * d.w,
                            d);
        }
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.ndim() == 2 && w.ndim() == 2, "linear: expects 2-d input and weight");
  const int n = x.dim(0), fin = x.dim(1), fout = w.dim(0);
  require(w.dim(1) == fin, "linear: weight shape mismatch");
  const bool has_bias = b.defined();
  if (has_bias) require(b.size() == fout, "linear: bias size mismatch");

  Tensor out = Tensor::zeros({n, fout});
  {
    CMapRM xm(x.data(), n, fin), wm(w.data(), fout, fin);
    MapRM om(out.data(), n, fout);
    om.noalias() = xm * wm.transpose();
    if (has_bias)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < fout; ++j) om(i, j) += b.data()[j];
  }
  if (recording({&x, &w, &b})) {
    auto* xn = x.node().get();
    auto* wn = w.node().get();
    auto* bn = has_bias ? b.node().get() : nullptr;
    auto* on = out.node().get();
    std::vector<Tensor> parents = {x, w};
    if (has_bias) parents.push_back(b);
    attach(out, std::move(parents), [xn, wn, bn, on, n, fin, fout]() {
      CMapRM g(on->grad.data(), n, fout);
      CMapRM xm(xn->value.data(), n, fin), wm(wn->value.data(), fout, fin);
      if (xn->requires_grad) {
        MapRM gx(xn->grad.data(), n, fin);
        gx.noalias() += g * wm;
      }
      if (wn->requires_grad) {
        MapRM gw(wn->grad.data(), fout, fin);
        gw.noalias() += g.transpose() * xm;
      }
      if (bn && bn->requires_grad)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < fout; ++j) bn->grad[j] += g(i, j);
    });
  }
  return out;
}

Tensor maxpool2x2(const Tensor& x) {
  require(x.ndim() == 4, "maxpool2x2: expects 4-d tensor");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h % 2 == 0 && w % 2 == 0, "maxpool2x2: spatial dims must be even");
  const int oh = h / 2, ow = w / 2;
  Tensor out = Tensor::zeros({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  for (int i = 0; i < n * c; ++i) {
    const real_t* src = x.data() + static_cast<int64_t>(i) * h * w;
    real_t* dst = out.data() + static_cast<int64_t>(i) * oh * ow;
    int64_t* am = argmax->data() + static_cast<int64_t>(i) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        const int64_t base = static_cast<int64_t>(2 * y) * w + 2 * xx;
        int64_t best = base;
        real_t bv = src[base];
        for (int64_t off : {static_cast<int64_t>(1), static_cast<int64_t>(w),
                            static_cast<int64_t>(w + 1)}) {
          if (src[base + off] > bv) {
            bv = src[base + off];
            best = base + off;
          }
        }
        dst[y * ow + xx] = bv;
        am[y * ow + xx] = static_cast<int64_t>(i) * h * w + best;
      }
  }
  if (recording({&x})) {
    auto *xn = x.node().get(), *on = out.node().get();
    attach(out, {x}, [xn, on, argmax]() {
      const int64_t m = static_cast<int64_t>(on->value.size());
      for (int64_t i = 0; i < m; ++i) xn->grad[(*argmax)[i]] += on->grad[i];
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  require(x.ndim() == 4, "global_avg_pool: expects 4-d tensor");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t plane = static_cast<int64_t>(h) * w;
  Tensor out = Tensor::zeros({n, c});
  for (int i = 0; i < n * c; ++i) {
    const real_t* src = x.data() + i * plane;
    real_t s = 0.0;
    for (int64_t j = 0; j < plane; ++j) s += src[j];
    out.data()[i] = s / static_cast<real_t>(plane);
  }
  if (recording({&x})) {
    auto *xn = x.node().get(), *on = out.node().get();
    attach(out, {x}, [xn, on, n, c, plane]() {
      for (int i = 0; i < n * c; ++i) {
        const real_t g = on->grad[i] / static_cast<real_t>(plane);
        real_t* gx = xn->grad.data() + i * plane;
        for (int64_t j = 0; j < plane; ++j) gx[j] += g;
      }
    });
  }
  return out;
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    BatchNormState& state, bool training, real_t momentum, real_t eps) {
  require(x.ndim() == 4, "batch_norm2d: expects 4-d tensor");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(gamma.size() == c && beta.size() == c, "batch_norm2d: affine size mismatch");
  if (state.running_mean.empty()) {
    state.running_mean.assign(static_cast<size_t>(c), 0.0);
    state.running_var.assign(static_cast<size_t>(c), 1.0);
  }
  require(static_cast<int>(state.running_mean.size()) == c,
          "batch_norm2d: state channel mismatch");

  const int64_t plane = static_cast<int64_t>(h) * w;
  const int64_t m = static_cast<int64_t>(n) * plane;
  auto mean = std::make_shared<std::vector<real_t>>(c, 0.0);
  auto invstd = std::make_shared<std::vector<real_t>>(c, 0.0);
  if (training) {
    for (int cc = 0; cc < c; ++cc) {
      real_t s = 0.0, s2 = 0.0;
      for (int i = 0; i < n; ++i) {
        const real_t* src = x.data() + (static_cast<int64_t>(i) * c + cc) * plane;
        for (int64_t j = 0; j < plane; ++j) {
          s += src[j];
          s2 += src[j] * src[j];
        }
      }
      const real_t mu = s / static_cast<real_t>(m);
      const real_t var = std::max(s2 / static_cast<real_t>(m) - mu * mu, 0.0);
      (*mean)[cc] = mu;
      (*invstd)[cc] = 1.0 / std::sqrt(var + eps);
      state.running_mean[cc] = (1.0 - momentum) * state.running_mean[cc] + momentum * mu;
      state.running_var[cc] = (1.0 - momentum) * state.running_var[cc] + momentum * var;
    }
  } else {
    for (int cc = 0; cc < c; ++cc) {
      (*mean)[cc] = state.running_mean[cc];
      (*invstd)[cc] = 1.0 / std::sqrt(state.running_var[cc] + eps);
    }
  }

  Tensor out = Tensor::zeros(x.shape());
  for (int i = 0; i < n; ++i)
    for (int cc = 0; cc < c; ++cc) {
      const real_t* src = x.data() + (static_cast<int64_t>(i) * c + cc) * plane;
      real_t* dst = out.data() + (static_cast<int64_t>(i) * c + cc) * plane;
      const real_t mu = (*mean)[cc], is = (*invstd)[cc];
      const real_t g = gamma.data()[cc], bb = beta.data()[cc];
      for (int64_t j = 0; j < plane; ++j) dst[j] = (src[j] - mu) * is * g + bb;
    }

  if (recording({&x, &gamma, &beta})) {
    auto* xn = x.node().get();
    auto* gn = gamma.node().get();
    auto* bn = beta.node().get();
    auto* on = out.node().get();
    attach(out, {x, gamma, beta},
           [xn, gn, bn, on, mean, invstd, n, c, plane, m, training]() {
             for (int cc = 0; cc < c; ++cc) {
               const real_t mu = (*mean)[cc], is = (*invstd)[cc];
               real_t sum_dy = 0.0, sum_dy_xhat = 0.0;
               for (int i = 0; i < n; ++i) {
                 const int64_t off = (static_cast<int64_t>(i) * c + cc) * plane;
                 const real_t* dy = on->grad.data() + off;
                 const real_t* xv = xn->value.data() + off;
                 for (int64_t j = 0; j < plane; ++j) {
                   sum_dy += dy[j];
                   sum_dy_xhat += dy[j] * (xv[j] - mu) * is;
                 }
               }
               if (gn->requires_grad) gn->grad[cc] += sum_dy_xhat;
               if (bn->requires_grad) bn->grad[cc] += sum_dy;
               if (!xn->requires_grad) continue;
               const real_t g = gn->value[cc];
               if (training) {
                 const real_t inv_m = 1.0 / static_cast<real_t>(m);
                 for (int i = 0; i < n; ++i) {
                   const int64_t off = (static_cast<int64_t>(i) * c + cc) * plane;
                   const real_t* dy = on->grad.data() + off;
                   const real_t* xv = xn->value.data() + off;
                   real_t* gx = xn->grad.data() + off;
                   for (int64_t j = 0; j < plane; ++j) {
                     const real_t xhat = (xv[j] - mu) * is;
                     gx[j] += g * is * (dy[j] - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat);
                   }
                 }
               } else {
                 for (int i = 0; i < n; ++i) {
                   const int64_t off = (static_cast<int64_t>(i) * c + cc) * plane;
                   const real_t* dy = on->grad.data() + off;
                   real_t* gx = xn->grad.data() + off;
                   for (int64_t j = 0; j < plane; ++j) gx[j] += dy[j] * g * is;
                 }
               }
             }
           });
  }
  return out;
}

Tensor block_transform(const Tensor& x, const std::vector<real_t>& basis1d, int block,
                       bool inverse) {
  require(x.ndim() == 4, "block_transform: expects 4-d tensor");
  require(block >= 1, "block_transform: block must be positive");
  require(static_cast<int>(basis1d.size()) == block * block,
          "block_transform: basis size mismatch");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % block != 0 || w % block != 0)
    throw InvalidArgument("block_transform: spatial dims must be multiples of block");

  Tensor out = Tensor::zeros(x.shape());
  {
    std::vector<real_t> scratch(static_cast<size_t>(2 * block * block));
    for (int i = 0; i < n * c; ++i)
      block_transform_plane(x.data() + static_cast<int64_t>(i) * h * w,
                            out.data() + static_cast<int64_t>(i) * h * w, h, w, block,
                            basis1d.data(), inverse, scratch.data());
  }
  if (recording({&x})) {
    auto *xn = x.node().get(), *on = out.node().get();
    auto basis = std::make_shared<std::vector<real_t>>(basis1d);
    attach(out, {x}, [xn, on, basis, n, c, h, w, block, inverse]() {
      // The op is linear; its adjoint is the transposed transform.
      std::vector<real_t> scratch(static_cast<size_t>(2 * block * block));
      std::vector<real_t> tmp(static_cast<size_t>(h) * w);
      for (int i = 0; i < n * c; ++i) {
        block_transform_plane(on->grad.data() + static_cast<int64_t>(i) * h * w,
                              tmp.data(), h, w, block, basis->data(), !inverse,
                              scratch.data());
        real_t* gx = xn->grad.data() + static_cast<int64_t>(i) * h * w;
        for (int64_t j = 0; j < static_cast<int64_t>(h) * w; ++j) gx[j] += tmp[j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
  real_t s = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) s += x.data()[i];
  Tensor out = Tensor::scalar(s);
  if (recording({&x})) {
    auto *xn = x.node().get(), *on = out.node().get();
    attach(out, {x}, [xn, on]() {
      const real_t g = on->grad[0];
      for (auto& gi : xn->grad) gi += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  require(x.size() > 0, "mean_all: empty tensor");
  const real_t inv = 1.0 / static_cast<real_t>(x.size());
  real_t s = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) s += x.data()[i];
  Tensor out = Tensor::scalar(s * inv);
  if (recording({&x})) {
    auto *xn = x.node().get(), *on = out.node().get();
    attach(out, {x}, [xn, on, inv]() {
      const real_t g = on->grad[0] * inv;
      for (auto& gi : xn->grad) gi += g;
    });
  }
  return out;
}

Tensor sum_sq(const Tensor& x) {
  real_t s = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) s += x.data()[i] * x.data()[i];
  Tensor out = Tensor::scalar(s);
  if (recording({&x})) {
    auto *xn = x.node().get(), *on = out.node().get();
    attach(out, {x}, [xn, on]() {
      const real_t g = 2.0 * on->grad[0];
      const int64_t m = static_cast<int64_t>(xn->value.size());
      for (int64_t i = 0; i < m; ++i) xn->grad[i] += g * xn->value[i];
    });
  }
  return out;
}

Tensor sq_l2_batchmean(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sq_l2_batchmean");
  require(a.ndim() >= 1 && a.dim(0) >= 1, "sq_l2_batchmean: empty batch");
  const real_t inv_n = 1.0 / static_cast<real_t>(a.dim(0));
  real_t s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const real_t d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  Tensor out = Tensor::scalar(s * inv_n);
  if (recording({&a, &b})) {
    auto *an = a.node().get(), *bn = b.node().get(), *on = out.node().get();
    attach(out, {a, b}, [an, bn, on, inv_n]() {
      const real_t g = 2.0 * on->grad[0] * inv_n;
      const int64_t m = static_cast<int64_t>(an->value.size());
      for (int64_t i = 0; i < m; ++i) {
        const real_t d = g * (an->value[i] - bn->value[i]);
        if (an->requires_grad) an->grad[i] += d;
        if (bn->requires_grad) bn->grad[i] -= d;
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require(logits.ndim() == 2, "softmax_cross_entropy: logits must be 2-d");
  const int n = logits.dim(0), k = logits.dim(1);
  require(static_cast<int>(labels.size()) == n,
          "softmax_cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= k)
      throw InvalidArgument("softmax_cross_entropy: label out of range");

  auto probs = std::make_shared<std::vector<real_t>>(static_cast<size_t>(n) * k);
  real_t loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const real_t* z = logits.data() + static_cast<int64_t>(i) * k;
    real_t zmax = z[0];
    for (int j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
    real_t denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
    const real_t log_denom = std::log(denom);
    loss += log_denom + zmax - z[labels[static_cast<size_t>(i)]];
    real_t* p = probs->data() + static_cast<int64_t>(i) * k;
    for (int j = 0; j < k; ++j) p[j] = std::exp(z[j] - zmax) / denom;
  }
  Tensor out = Tensor::scalar(loss / static_cast<real_t>(n));
  if (recording({&logits})) {
    auto *ln = logits.node().get(), *on = out.node().get();
    auto lab = std::make_shared<std::vector<int>>(labels);
    attach(out, {logits}, [ln, on, probs, lab, n, k]() {
      const real_t g = on->grad[0] / static_cast<real_t>(n);
      for (int i = 0; i < n; ++i) {
        const real_t* p = probs->data() + static_cast<int64_t>(i) * k;
        real_t* gz = ln->grad.data() + static_cast<int64_t>(i) * k;
        const int y = (*lab)[static_cast<size_t>(i)];
        for (int j = 0; j < k; ++j) gz[j] += g * (p[j] - (j == y ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

Tensor cw_margin_sum(const Tensor& logits, const std::vector<int>& labels,
                     real_t confidence) {
  require(logits.ndim() == 2, "cw_margin_sum: logits must be 2-d");
  const int n = logits.dim(0), k = logits.dim(1);
  require(k >= 2, "cw_margin_sum: needs at least two classes");
  require(static_cast<int>(labels.size()) == n, "cw_margin_sum: label count mismatch");

  struct Active {
    int sample, label, runner_up;
  };
  auto active = std::make_shared<std::vector<Active>>();
  real_t total = 0.0;
  for (int i = 0; i < n; ++i) {
    const real_t* z = logits.data() + static_cast<int64_t>(i) * k;
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= k) throw InvalidArgument("cw_margin_sum: label out of range");
    int best = -1;
    for (int j = 0; j < k; ++j) {
      if (j == y) continue;
      if (best < 0 || z[j] > z[best]) best = j;
    }
    const real_t margin = z[y] - z[best] + confidence;
    if (margin > 0.0) {
      total += margin;
      active->push_back({i, y, best});
    }
  }
  Tensor out = Tensor::scalar(total);
  if (recording({&logits})) {
    auto *ln = logits.node().get(), *on = out.node().get();
    attach(out, {logits}, [ln, on, active, k]() {
      const real_t g = on->grad[0];
      for (const auto& a : *active) {
        ln->grad[static_cast<int64_t>(a.sample) * k + a.label] += g;
        ln->grad[static_cast<int64_t>(a.sample) * k + a.runner_up] -= g;
      }
    });
  }
  return out;
}

Tensor select_scalar(const Tensor& x, int64_t flat_index) {
  require(flat_index >= 0 && flat_index < x.size(), "select_scalar: index out of range");
  Tensor out = Tensor::scalar(x.data()[flat_index]);
  if (recording({&x})) {
    auto *xn = x.node().get(), *on = out.node().get();
    attach(out, {x}, [xn, on, flat_index]() { xn->grad[flat_index] += on->grad[0]; });
  }
  return out;
}

Tensor weighted_sum(const std::vector<std::pair<real_t, Tensor>>& terms) {
  require(!terms.empty(), "weighted_sum: empty term list");
  real_t s = 0.0;
  bool rec = false;
  for (const auto& [wt, t] : terms) {
    require(t.size() == 1, "weighted_sum: terms must be scalar");
    s += wt * t.item();
    rec = rec || recording({&t});
  }
  Tensor out = Tensor::scalar(s);
  if (rec) {
    std::vector<Tensor> parents;
    std::vector<std::pair<real_t, detail::Node*>> edges;
    for (const auto& [wt, t] : terms) {
      parents.push_back(t);
      edges.emplace_back(wt, t.node().get());
    }
    auto* on = out.node().get();
    attach(out, std::move(parents), [on, edges]() {
      for (const auto& [wt, node] : edges)
        if (node->requires_grad) node->grad[0] += wt * on->grad[0];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Value-only helpers
// ---------------------------------------------------------------------------

std::vector<int> argmax_rows(const Tensor& logits) {
  require(logits.ndim() == 2, "argmax_rows: expects 2-d tensor");
  const int n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const real_t* z = logits.data() + static_cast<int64_t>(i) * k;
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (z[j] > z[best]) best = j;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

real_t accuracy(const Tensor& logits, const std::vector<int>& labels) {
  const auto pred = argmax_rows(logits);
  require(pred.size() == labels.size(), "accuracy: label count mismatch");
  if (pred.empty()) return 0.0;
  int64_t hit = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++hit;
  return static_cast<real_t>(hit) / static_cast<real_t>(pred.size());
}

std::vector<real_t> softmax_rows(const Tensor& logits) {
  require(logits.ndim() == 2, "softmax_rows: expects 2-d tensor");
  const int n = logits.dim(0), k = logits.dim(1);
  std::vector<real_t> out(static_cast<size_t>(logits.size()));
  for (int i = 0; i < n; ++i) {
    const real_t* z = logits.data() + static_cast<int64_t>(i) * k;
    real_t* p = out.data() + static_cast<int64_t>(i) * k;
    real_t zmax = z[0];
    for (int j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
    real_t denom = 0.0;
    for (int j = 0; j < k; ++j) denom += (p[j] = std::exp(z[j] - zmax));
    for (int j = 0; j < k; ++j) p[j] /= denom;
  }
  return out;
}

}  // namespace egcfl::nn
