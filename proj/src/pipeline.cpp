#include "egcfl/pipeline.hpp"

namespace egcfl::pipeline {

using namespace nn;

namespace {
constexpr real_t kSlope = 0.2;

void require_same_image_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.defined() || !b.defined() || a.shape() != b.shape())
    throw InvalidArgument(std::string(who) + ": shape mismatch");
}
}  // namespace

DefensePipeline::DefensePipeline(const PipelineConfig& cfg, uint64_t seed)
    : cfg_(cfg), tdz_(tdz::make_tdz_config(cfg.block_size, cfg.delta)) {
  if (cfg.converter_width < 1 || cfg.cleaner_width < 1 || cfg.fusion_width < 1)
    throw InvalidArgument("DefensePipeline: widths must be positive");
  if (cfg.loop_count < 1)
    throw InvalidArgument("DefensePipeline: loop_count must be >= 1");
  Rng rng(Rng::substream(seed, 0xDEF));
  const int c = cfg.in_channels;
  const int cw = cfg.converter_width;
  const int gw = cfg.cleaner_width;
  const int fw = cfg.fusion_width;
  const Activation head =
      cfg.sigmoid_output ? Activation::kSigmoid : Activation::kNone;

  prefilter_ = Conv2d(c, c, 3, 1, 1, Activation::kNone, rng);
  ref_conv1_ = Conv2d(c, cw, 3, 1, 1, Activation::kLeakyRelu, rng);
  ref_conv2_ = Conv2d(cw, cw, 3, 1, 1, Activation::kNone, rng);
  est_conv1_ = Conv2d(c, cw, 3, 1, 1, Activation::kLeakyRelu, rng);
  est_conv2_ = Conv2d(cw, cw, 3, 1, 1, Activation::kNone, rng);
  merge_ = Conv2d(2 * cw, c, 1, 1, 0, Activation::kNone, rng);

  g_enc1_ = Conv2d(c, gw, 3, 1, 1, Activation::kLeakyRelu, rng);
  g_enc2_ = Conv2d(gw, 2 * gw, 3, cfg.cleaner_downsample ? 2 : 1, 1,
                   Activation::kLeakyRelu, rng);
  g_mid_ = Conv2d(2 * gw, 2 * gw, 3, 1, 1, Activation::kLeakyRelu, rng);
  g_dec_ = Conv2d(3 * gw, gw, 3, 1, 1, Activation::kLeakyRelu, rng);
  g_out_ = Conv2d(gw, c, 3, 1, 1, head, rng);

  f1_ = Conv2d(2 * c, fw, 3, 1, 1, Activation::kLeakyRelu, rng);
  f2_ = Conv2d(fw, fw, 3, 1, 1, Activation::kLeakyRelu, rng);
  f3_ = Conv2d(fw, c, 3, 1, 1, head, rng);
}

Tensor DefensePipeline::preprocess(const Tensor& x, DeadzoneBackward mode) const {
  if (!x.defined() || x.ndim() != 4)
    throw InvalidArgument("preprocess: expects a (N,C,H,W) tensor");
  Tensor filtered = prefilter_(x);
  if (!cfg_.tdz_enabled) return clamp(filtered, 0.0, 1.0);
  return clamp(tdz::tdz_layer(filtered, tdz_, mode), 0.0, 1.0);
}

Tensor DefensePipeline::feedback_step(const Tensor& reference,
                                      const Tensor& estimate) const {
  require_same_image_shape(reference, estimate, "feedback_step");
  Tensor ref_feat = ref_conv2_(ref_conv1_(reference));
  Tensor est_feat = est_conv2_(est_conv1_(estimate));
  Tensor merged = merge_(concat_channels(ref_feat, est_feat));

  Tensor e1 = g_enc1_(merged);
  Tensor h = g_mid_(g_enc2_(e1));
  if (cfg_.cleaner_downsample) h = upsample_nearest2x(h);
  Tensor out = g_out_(g_dec_(concat_channels(h, e1)));
  return cfg_.sigmoid_output ? out : clamp(out, 0.0, 1.0);
}

Tensor DefensePipeline::fuse_step(const Tensor& fused, const Tensor& estimate) const {
  require_same_image_shape(fused, estimate, "fuse_step");
  Tensor out = f3_(f2_(f1_(concat_channels(fused, estimate))));
  return cfg_.sigmoid_output ? out : clamp(out, 0.0, 1.0);
}

DefensePipeline::Trace DefensePipeline::run(const Tensor& x, int loops,
                                            DeadzoneBackward mode) const {
  if (loops < 1) throw InvalidArgument("DefensePipeline::run: loops must be >= 1");
  Trace trace;
  trace.preprocessed = preprocess(x, mode);
  Tensor estimate = trace.preprocessed;  // first loop feeds back the reference
  Tensor fused;
  for (int k = 0; k < loops; ++k) {
    estimate = feedback_step(trace.preprocessed, estimate);
    fused = (k == 0) ? estimate : fuse_step(fused, estimate);
    trace.estimates.push_back(estimate);
    trace.fused.push_back(fused);
  }
  return trace;
}

DefensePipeline::Trace DefensePipeline::defend(const Tensor& x, int loops) const {
  NoGradGuard ng;
  return run(x, loops, DeadzoneBackward::kMasked);
}

Tensor DefensePipeline::defend_output(const Tensor& x, int loops) const {
  return defend(x, loops).fused.back();
}

ParamMap DefensePipeline::param_map() {
  ParamMap m;
  prefilter_.collect("prefilter", m);
  ref_conv1_.collect("ref_conv1", m);
  ref_conv2_.collect("ref_conv2", m);
  est_conv1_.collect("est_conv1", m);
  est_conv2_.collect("est_conv2", m);
  merge_.collect("merge", m);
  g_enc1_.collect("cleaner.enc1", m);
  g_enc2_.collect("cleaner.enc2", m);
  g_mid_.collect("cleaner.mid", m);
  g_dec_.collect("cleaner.dec", m);
  g_out_.collect("cleaner.out", m);
  f1_.collect("fusion.c1", m);
  f2_.collect("fusion.c2", m);
  f3_.collect("fusion.c3", m);
  return m;
}

void DefensePipeline::set_identity() {
  if (cfg_.sigmoid_output || cfg_.cleaner_downsample || cfg_.tdz_enabled)
    throw InvalidArgument(
        "set_identity: requires linear heads, no downsampling, and tdz disabled");
  const int c = cfg_.in_channels;
  const int cw = cfg_.converter_width;
  const int gw = cfg_.cleaner_width;
  const int fw = cfg_.fusion_width;
  if (cw < c || gw < c || fw < 2 * c)
    throw InvalidArgument("set_identity: widths too small to pass channels through");

  prefilter_.set_identity();
  ref_conv1_.set_identity();
  ref_conv2_.set_identity();
  est_conv1_.set_identity();
  est_conv2_.set_identity();

  // merge: out_c = (ref_c + est_c) / 2
  std::fill(merge_.weight.values().begin(), merge_.weight.values().end(), 0.0);
  std::fill(merge_.bias.values().begin(), merge_.bias.values().end(), 0.0);
  for (int ch = 0; ch < c; ++ch) {
    merge_.weight.data()[static_cast<int64_t>(ch) * 2 * cw + ch] = 0.5;
    merge_.weight.data()[static_cast<int64_t>(ch) * 2 * cw + cw + ch] = 0.5;
  }

  g_enc1_.set_identity();
  g_enc2_.set_identity();
  g_mid_.set_identity();
  // dec input is concat(mid: 2*gw, enc1: gw); average channel ch of both
  std::fill(g_dec_.weight.values().begin(), g_dec_.weight.values().end(), 0.0);
  std::fill(g_dec_.bias.values().begin(), g_dec_.bias.values().end(), 0.0);
  {
    const int k = g_dec_.weight.dim(2);
    const int center = (k / 2) * k + k / 2;
    const int cin = 3 * gw;
    for (int ch = 0; ch < c; ++ch) {
      g_dec_.weight.data()[(static_cast<int64_t>(ch) * cin + ch) * k * k + center] = 0.5;
      g_dec_.weight.data()[(static_cast<int64_t>(ch) * cin + 2 * gw + ch) * k * k +
                           center] = 0.5;
    }
  }
  g_out_.set_identity();

  f1_.set_identity();
  f2_.set_identity();
  // fusion head: average of the two stacked input images
  std::fill(f3_.weight.values().begin(), f3_.weight.values().end(), 0.0);
  std::fill(f3_.bias.values().begin(), f3_.bias.values().end(), 0.0);
  {
    const int k = f3_.weight.dim(2);
    const int center = (k / 2) * k + k / 2;
    for (int ch = 0; ch < c; ++ch) {
      f3_.weight.data()[(static_cast<int64_t>(ch) * fw + ch) * k * k + center] = 0.5;
      f3_.weight.data()[(static_cast<int64_t>(ch) * fw + c + ch) * k * k + center] = 0.5;
    }
  }
}

}  // namespace egcfl::pipeline
