#pragma once

#include <vector>

#include "egcfl/attacks.hpp"
#include "egcfl/classifier.hpp"
#include "egcfl/tdz.hpp"

namespace egcfl::pipeline {

struct PipelineConfig {
  int in_channels = 3;
  int converter_width = 16;  // output channels of the two converters
  int cleaner_width = 32;    // cleaning network base width (blocks w,2w,2w,w)
  int fusion_width = 32;     // fusion network hidden channels
  bool cleaner_downsample = true;  // stride-2 encoder stage in the cleaner
  bool sigmoid_output = true;      // sigmoid heads on cleaner/fusion outputs
  bool tdz_enabled = true;         // disabled: the transform stage is identity
  int block_size = 8;
  real_t delta = 0.05;
  int loop_count = 3;  // K
};

// Defense network: pre-filter convolution, transformed-deadzone stage,
// generative cleaner driven through a feedback loop via three converter
// convolutions, and an accumulative two-image fusion network.
class DefensePipeline {
 public:
  DefensePipeline(const PipelineConfig& cfg, uint64_t seed);

  struct Trace {
    nn::Tensor preprocessed;            // cleaned reference image
    std::vector<nn::Tensor> estimates;  // cleaner outputs, one per loop
    std::vector<nn::Tensor> fused;      // accumulated fusions, one per loop
  };

  // clamp01(TDZ(P(x))); the deadzone backward follows `mode`.
  nn::Tensor preprocess(const nn::Tensor& x,
                        nn::DeadzoneBackward mode = nn::DeadzoneBackward::kMasked) const;
  // Next cleaner estimate from the reference and the previous estimate.
  nn::Tensor feedback_step(const nn::Tensor& reference,
                           const nn::Tensor& estimate) const;
  // Folds a new estimate into the running fusion.
  nn::Tensor fuse_step(const nn::Tensor& fused, const nn::Tensor& estimate) const;

  // Unrolled forward; records the autograd graph when recording is on.
  // Loop seeds: the first estimate feeds back the reference itself, and the
  // fusion starts at the first estimate.
  Trace run(const nn::Tensor& x, int loops, nn::DeadzoneBackward mode) const;

  // Inference-only trace and final defended image.
  Trace defend(const nn::Tensor& x, int loops) const;
  nn::Tensor defend_output(const nn::Tensor& x, int loops) const;

  nn::ParamMap param_map();
  const PipelineConfig& config() const { return cfg_; }
  const tdz::TdzConfig& tdz_config() const { return tdz_; }
  uint64_t checksum() { return param_map().checksum(); }

  // Rewires every convolution so the whole pipeline is an exact identity map
  // on [0,1] images. Requires linear output heads, no cleaner downsampling,
  // and a disabled transform stage.
  void set_identity();

 private:
  PipelineConfig cfg_;
  tdz::TdzConfig tdz_;
  nn::Conv2d prefilter_;             // P
  nn::Conv2d ref_conv1_, ref_conv2_; // converter for the reference input
  nn::Conv2d est_conv1_, est_conv2_; // converter for the fed-back estimate
  nn::Conv2d merge_;                 // 1x1 fusion of the two converter outputs
  nn::Conv2d g_enc1_, g_enc2_, g_mid_, g_dec_, g_out_;  // cleaner
  nn::Conv2d f1_, f2_, f3_;          // fusion network
};

// Unrolled defense composed with the target classifier; this is the surface
// white-box attacks optimize against. The deadzone backward mode selects
// between the true masked gradient and the straight-through surrogate.
class DefendedModel final : public attacks::DifferentiableModel {
 public:
  DefendedModel(const DefensePipeline& defense, Classifier& classifier, int k_test,
                nn::DeadzoneBackward mode)
      : defense_(&defense), classifier_(&classifier), k_test_(k_test), mode_(mode) {
    if (k_test < 1) throw InvalidArgument("DefendedModel: k_test must be >= 1");
  }

  nn::Tensor logits(const nn::Tensor& images) const override {
    const auto trace = defense_->run(images, k_test_, mode_);
    return classifier_->logits(trace.fused.back(), false);
  }
  int num_classes() const override { return classifier_->num_classes(); }

 private:
  const DefensePipeline* defense_;
  Classifier* classifier_;
  int k_test_;
  nn::DeadzoneBackward mode_;
};

}  // namespace egcfl::pipeline
