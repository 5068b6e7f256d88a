#pragma once

#include <memory>
#include <string>
#include <vector>

#include "egcfl/batch.hpp"
#include "egcfl/nn/layers.hpp"

namespace egcfl {

// An image classifier with a feature tap (the activation feeding the global
// pool), used both as attack target and as the perceptual feature extractor.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual nn::Tensor logits(const nn::Tensor& images, bool training) = 0;
  // Pre-pool activation map (N, C, H', W').
  virtual nn::Tensor features(const nn::Tensor& images, bool training) = 0;
  // Logits plus an intermediate activation, counted back from the last
  // activation layer (1 = last). Out-of-range taps are invalid arguments.
  virtual nn::Tensor logits_with_tap(const nn::Tensor& images, int tap_from_end,
                                     nn::Tensor* tap) = 0;
  virtual int num_classes() const = 0;
  virtual int activation_count() const = 0;
  virtual std::string architecture() const = 0;
  virtual nn::ParamMap param_map() = 0;

  void set_frozen(bool frozen) { param_map().set_requires_grad(!frozen); }
  uint64_t checksum() { return param_map().checksum(); }
};

enum class ClassifierArch { kSmallResNet, kSmallConv };

std::string classifier_arch_name(ClassifierArch arch);
ClassifierArch classifier_arch_from_name(const std::string& name);

struct ClassifierConfig {
  int base_width = 16;
  int classes = 10;
  int in_channels = 3;
};

// Residual network: stem + 4 residual blocks at widths w, 2w, 2w, 4w.
class SmallResNet final : public Classifier {
 public:
  SmallResNet(const ClassifierConfig& cfg, uint64_t seed);

  nn::Tensor logits(const nn::Tensor& images, bool training) override;
  nn::Tensor features(const nn::Tensor& images, bool training) override;
  nn::Tensor logits_with_tap(const nn::Tensor& images, int tap_from_end,
                             nn::Tensor* tap) override;
  int num_classes() const override { return cfg_.classes; }
  int activation_count() const override { return 5; }
  std::string architecture() const override { return "small_resnet"; }
  nn::ParamMap param_map() override;
  const ClassifierConfig& config() const { return cfg_; }

 private:
  struct Block {
    nn::Conv2d c1, c2, proj;
    nn::BatchNorm2d b1, b2;
    bool has_proj = false;
  };
  nn::Tensor forward(const nn::Tensor& x, bool training,
                     std::vector<nn::Tensor>* taps);

  ClassifierConfig cfg_;
  nn::Conv2d stem_;
  nn::BatchNorm2d stem_bn_;
  std::vector<Block> blocks_;
  nn::Linear fc_;
};

// Plain convolutional stack; substitute-model and perceptual-feature
// architecture, deliberately different from the residual target.
class SmallConv final : public Classifier {
 public:
  SmallConv(const ClassifierConfig& cfg, uint64_t seed);

  nn::Tensor logits(const nn::Tensor& images, bool training) override;
  nn::Tensor features(const nn::Tensor& images, bool training) override;
  nn::Tensor logits_with_tap(const nn::Tensor& images, int tap_from_end,
                             nn::Tensor* tap) override;
  int num_classes() const override { return cfg_.classes; }
  int activation_count() const override { return 3; }
  std::string architecture() const override { return "small_conv"; }
  nn::ParamMap param_map() override;
  const ClassifierConfig& config() const { return cfg_; }

 private:
  nn::Tensor forward(const nn::Tensor& x, bool training,
                     std::vector<nn::Tensor>* taps);

  ClassifierConfig cfg_;
  nn::Conv2d c1_, c2_, c3_;
  nn::BatchNorm2d n1_, n2_, n3_;
  nn::Linear fc_;
};

std::unique_ptr<Classifier> make_classifier(ClassifierArch arch,
                                            const ClassifierConfig& cfg, uint64_t seed);

struct FitConfig {
  int epochs = 10;
  int batch_size = 64;
  real_t learning_rate = 1e-3;
  uint64_t seed = 1;
};

struct FitLog {
  std::vector<real_t> train_loss;  // per epoch
  std::vector<real_t> test_accuracy;
};

// Adam training with seeded shuffling; aborts with diagnostics on NaN loss.
FitLog train_classifier(Classifier& model, const ImageBatch& train,
                        const ImageBatch& test, const FitConfig& cfg);

real_t classifier_accuracy(Classifier& model, const ImageBatch& batch,
                           int batch_size = 256);

// Copies the selected samples into a contiguous batch.
ImageBatch gather(const ImageBatch& batch, const std::vector<int>& indices);

}  // namespace egcfl
