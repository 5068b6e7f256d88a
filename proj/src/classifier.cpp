#include "egcfl/classifier.hpp"

#include <cmath>
#include <sstream>

#include "egcfl/nn/optim.hpp"

namespace egcfl {

using namespace nn;

std::string classifier_arch_name(ClassifierArch arch) {
  return arch == ClassifierArch::kSmallResNet ? "small_resnet" : "small_conv";
}

ClassifierArch classifier_arch_from_name(const std::string& name) {
  if (name == "small_resnet") return ClassifierArch::kSmallResNet;
  if (name == "small_conv") return ClassifierArch::kSmallConv;
  throw InvalidArgument("unknown classifier architecture: " + name);
}

// ---------------------------------------------------------------------------
// SmallResNet
// ---------------------------------------------------------------------------

SmallResNet::SmallResNet(const ClassifierConfig& cfg, uint64_t seed) : cfg_(cfg) {
  Rng rng(Rng::substream(seed, 0xC1A55));
  const int w = cfg.base_width;
  stem_ = Conv2d(cfg.in_channels, w, 3, 1, 1, Activation::kNone, rng);
  stem_bn_ = BatchNorm2d(w);
  const int plan[4][3] = {{w, w, 1}, {w, 2 * w, 2}, {2 * w, 2 * w, 1}, {2 * w, 4 * w, 2}};
  for (const auto& [cin, cout, stride] : plan) {
    Block b;
    b.c1 = Conv2d(cin, cout, 3, stride, 1, Activation::kNone, rng);
    b.b1 = BatchNorm2d(cout);
    b.c2 = Conv2d(cout, cout, 3, 1, 1, Activation::kNone, rng);
    b.b2 = BatchNorm2d(cout);
    b.has_proj = (cin != cout || stride != 1);
    if (b.has_proj) b.proj = Conv2d(cin, cout, 1, stride, 0, Activation::kNone, rng);
    blocks_.push_back(std::move(b));
  }
  fc_ = Linear(4 * w, cfg.classes, rng);
}

Tensor SmallResNet::forward(const Tensor& x, bool training,
                            std::vector<Tensor>* taps) {
  if (x.ndim() != 4 || x.dim(1) != cfg_.in_channels)
    throw InvalidArgument("SmallResNet: bad input shape");
  Tensor h = relu(stem_bn_(stem_(x), training));
  if (taps) taps->push_back(h);
  for (auto& b : blocks_) {
    Tensor y = relu(b.b1(b.c1(h), training));
    y = b.b2(b.c2(y), training);
    Tensor skip = b.has_proj ? b.proj(h) : h;
    h = relu(add(y, skip));
    if (taps) taps->push_back(h);
  }
  return h;
}

Tensor SmallResNet::logits(const Tensor& images, bool training) {
  return fc_(global_avg_pool(forward(images, training, nullptr)));
}

Tensor SmallResNet::features(const Tensor& images, bool training) {
  return forward(images, training, nullptr);
}

Tensor SmallResNet::logits_with_tap(const Tensor& images, int tap_from_end,
                                    Tensor* tap) {
  if (tap_from_end < 1 || tap_from_end > activation_count())
    throw InvalidArgument("SmallResNet: activation tap out of range");
  std::vector<Tensor> taps;
  Tensor h = forward(images, false, &taps);
  if (tap) *tap = taps[taps.size() - static_cast<size_t>(tap_from_end)];
  return fc_(global_avg_pool(h));
}

ParamMap SmallResNet::param_map() {
  ParamMap m;
  stem_.collect("stem", m);
  stem_bn_.collect("stem_bn", m);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    blocks_[i].c1.collect(p + ".c1", m);
    blocks_[i].b1.collect(p + ".b1", m);
    blocks_[i].c2.collect(p + ".c2", m);
    blocks_[i].b2.collect(p + ".b2", m);
    if (blocks_[i].has_proj) blocks_[i].proj.collect(p + ".proj", m);
  }
  fc_.collect("fc", m);
  return m;
}

// ---------------------------------------------------------------------------
// SmallConv
// ---------------------------------------------------------------------------

SmallConv::SmallConv(const ClassifierConfig& cfg, uint64_t seed) : cfg_(cfg) {
  Rng rng(Rng::substream(seed, 0xC2C0));
  const int w = cfg.base_width;
  c1_ = Conv2d(cfg.in_channels, w, 3, 1, 1, Activation::kNone, rng);
  n1_ = BatchNorm2d(w);
  c2_ = Conv2d(w, 2 * w, 3, 1, 1, Activation::kNone, rng);
  n2_ = BatchNorm2d(2 * w);
  c3_ = Conv2d(2 * w, 4 * w, 3, 1, 1, Activation::kNone, rng);
  n3_ = BatchNorm2d(4 * w);
  fc_ = Linear(4 * w, cfg.classes, rng);
}

Tensor SmallConv::forward(const Tensor& x, bool training, std::vector<Tensor>* taps) {
  if (x.ndim() != 4 || x.dim(1) != cfg_.in_channels)
    throw InvalidArgument("SmallConv: bad input shape");
  Tensor h = relu(n1_(c1_(x), training));
  if (taps) taps->push_back(h);
  h = maxpool2x2(h);
  h = relu(n2_(c2_(h), training));
  if (taps) taps->push_back(h);
  h = maxpool2x2(h);
  h = relu(n3_(c3_(h), training));
  if (taps) taps->push_back(h);
  return h;
}

Tensor SmallConv::logits(const Tensor& images, bool training) {
  return fc_(global_avg_pool(forward(images, training, nullptr)));
}

Tensor SmallConv::features(const Tensor& images, bool training) {
  return forward(images, training, nullptr);
}

Tensor SmallConv::logits_with_tap(const Tensor& images, int tap_from_end, Tensor* tap) {
  if (tap_from_end < 1 || tap_from_end > activation_count())
    throw InvalidArgument("SmallConv: activation tap out of range");
  std::vector<Tensor> taps;
  Tensor h = forward(images, false, &taps);
  if (tap) *tap = taps[taps.size() - static_cast<size_t>(tap_from_end)];
  return fc_(global_avg_pool(h));
}

ParamMap SmallConv::param_map() {
  ParamMap m;
  c1_.collect("c1", m);
  n1_.collect("n1", m);
  c2_.collect("c2", m);
  n2_.collect("n2", m);
  c3_.collect("c3", m);
  n3_.collect("n3", m);
  fc_.collect("fc", m);
  return m;
}

std::unique_ptr<Classifier> make_classifier(ClassifierArch arch,
                                            const ClassifierConfig& cfg, uint64_t seed) {
  if (arch == ClassifierArch::kSmallResNet)
    return std::make_unique<SmallResNet>(cfg, seed);
  return std::make_unique<SmallConv>(cfg, seed);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

ImageBatch gather(const ImageBatch& batch, const std::vector<int>& indices) {
  ImageBatch out;
  Shape s = batch.images.shape();
  s[0] = static_cast<int>(indices.size());
  out.images = Tensor::zeros(s);
  out.labels.resize(indices.size());
  const int64_t stride = batch.images.size() / batch.count();
  for (size_t i = 0; i < indices.size(); ++i) {
    const int src = indices[i];
    if (src < 0 || src >= batch.count())
      throw InvalidArgument("gather: index out of range");
    std::copy_n(batch.images.data() + src * stride, stride,
                out.images.data() + static_cast<int64_t>(i) * stride);
    out.labels[i] = batch.labels[static_cast<size_t>(src)];
  }
  return out;
}

real_t classifier_accuracy(Classifier& model, const ImageBatch& batch, int batch_size) {
  NoGradGuard ng;
  int64_t hits = 0;
  for (int begin = 0; begin < batch.count(); begin += batch_size) {
    const int n = std::min(batch_size, batch.count() - begin);
    const ImageBatch chunk = batch.slice(begin, n);
    const auto pred = argmax_rows(model.logits(chunk.images, false));
    for (int i = 0; i < n; ++i)
      if (pred[static_cast<size_t>(i)] == chunk.labels[static_cast<size_t>(i)]) ++hits;
  }
  return batch.count() == 0 ? 0.0
                            : static_cast<real_t>(hits) / static_cast<real_t>(batch.count());
}

FitLog train_classifier(Classifier& model, const ImageBatch& train,
                        const ImageBatch& test, const FitConfig& cfg) {
  if (cfg.epochs < 1 || cfg.batch_size < 1)
    throw InvalidArgument("train_classifier: bad epoch/batch configuration");
  auto params = model.param_map();
  params.set_requires_grad(true);
  Adam opt(params.tensors(), cfg.learning_rate);

  FitLog log;
  std::vector<int> order(static_cast<size_t>(train.count()));
  for (int i = 0; i < train.count(); ++i) order[static_cast<size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(Rng::substream(cfg.seed, 0xE90C + static_cast<uint64_t>(epoch)));
    for (int i = train.count() - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(rng.uniform_int(i + 1))]);

    real_t epoch_loss = 0.0;
    int batches = 0;
    for (int begin = 0; begin < train.count(); begin += cfg.batch_size) {
      const int n = std::min(cfg.batch_size, train.count() - begin);
      std::vector<int> idx(order.begin() + begin, order.begin() + begin + n);
      const ImageBatch chunk = gather(train, idx);
      opt.zero_grad();
      Tensor loss = softmax_cross_entropy(model.logits(chunk.images, true), chunk.labels);
      const real_t lv = loss.item();
      if (!std::isfinite(lv)) {
        std::ostringstream msg;
        msg << "train_classifier: non-finite loss at epoch " << epoch << " batch "
            << batches << " (loss=" << lv << ")";
        throw InternalError(msg.str());
      }
      loss.backward();
      opt.step();
      epoch_loss += lv;
      ++batches;
    }
    log.train_loss.push_back(epoch_loss / std::max(1, batches));
    log.test_accuracy.push_back(classifier_accuracy(model, test));
  }
  return log;
}

}  // namespace egcfl
