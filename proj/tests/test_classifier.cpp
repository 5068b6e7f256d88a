#include <doctest.h>

#include <chrono>
#include <cmath>

#include "egcfl/classifier.hpp"
#include "egcfl/data.hpp"

using namespace egcfl;

namespace {

data::Dataset small_synth(int train, int test, uint64_t seed) {
  data::DatasetSpec spec;
  spec.kind = data::DatasetKind::kSynthShapes;
  spec.train_size = train;
  spec.test_size = test;
  spec.seed = seed;
  return data::build_dataset(spec);
}

}  // namespace

TEST_CASE("classifier shapes and taps") {
  ClassifierConfig cfg;
  cfg.base_width = 8;
  for (auto arch : {ClassifierArch::kSmallResNet, ClassifierArch::kSmallConv}) {
    auto model = make_classifier(arch, cfg, 42);
    nn::Tensor x = nn::Tensor::zeros({3, 3, 32, 32});
    nn::Tensor z = model->logits(x, false);
    CHECK(z.shape() == nn::Shape{3, 10});
    nn::Tensor f = model->features(x, false);
    REQUIRE(f.ndim() == 4);
    CHECK(f.dim(0) == 3);
    CHECK(f.dim(1) == 4 * cfg.base_width);

    nn::Tensor tap;
    nn::Tensor z2 = model->logits_with_tap(x, 1, &tap);
    CHECK(tap.values() == f.values());
    CHECK_THROWS_AS(model->logits_with_tap(x, 0, &tap), InvalidArgument);
    CHECK_THROWS_AS(model->logits_with_tap(x, model->activation_count() + 1, &tap),
                    InvalidArgument);
    CHECK_THROWS_AS(model->logits(nn::Tensor::zeros({1, 1, 32, 32}), false),
                    InvalidArgument);
  }
}

TEST_CASE("classifier init and training are seed reproducible") {
  ClassifierConfig cfg;
  cfg.base_width = 8;
  auto a = make_classifier(ClassifierArch::kSmallResNet, cfg, 5);
  auto b = make_classifier(ClassifierArch::kSmallResNet, cfg, 5);
  CHECK(a->checksum() == b->checksum());
  auto c = make_classifier(ClassifierArch::kSmallResNet, cfg, 6);
  CHECK(c->checksum() != a->checksum());

  const auto ds = small_synth(128, 48, 2);
  FitConfig fit;
  fit.epochs = 2;
  fit.batch_size = 32;
  fit.seed = 9;
  const FitLog la = train_classifier(*a, ds.train, ds.test, fit);
  const FitLog lb = train_classifier(*b, ds.train, ds.test, fit);
  CHECK(la.train_loss == lb.train_loss);
  CHECK(la.test_accuracy == lb.test_accuracy);
  CHECK(a->checksum() == b->checksum());
}

TEST_CASE("classifier learns the synthetic task") {
  const auto ds = small_synth(640, 160, 13);
  ClassifierConfig cfg;
  cfg.base_width = 12;
  auto model = make_classifier(ClassifierArch::kSmallResNet, cfg, 21);
  FitConfig fit;
  fit.epochs = 6;
  fit.batch_size = 32;
  fit.seed = 3;
  fit.learning_rate = 3e-3;
  const auto t0 = std::chrono::steady_clock::now();
  const FitLog log = train_classifier(*model, ds.train, ds.test, fit);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  INFO("train time ", secs, "s; final acc ", log.test_accuracy.back());
  CHECK(log.test_accuracy.back() >= 0.8);
  CHECK(log.train_loss.back() < log.train_loss.front());
}

TEST_CASE("frozen classifiers accumulate no gradient") {
  ClassifierConfig cfg;
  cfg.base_width = 8;
  auto model = make_classifier(ClassifierArch::kSmallConv, cfg, 77);
  model->set_frozen(true);
  const uint64_t before = model->checksum();

  nn::Tensor x = nn::Tensor::zeros({2, 3, 32, 32}, true);
  Rng rng(4);
  rng.fill_uniform(x.data(), static_cast<size_t>(x.size()), 0.0, 1.0);
  nn::Tensor loss = nn::softmax_cross_entropy(model->logits(x, false), {1, 2});
  loss.backward();

  // input still gets a gradient, parameters do not
  bool any_input_grad = false;
  for (int64_t i = 0; i < x.size(); ++i) any_input_grad |= (x.grad()[i] != 0.0);
  CHECK(any_input_grad);
  for (const auto& [name, t] : model->param_map().params) CHECK(!t.has_grad());
  CHECK(model->checksum() == before);
}

TEST_CASE("non-finite loss aborts with diagnostics") {
  const auto ds = small_synth(64, 16, 1);
  ClassifierConfig cfg;
  cfg.base_width = 8;
  auto model = make_classifier(ClassifierArch::kSmallConv, cfg, 31);
  // poison the classifier head; earlier layers could mask a NaN behind relu
  for (auto& [name, t] : model->param_map().params)
    if (name == "fc.weight") t.data()[0] = std::nan("");
  FitConfig fit;
  fit.epochs = 1;
  CHECK_THROWS_AS(train_classifier(*model, ds.train, ds.test, fit), InternalError);
}
