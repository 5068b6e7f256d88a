#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "egcfl/data.hpp"
#include "egcfl/io/fsutil.hpp"
#include "egcfl/nn/gradcheck.hpp"
#include "egcfl/training.hpp"

using namespace egcfl;
using namespace egcfl::training;

namespace {

// Single-conv feature network with hand-settable weights.
class ToyFeatureNet final : public Classifier {
 public:
  ToyFeatureNet() {
    Rng rng(1);
    conv_ = nn::Conv2d(1, 2, 3, 1, 1, nn::Activation::kNone, rng);
    fc_ = nn::Linear(2, 2, rng);
  }
  nn::Tensor logits(const nn::Tensor& images, bool training) override {
    return fc_(nn::global_avg_pool(features(images, training)));
  }
  nn::Tensor features(const nn::Tensor& images, bool) override {
    return conv_(images);
  }
  nn::Tensor logits_with_tap(const nn::Tensor& images, int tap_from_end,
                             nn::Tensor* tap) override {
    if (tap_from_end != 1) throw InvalidArgument("ToyFeatureNet: tap out of range");
    nn::Tensor f = features(images, false);
    if (tap) *tap = f;
    return fc_(nn::global_avg_pool(f));
  }
  int num_classes() const override { return 2; }
  int activation_count() const override { return 1; }
  std::string architecture() const override { return "toy"; }
  nn::ParamMap param_map() override {
    nn::ParamMap m;
    conv_.collect("conv", m);
    fc_.collect("fc", m);
    return m;
  }
  nn::Conv2d conv_;
  nn::Linear fc_;
};

pipeline::PipelineConfig tiny_pipeline_config() {
  pipeline::PipelineConfig cfg;
  cfg.converter_width = 6;
  cfg.cleaner_width = 8;
  cfg.fusion_width = 8;
  cfg.block_size = 4;
  return cfg;
}

struct TinyWorld {
  data::Dataset ds;
  std::unique_ptr<Classifier> target;
  std::unique_ptr<Classifier> fbeta;
};

TinyWorld make_tiny_world(uint64_t seed) {
  TinyWorld w;
  data::DatasetSpec spec;
  spec.train_size = 64;
  spec.test_size = 32;
  spec.seed = seed;
  w.ds = data::build_dataset(spec);
  ClassifierConfig ccfg;
  ccfg.base_width = 8;
  w.target = make_classifier(ClassifierArch::kSmallResNet, ccfg, 70 + seed);
  FitConfig fit;
  fit.epochs = 2;
  fit.batch_size = 32;
  fit.seed = 4;
  train_classifier(*w.target, w.ds.train, w.ds.test, fit);
  w.fbeta = make_classifier(ClassifierArch::kSmallConv, ccfg, 80 + seed);
  FitConfig ffit = fit;
  train_classifier(*w.fbeta, w.ds.train, w.ds.test, ffit);
  return w;
}

TrainConfig tiny_train_config(TinyWorld& w) {
  TrainConfig cfg;
  cfg.target_classifier = w.target.get();
  cfg.feature_net = w.fbeta.get();
  cfg.epochs = 1;
  cfg.batch_size = 32;
  cfg.train_loops = 2;
  cfg.val_attack_size = 16;
  cfg.attack_spec.iterations = 3;
  cfg.seed = 12;
  return cfg;
}

}  // namespace

TEST_CASE("loss weight validation") {
  LossWeights w;
  CHECK_NOTHROW(validate_weights(w));
  w.lambda2 = -0.1;
  CHECK_THROWS_AS(validate_weights(w), InvalidArgument);
  LossWeights zero{0.0, 0.0, 0.0};
  CHECK_NOTHROW(validate_weights(zero));  // degenerate zero-loss surface is legal
}

TEST_CASE("total loss arithmetic") {
  const LossWeights thirds;
  CHECK(total_loss(thirds, 3.0, 3.0, 3.0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(total_loss(thirds, 0.6, 0.3, 2.1) == doctest::Approx(1.0).epsilon(1e-12));
  const LossWeights only_p{1.0, 0.0, 0.0};
  CHECK(total_loss(only_p, 1.75, 99.0, -3.0) == doctest::Approx(1.75));

  nn::Tensor a = nn::Tensor::scalar(0.6, true);
  nn::Tensor b = nn::Tensor::scalar(0.3, true);
  nn::Tensor c = nn::Tensor::scalar(2.1, true);
  nn::Tensor t = total_loss(thirds, a, b, c);
  CHECK(t.item() == doctest::Approx(1.0).epsilon(1e-12));
  t.backward();
  CHECK(a.grad()[0] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("perceptual loss") {
  ToyFeatureNet net;

  SUBCASE("identical inputs give exactly zero") {
    Rng rng(5);
    nn::Tensor x = nn::Tensor::zeros({2, 1, 4, 4});
    rng.fill_uniform(x.data(), static_cast<size_t>(x.size()), 0.0, 1.0);
    CHECK(perceptual_loss(net, x, x.detach()).item() == 0.0);
  }

  SUBCASE("matches a hand-computed forward pass on a 2x2 image") {
    // kernel: first output channel sums the 2x2 input block (center+right+
    // down+diag taps), second output channel is 2 * center; zero bias.
    std::fill(net.conv_.weight.values().begin(), net.conv_.weight.values().end(), 0.0);
    std::fill(net.conv_.bias.values().begin(), net.conv_.bias.values().end(), 0.0);
    auto set_w = [&](int out_c, int ky, int kx, real_t v) {
      net.conv_.weight.data()[((out_c * 1 + 0) * 3 + ky) * 3 + kx] = v;
    };
    set_w(0, 1, 1, 1.0);
    set_w(0, 1, 2, 1.0);
    set_w(0, 2, 1, 1.0);
    set_w(0, 2, 2, 1.0);
    set_w(1, 1, 1, 2.0);

    nn::Tensor x = nn::Tensor::from_data({1, 1, 2, 2}, {0.1, 0.2, 0.3, 0.4});
    nn::Tensor y = nn::Tensor::from_data({1, 1, 2, 2}, {0.4, 0.3, 0.2, 0.1});
    // features(x) channel 0 (per position, 3x3 kernel over [[.1,.2],[.3,.4]]):
    //   (0,0): .1+.2+.3+.4=1.0  (0,1): .2+.4=0.6  (1,0): .3+.4=0.7  (1,1): .4
    // channel 1: 2*pixel = [.2,.4,.6,.8]
    // features(y) channel 0: 1.0, .4, .3, .1; channel 1: .8,.6,.4,.2
    // squared diff: ch0: 0, .04, .16, .09 ; ch1: .36, .04, .04, .36
    const real_t expected = 0.0 + 0.04 + 0.16 + 0.09 + 0.36 + 0.04 + 0.04 + 0.36;
    CHECK(perceptual_loss(net, x, y).item() == doctest::Approx(expected).epsilon(1e-6));
  }

  SUBCASE("nonnegative and shape checked") {
    Rng rng(6);
    nn::Tensor x = nn::Tensor::zeros({2, 1, 4, 4});
    nn::Tensor y = nn::Tensor::zeros({2, 1, 4, 4});
    rng.fill_uniform(x.data(), static_cast<size_t>(x.size()), 0.0, 1.0);
    rng.fill_uniform(y.data(), static_cast<size_t>(y.size()), 0.0, 1.0);
    CHECK(perceptual_loss(net, x, y).item() >= 0.0);
    CHECK_THROWS_AS(perceptual_loss(net, x, nn::Tensor::zeros({2, 1, 2, 2})),
                    InvalidArgument);
  }
}

TEST_CASE("adversarial loss") {
  SUBCASE("identity pipeline on clean input gives zero") {
    pipeline::PipelineConfig cfg = tiny_pipeline_config();
    cfg.sigmoid_output = false;
    cfg.cleaner_downsample = false;
    cfg.tdz_enabled = false;
    pipeline::DefensePipeline defense(cfg, 2);
    defense.set_identity();
    Rng rng(7);
    nn::Tensor x = nn::Tensor::zeros({2, 3, 8, 8});
    rng.fill_uniform(x.data(), static_cast<size_t>(x.size()), 0.0, 1.0);
    CHECK(adversarial_loss(defense, x, x, x).item() == 0.0);
  }

  SUBCASE("nonnegative on random inputs and shape checked") {
    pipeline::DefensePipeline defense(tiny_pipeline_config(), 3);
    Rng rng(8);
    nn::Tensor a = nn::Tensor::zeros({2, 3, 8, 8});
    nn::Tensor b = nn::Tensor::zeros({2, 3, 8, 8});
    nn::Tensor x = nn::Tensor::zeros({2, 3, 8, 8});
    rng.fill_uniform(a.data(), static_cast<size_t>(a.size()), 0.0, 1.0);
    rng.fill_uniform(b.data(), static_cast<size_t>(b.size()), 0.0, 1.0);
    rng.fill_uniform(x.data(), static_cast<size_t>(x.size()), 0.0, 1.0);
    CHECK(adversarial_loss(defense, a, b, x).item() >= 0.0);
    CHECK_THROWS_AS(
        adversarial_loss(defense, a, b, nn::Tensor::zeros({2, 3, 4, 4})),
        InvalidArgument);
  }

  SUBCASE("gradient w.r.t. cleaner parameters matches finite differences") {
    pipeline::DefensePipeline defense(tiny_pipeline_config(), 4);
    Rng rng(9);
    nn::Tensor a = nn::Tensor::zeros({1, 3, 8, 8});
    nn::Tensor b = nn::Tensor::zeros({1, 3, 8, 8});
    nn::Tensor x = nn::Tensor::zeros({1, 3, 8, 8});
    rng.fill_uniform(a.data(), static_cast<size_t>(a.size()), 0.1, 0.9);
    rng.fill_uniform(b.data(), static_cast<size_t>(b.size()), 0.1, 0.9);
    rng.fill_uniform(x.data(), static_cast<size_t>(x.size()), 0.1, 0.9);
    auto params = defense.param_map();
    params.set_requires_grad(true);
    std::vector<nn::Tensor> leaves;
    for (const auto& [name, t] : params.params)
      if (name.rfind("cleaner.", 0) == 0) leaves.push_back(t);
    REQUIRE(!leaves.empty());
    const auto rep = nn::check_gradients(
        [&] { return adversarial_loss(defense, a, b, x); }, leaves, 1e-5, 24);
    CHECK(rep.ok());
  }
}

TEST_CASE("classification loss") {
  SUBCASE("all-zero classifier parameters give uniform logits and ln(K)") {
    ClassifierConfig ccfg;
    ccfg.base_width = 8;
    auto model = make_classifier(ClassifierArch::kSmallConv, ccfg, 1);
    for (auto& [name, t] : model->param_map().params)
      std::fill(t.values().begin(), t.values().end(), 0.0);
    nn::Tensor x = nn::Tensor::full({4, 3, 32, 32}, 0.3);
    nn::Tensor loss = classification_loss(*model, x, {0, 5, 9, 3});
    CHECK(loss.item() == doctest::Approx(std::log(10.0)).epsilon(1e-9));
    CHECK_THROWS_AS(classification_loss(*model, x, {0, 5, 9, 10}), InvalidArgument);
  }

  SUBCASE("matches an independent cross-entropy oracle on random logits") {
    // oracle computed without the max-shift trick, in long double
    Rng rng(10);
    const int n = 5, k = 10;
    nn::Tensor logits = nn::Tensor::zeros({n, k});
    rng.fill_uniform(logits.data(), static_cast<size_t>(logits.size()), -3.0, 3.0);
    const std::vector<int> labels = {3, 1, 4, 1, 5};
    long double expected = 0.0L;
    for (int i = 0; i < n; ++i) {
      long double denom = 0.0L;
      for (int j = 0; j < k; ++j)
        denom += expl(static_cast<long double>(logits.data()[i * k + j]));
      expected += -logl(
          expl(static_cast<long double>(logits.data()[i * k + labels[i]])) / denom);
    }
    expected /= n;
    CHECK(nn::softmax_cross_entropy(logits, labels).item() ==
          doctest::Approx(static_cast<real_t>(expected)).epsilon(1e-6));
  }
}

TEST_CASE("train_defense: loss decreases on a smoke run") {
  TinyWorld w = make_tiny_world(31);
  pipeline::DefensePipeline defense(tiny_pipeline_config(), 13);
  TrainConfig cfg = tiny_train_config(w);
  cfg.epochs = 3;
  cfg.val_attack_size = 0;
  const auto log = train_defense(defense, w.ds.train, ImageBatch{}, cfg);
  REQUIRE(log.size() == 3);
  CHECK(log.back().loss_total < log.front().loss_total);
}

TEST_CASE("train_defense: zero weights leave parameters untouched") {
  TinyWorld w = make_tiny_world(32);
  pipeline::DefensePipeline defense(tiny_pipeline_config(), 14);
  const uint64_t before = defense.checksum();
  TrainConfig cfg = tiny_train_config(w);
  cfg.weights = LossWeights{0.0, 0.0, 0.0};
  cfg.val_attack_size = 0;
  train_defense(defense, w.ds.train, ImageBatch{}, cfg);
  CHECK(defense.checksum() == before);
}

TEST_CASE("train_defense: frozen networks stay frozen and logs reproduce") {
  TinyWorld w = make_tiny_world(33);
  const uint64_t target_before = w.target->checksum();
  const uint64_t fbeta_before = w.fbeta->checksum();

  pipeline::DefensePipeline d1(tiny_pipeline_config(), 15);
  pipeline::DefensePipeline d2(tiny_pipeline_config(), 15);
  TrainConfig cfg = tiny_train_config(w);
  const auto log1 = train_defense(d1, w.ds.train, w.ds.test, cfg);
  const auto log2 = train_defense(d2, w.ds.train, w.ds.test, cfg);

  CHECK(w.target->checksum() == target_before);
  CHECK(w.fbeta->checksum() == fbeta_before);
  CHECK(d1.checksum() == d2.checksum());
  REQUIRE(log1.size() == log2.size());
  for (size_t i = 0; i < log1.size(); ++i) {
    CHECK(log1[i].loss_total == log2[i].loss_total);
    CHECK(log1[i].val_pgd_acc == log2[i].val_pgd_acc);
  }
  // losses are nonnegative and finite throughout
  for (const auto& e : log1) {
    CHECK(e.loss_p >= 0.0);
    CHECK(e.loss_a >= 0.0);
    CHECK(e.loss_c >= 0.0);
    CHECK(std::isfinite(e.loss_total));
  }
}

TEST_CASE("train_defense: poisoned parameters abort with diagnostics") {
  TinyWorld w = make_tiny_world(34);
  pipeline::DefensePipeline defense(tiny_pipeline_config(), 16);
  for (auto& [name, t] : defense.param_map().params)
    if (name == "cleaner.out.weight") t.data()[0] = std::nan("");
  TrainConfig cfg = tiny_train_config(w);
  cfg.val_attack_size = 0;
  CHECK_THROWS_AS(train_defense(defense, w.ds.train, ImageBatch{}, cfg), InternalError);
}

TEST_CASE("train_defense: epoch log csv layout") {
  std::vector<EpochLog> log(2);
  log[0] = {0, 1.5, 0.5, 0.25, 0.75, 0.9, 0.4};
  log[1] = {1, 1.0, 0.4, 0.2, 0.4, 0.92, 0.55};
  const auto dir = std::filesystem::temp_directory_path() / "egcfl_trainlog";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "log.csv").string();
  write_train_log(log, path);
  const std::string text = io::read_file(path);
  CHECK(text.rfind("epoch,loss_total,loss_p,loss_a,loss_c,val_clean_acc,val_pgd_acc",
                   0) == 0);
  CHECK(text.find("\n1,") != std::string::npos);
}

TEST_CASE("full defended loss gradients match finite differences") {
  // masked deadzone backward (the true a.e. gradient) on a tiny instance
  TinyWorld w = make_tiny_world(35);
  pipeline::PipelineConfig pcfg = tiny_pipeline_config();
  pcfg.delta = 0.05;
  pipeline::DefensePipeline defense(pcfg, 17);

  Rng rng(18);
  nn::Tensor x = nn::Tensor::zeros({1, 3, 8, 8});
  rng.fill_uniform(x.data(), static_cast<size_t>(x.size()), 0.1, 0.9);
  const std::vector<int> labels = {4};

  auto params = defense.param_map();
  params.set_requires_grad(true);
  std::vector<nn::Tensor> leaves;
  for (const auto& [name, t] : params.params) leaves.push_back(t);

  const LossWeights weights;
  auto builder = [&] {
    const auto trace = defense.run(x, 2, nn::DeadzoneBackward::kMasked);
    nn::Tensor l_p, l_a, l_c;
    for (int k = 0; k < 2; ++k) {
      nn::Tensor p = perceptual_loss(*w.fbeta, x, trace.fused[static_cast<size_t>(k)]);
      nn::Tensor a = nn::sq_l2_batchmean(trace.estimates[static_cast<size_t>(k)], x);
      nn::Tensor c =
          classification_loss(*w.target, trace.fused[static_cast<size_t>(k)], labels);
      l_p = k == 0 ? p : nn::add(l_p, p);
      l_a = k == 0 ? a : nn::add(l_a, a);
      l_c = k == 0 ? c : nn::add(l_c, c);
    }
    return total_loss(weights, l_p, l_a, l_c);
  };
  const auto rep = nn::check_gradients(builder, leaves, 1e-5, 8);
  INFO("max rel err ", rep.max_rel_err, " over ", rep.checked, " probes");
  CHECK(rep.ok());
}
