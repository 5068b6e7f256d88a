#include "egcfl/training.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

#include "egcfl/io/fsutil.hpp"
#include "egcfl/nn/optim.hpp"

namespace egcfl::training {

using namespace nn;

void validate_weights(const LossWeights& w) {
  // All-zero weights are allowed: they define the degenerate zero loss
  // surface under which training is a provable no-op.
  if (w.lambda1 < 0.0 || w.lambda2 < 0.0 || w.lambda3 < 0.0)
    throw InvalidArgument("LossWeights: weights must be nonnegative");
}

Tensor perceptual_loss(Classifier& feature_net, const Tensor& x, const Tensor& x_hat) {
  if (!x.defined() || !x_hat.defined() || x.shape() != x_hat.shape())
    throw InvalidArgument("perceptual_loss: shape mismatch");
  Tensor clean_features;
  {
    NoGradGuard ng;  // the clean-image branch is a constant
    clean_features = feature_net.features(x, false);
  }
  return sq_l2_batchmean(clean_features, feature_net.features(x_hat, false));
}

Tensor adversarial_loss(const pipeline::DefensePipeline& defense, const Tensor& reference,
                        const Tensor& estimate, const Tensor& x) {
  if (!x.defined() || x.shape() != reference.shape() || x.shape() != estimate.shape())
    throw InvalidArgument("adversarial_loss: shape mismatch");
  return sq_l2_batchmean(defense.feedback_step(reference, estimate), x);
}

Tensor classification_loss(Classifier& target_classifier, const Tensor& fused,
                           const std::vector<int>& labels) {
  return softmax_cross_entropy(target_classifier.logits(fused, false), labels);
}

real_t total_loss(const LossWeights& w, real_t l_p, real_t l_a, real_t l_c) {
  return w.lambda1 * l_p + w.lambda2 * l_a + w.lambda3 * l_c;
}

Tensor total_loss(const LossWeights& w, const Tensor& l_p, const Tensor& l_a,
                  const Tensor& l_c) {
  return weighted_sum({{w.lambda1, l_p}, {w.lambda2, l_a}, {w.lambda3, l_c}});
}

namespace {

void check_frozen_clean(const ParamMap& params, const char* who) {
  for (const auto& [name, t] : params.params) {
    if (!t.has_grad()) continue;
    for (real_t g : t.grad_values())
      if (g != 0.0)
        throw InternalError(std::string("train_defense: gradient reached frozen ") +
                            who + " parameter '" + name + "'");
  }
}

}  // namespace

std::vector<EpochLog> train_defense(pipeline::DefensePipeline& defense,
                                    const ImageBatch& train, const ImageBatch& val,
                                    const TrainConfig& config) {
  validate_weights(config.weights);
  if (config.target_classifier == nullptr)
    throw InvalidArgument("train_defense: target classifier is required");
  if (config.train_loops < 1 || config.epochs < 1 || config.batch_size < 1)
    throw InvalidArgument("train_defense: bad loop/epoch/batch configuration");
  if (train.count() < 1) throw InvalidArgument("train_defense: empty training set");
  Classifier& target = *config.target_classifier;
  Classifier& fbeta =
      config.feature_net != nullptr ? *config.feature_net : *config.target_classifier;

  target.set_frozen(true);
  fbeta.set_frozen(true);
  // drop any gradient buffers left over from their own pretraining so the
  // frozen-flow check below sees only gradients written by this run
  target.param_map().clear_grads();
  fbeta.param_map().clear_grads();
  const uint64_t target_sum_before = target.checksum();
  const uint64_t fbeta_sum_before = fbeta.checksum();

  auto params = defense.param_map();
  params.set_requires_grad(true);
  Adam opt(params.tensors(), config.learning_rate);
  attacks::ClassifierModel target_model(target);

  std::vector<int> order(static_cast<size_t>(train.count()));
  for (int i = 0; i < train.count(); ++i) order[static_cast<size_t>(i)] = i;

  std::vector<EpochLog> logs;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(Rng::substream(config.seed, 0x7E41 + static_cast<uint64_t>(epoch)));
    for (int i = train.count() - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(rng.uniform_int(i + 1))]);

    EpochLog log;
    log.epoch = epoch;
    int batches = 0;
    for (int begin = 0; begin < train.count(); begin += config.batch_size, ++batches) {
      const int n = std::min(config.batch_size, train.count() - begin);
      std::vector<int> idx(order.begin() + begin, order.begin() + begin + n);
      const ImageBatch clean = gather(train, idx);

      // fresh adversarial inputs for this batch
      attacks::AttackSpec attack = config.attack_spec;
      attack.seed = Rng::substream(
          config.seed, 0xA12C + static_cast<uint64_t>(epoch) * 131071 +
                           static_cast<uint64_t>(batches));
      const ImageBatch perturbed =
          attacks::pgd(target_model, clean, attack).attacked;

      opt.zero_grad();
      const auto trace = defense.run(perturbed.images, config.train_loops,
                                     DeadzoneBackward::kStraightThrough);
      // per-loop losses summed with equal weight
      Tensor l_p, l_a, l_c;
      for (int k = 0; k < config.train_loops; ++k) {
        Tensor p_k = perceptual_loss(fbeta, clean.images, trace.fused[k]);
        Tensor a_k = sq_l2_batchmean(trace.estimates[k], clean.images);
        Tensor c_k = classification_loss(target, trace.fused[k], clean.labels);
        l_p = k == 0 ? p_k : add(l_p, p_k);
        l_a = k == 0 ? a_k : add(l_a, a_k);
        l_c = k == 0 ? c_k : add(l_c, c_k);
      }
      Tensor loss = total_loss(config.weights, l_p, l_a, l_c);
      const real_t lv = loss.item();
      if (!std::isfinite(lv)) {
        std::ostringstream msg;
        msg << "train_defense: non-finite loss at epoch " << epoch << " batch "
            << batches << " (p=" << l_p.item() << " a=" << l_a.item()
            << " c=" << l_c.item() << ")";
        throw InternalError(msg.str());
      }
      loss.backward();
      if (epoch == 0 && batches == 0) {
        check_frozen_clean(target.param_map(), "target classifier");
        check_frozen_clean(fbeta.param_map(), "feature network");
      }
      opt.step();

      log.loss_total += lv;
      log.loss_p += l_p.item();
      log.loss_a += l_a.item();
      log.loss_c += l_c.item();
    }
    log.loss_total /= batches;
    log.loss_p /= batches;
    log.loss_a /= batches;
    log.loss_c /= batches;

    // validation: clean accuracy through the defense, and accuracy under a
    // white-box attack on the defended model
    if (val.count() > 0) {
      const int vn = std::min(val.count(), config.val_attack_size);
      const ImageBatch val_subset = val.slice(0, vn);
      pipeline::DefendedModel defended(defense, target, config.train_loops,
                                       DeadzoneBackward::kMasked);
      log.val_clean_acc = attacks::model_accuracy(defended, val_subset);
      attacks::AttackSpec val_attack = config.attack_spec;
      val_attack.seed = Rng::substream(config.seed, 0x7A1 + static_cast<uint64_t>(epoch));
      const auto attacked = attacks::pgd(defended, val_subset, val_attack);
      log.val_pgd_acc = 1.0 - attacked.success_rate();
    }
    logs.push_back(log);
  }

  if (target.checksum() != target_sum_before)
    throw InternalError("train_defense: frozen target classifier changed");
  if (fbeta.checksum() != fbeta_sum_before)
    throw InternalError("train_defense: frozen feature network changed");
  return logs;
}

void write_train_log(const std::vector<EpochLog>& log, const std::string& csv_path) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(log.size());
  for (const auto& e : log)
    rows.push_back({std::to_string(e.epoch), io::format_real(e.loss_total),
                    io::format_real(e.loss_p), io::format_real(e.loss_a),
                    io::format_real(e.loss_c), io::format_real(e.val_clean_acc),
                    io::format_real(e.val_pgd_acc)});
  io::write_csv(csv_path,
                {"epoch", "loss_total", "loss_p", "loss_a", "loss_c", "val_clean_acc",
                 "val_pgd_acc"},
                rows);
}

}  // namespace egcfl::training
