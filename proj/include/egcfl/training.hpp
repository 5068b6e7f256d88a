#pragma once

#include <string>
#include <vector>

#include "egcfl/attacks.hpp"
#include "egcfl/pipeline.hpp"

namespace egcfl::training {

struct LossWeights {
  real_t lambda1 = 1.0 / 3.0;  // perceptual
  real_t lambda2 = 1.0 / 3.0;  // reconstruction of the loop output
  real_t lambda3 = 1.0 / 3.0;  // classification
};

void validate_weights(const LossWeights& w);

// Batch-mean squared distance between frozen-network features of the clean
// image and the recovered image.
nn::Tensor perceptual_loss(Classifier& feature_net, const nn::Tensor& x,
                           const nn::Tensor& x_hat);

// Recomputes the cleaning loop output from (reference, previous estimate) and
// penalizes its pixel-space distance to the clean original.
nn::Tensor adversarial_loss(const pipeline::DefensePipeline& defense,
                            const nn::Tensor& reference, const nn::Tensor& estimate,
                            const nn::Tensor& x);

// Cross-entropy of the frozen target classifier on a recovered image against
// the clean ground-truth labels.
nn::Tensor classification_loss(Classifier& target_classifier, const nn::Tensor& fused,
                               const std::vector<int>& labels);

real_t total_loss(const LossWeights& w, real_t l_p, real_t l_a, real_t l_c);
nn::Tensor total_loss(const LossWeights& w, const nn::Tensor& l_p, const nn::Tensor& l_a,
                      const nn::Tensor& l_c);

struct TrainConfig {
  LossWeights weights;
  attacks::AttackSpec attack_spec = attacks::make_spec(attacks::AttackFamily::kPgd);
  int train_loops = 3;  // unrolled loops during training
  int epochs = 30;
  int batch_size = 64;
  real_t learning_rate = 1e-3;
  uint64_t seed = 0;
  int val_attack_size = 128;  // validation subset for the per-epoch attacked accuracy
  Classifier* target_classifier = nullptr;  // frozen
  Classifier* feature_net = nullptr;        // frozen
};

struct EpochLog {
  int epoch = 0;
  real_t loss_total = 0, loss_p = 0, loss_a = 0, loss_c = 0;
  real_t val_clean_acc = 0, val_pgd_acc = 0;
};

// Joint training of all pipeline networks against PGD-perturbed inputs.
// The target classifier and feature network stay frozen; any gradient
// reaching them, or a non-finite loss, aborts with diagnostics.
std::vector<EpochLog> train_defense(pipeline::DefensePipeline& defense,
                                    const ImageBatch& train, const ImageBatch& val,
                                    const TrainConfig& config);

// CSV columns: epoch,loss_total,loss_p,loss_a,loss_c,val_clean_acc,val_pgd_acc
void write_train_log(const std::vector<EpochLog>& log, const std::string& csv_path);

}  // namespace egcfl::training
