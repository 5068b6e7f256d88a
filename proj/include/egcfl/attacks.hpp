#pragma once

#include <memory>
#include <string>
#include <vector>

#include "egcfl/batch.hpp"
#include "egcfl/classifier.hpp"

namespace egcfl::attacks {

enum class AttackFamily { kFgs, kBim, kPgd, kCwL2, kBpda, kBlackBox };

std::string family_name(AttackFamily family);
AttackFamily family_from_name(const std::string& name);

struct AttackSpec {
  AttackFamily family = AttackFamily::kPgd;
  real_t epsilon = 8.0 / 255.0;   // L-inf budget, pixel units
  real_t step_size = 1.0 / 255.0; // per-iteration L-inf step
  int iterations = 10;
  bool random_start = true;       // uniform init in the epsilon ball
  real_t cw_confidence = 0.0;
  int cw_steps = 100;
  real_t cw_lr = 0.01;
  uint64_t seed = 0;
};

// Family defaults: BIM is the random_start=false alias of PGD; FGS is the
// single-step limit.
AttackSpec make_spec(AttackFamily family);
void validate_spec(const AttackSpec& spec);

// Minimal surface the attack loops need: a differentiable map from images to
// logits. Adapters exist for a bare classifier and (in the pipeline module)
// for the unrolled defense + classifier composition.
class DifferentiableModel {
 public:
  virtual ~DifferentiableModel() = default;
  virtual nn::Tensor logits(const nn::Tensor& images) const = 0;
  virtual int num_classes() const = 0;
  virtual bool provides_input_gradient() const { return true; }
};

class ClassifierModel final : public DifferentiableModel {
 public:
  explicit ClassifierModel(Classifier& classifier) : classifier_(&classifier) {}
  nn::Tensor logits(const nn::Tensor& images) const override {
    return classifier_->logits(images, false);
  }
  int num_classes() const override { return classifier_->num_classes(); }

 private:
  Classifier* classifier_;
};

struct AttackResult {
  ImageBatch attacked;
  std::vector<real_t> linf_norm;  // per image max |x* - x|
  std::vector<real_t> l2_norm;    // per image ||x* - x||_2
  std::vector<uint8_t> success_mask;  // model misclassifies

  real_t success_rate() const;
  real_t max_linf() const;
  real_t mean_l2() const;
};

// x* = clamp(x + eps * sign(grad_x CE), 0, 1)
AttackResult fgs(const DifferentiableModel& model, const ImageBatch& batch,
                 real_t epsilon);

// Iterated sign steps with projection to the epsilon ball and [0,1] clamping;
// covers both PGD (random start) and BIM (deterministic start).
AttackResult pgd(const DifferentiableModel& model, const ImageBatch& batch,
                 const AttackSpec& spec);

// Fixed-tradeoff Carlini-Wagner L2: minimizes ||delta||^2 + c * hinge margin
// by adaptive-moment descent, c = 1, no binary search.
AttackResult cw_l2(const DifferentiableModel& model, const ImageBatch& batch,
                   const AttackSpec& spec);

// PGD through an end-to-end defended model whose non-differentiable stages
// carry surrogate gradients (assembled by the caller).
AttackResult bpda(const DifferentiableModel& defended_model, const ImageBatch& batch,
                  const AttackSpec& spec);

// Transfer attack: white-box generation against the substitute, success
// evaluated on the target.
AttackResult black_box(const DifferentiableModel& substitute,
                       const DifferentiableModel& target, const ImageBatch& batch,
                       const AttackSpec& spec);

// Accuracy of `model` on a labeled batch (no gradients).
real_t model_accuracy(const DifferentiableModel& model, const ImageBatch& batch);

}  // namespace egcfl::attacks
