#include "egcfl/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "egcfl/nn/optim.hpp"

namespace egcfl::attacks {

using namespace nn;

namespace {

// Attacks run over fixed-size chunks so graph memory stays bounded and the
// random-start stream is independent of the caller's batching.
constexpr int kChunk = 64;

real_t sign_of(real_t v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void require_gradients(const DifferentiableModel& model, const char* who) {
  if (!model.provides_input_gradient())
    throw UnsupportedModel(std::string(who) + ": model does not expose input gradients");
}

std::vector<int> predict(const DifferentiableModel& model, const Tensor& images) {
  NoGradGuard ng;
  std::vector<int> out;
  const int n = images.dim(0);
  const int64_t stride = images.size() / n;
  for (int begin = 0; begin < n; begin += kChunk) {
    const int count = std::min(kChunk, n - begin);
    Shape s = images.shape();
    s[0] = count;
    Tensor chunk = Tensor::zeros(s);
    std::copy_n(images.data() + begin * stride, count * stride, chunk.data());
    const auto pred = argmax_rows(model.logits(chunk));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

AttackResult finish_result(const DifferentiableModel& eval_model,
                           const ImageBatch& original, Tensor attacked) {
  AttackResult res;
  res.attacked.images = std::move(attacked);
  res.attacked.labels = original.labels;
  const int n = original.count();
  const int64_t stride = original.images.size() / n;
  res.linf_norm.resize(static_cast<size_t>(n));
  res.l2_norm.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    real_t linf = 0.0, l2 = 0.0;
    const real_t* a = res.attacked.images.data() + i * stride;
    const real_t* b = original.images.data() + i * stride;
    for (int64_t j = 0; j < stride; ++j) {
      const real_t d = a[j] - b[j];
      linf = std::max(linf, std::fabs(d));
      l2 += d * d;
    }
    res.linf_norm[static_cast<size_t>(i)] = linf;
    res.l2_norm[static_cast<size_t>(i)] = std::sqrt(l2);
  }
  const auto pred = predict(eval_model, res.attacked.images);
  res.success_mask.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    res.success_mask[static_cast<size_t>(i)] =
        pred[static_cast<size_t>(i)] != original.labels[static_cast<size_t>(i)] ? 1 : 0;
  return res;
}

void validate_batch(const ImageBatch& batch, const char* who) {
  if (!batch.images.defined() || batch.images.ndim() != 4)
    throw InvalidArgument(std::string(who) + ": batch must hold a (N,C,H,W) tensor");
  if (static_cast<int>(batch.labels.size()) != batch.count())
    throw InvalidArgument(std::string(who) + ": label count mismatch");
}

// Shared sign-gradient loop. The perturbation is carried per pixel and
// projected after every step; the model always sees clamp01(orig + delta).
Tensor sign_attack_core(const DifferentiableModel& model, const ImageBatch& batch,
                        real_t epsilon, real_t step, int iterations, bool random_start,
                        uint64_t seed) {
  const Tensor& orig = batch.images;
  Tensor out = orig.detach();
  const int n = batch.count();
  const int64_t stride = orig.size() / n;

  for (int begin = 0, chunk_index = 0; begin < n; begin += kChunk, ++chunk_index) {
    const int count = std::min(kChunk, n - begin);
    const int64_t chunk_elems = count * stride;
    const real_t* ob = orig.data() + begin * stride;

    std::vector<real_t> delta(static_cast<size_t>(chunk_elems), 0.0);
    if (random_start) {
      Rng rng(Rng::substream(seed, 0xA77ACF + static_cast<uint64_t>(chunk_index)));
      rng.fill_uniform(delta.data(), delta.size(), -epsilon, epsilon);
    }

    Shape cs = orig.shape();
    cs[0] = count;
    std::vector<int> labels(batch.labels.begin() + begin,
                            batch.labels.begin() + begin + count);
    for (int it = 0; it < iterations; ++it) {
      Tensor x = Tensor::zeros(cs, true);
      for (int64_t j = 0; j < chunk_elems; ++j) x.data()[j] = clamp01(ob[j] + delta[j]);
      Tensor loss = softmax_cross_entropy(model.logits(x), labels);
      loss.backward();
      const real_t* g = x.grad();
      for (int64_t j = 0; j < chunk_elems; ++j) {
        const real_t d = delta[j] + step * sign_of(g[j]);
        delta[j] = d < -epsilon ? -epsilon : (d > epsilon ? epsilon : d);
      }
    }
    real_t* dst = out.data() + begin * stride;
    for (int64_t j = 0; j < chunk_elems; ++j) dst[j] = clamp01(ob[j] + delta[j]);
  }
  return out;
}

}  // namespace

std::string family_name(AttackFamily family) {
  switch (family) {
    case AttackFamily::kFgs: return "fgs";
    case AttackFamily::kBim: return "bim";
    case AttackFamily::kPgd: return "pgd";
    case AttackFamily::kCwL2: return "cw";
    case AttackFamily::kBpda: return "bpda";
    case AttackFamily::kBlackBox: return "black_box";
  }
  return "unknown";
}

AttackFamily family_from_name(const std::string& name) {
  if (name == "fgs" || name == "fgsm") return AttackFamily::kFgs;
  if (name == "bim") return AttackFamily::kBim;
  if (name == "pgd") return AttackFamily::kPgd;
  if (name == "cw") return AttackFamily::kCwL2;
  if (name == "bpda") return AttackFamily::kBpda;
  if (name == "black_box" || name == "blackbox") return AttackFamily::kBlackBox;
  throw InvalidArgument("unknown attack family: " + name);
}

AttackSpec make_spec(AttackFamily family) {
  AttackSpec spec;
  spec.family = family;
  switch (family) {
    case AttackFamily::kFgs:
      spec.iterations = 1;
      spec.step_size = spec.epsilon;
      spec.random_start = false;
      break;
    case AttackFamily::kBim:
      spec.random_start = false;
      break;
    case AttackFamily::kPgd:
    case AttackFamily::kBpda:
    case AttackFamily::kBlackBox:
      spec.random_start = true;
      break;
    case AttackFamily::kCwL2:
      break;
  }
  return spec;
}

void validate_spec(const AttackSpec& spec) {
  if (spec.epsilon < 0.0 || spec.epsilon > 1.0)
    throw InvalidArgument("AttackSpec: epsilon must lie in [0,1]");
  if (spec.step_size < 0.0 || spec.step_size > spec.epsilon)
    throw InvalidArgument("AttackSpec: need 0 <= step_size <= epsilon");
  if (spec.iterations < 1) throw InvalidArgument("AttackSpec: iterations must be >= 1");
  if (spec.cw_confidence < 0.0)
    throw InvalidArgument("AttackSpec: cw_confidence must be nonnegative");
  if (spec.cw_lr <= 0.0) throw InvalidArgument("AttackSpec: cw_lr must be positive");
}

real_t AttackResult::success_rate() const {
  if (success_mask.empty()) return 0.0;
  real_t s = 0.0;
  for (uint8_t v : success_mask) s += v;
  return s / static_cast<real_t>(success_mask.size());
}

real_t AttackResult::max_linf() const {
  real_t m = 0.0;
  for (real_t v : linf_norm) m = std::max(m, v);
  return m;
}

real_t AttackResult::mean_l2() const {
  if (l2_norm.empty()) return 0.0;
  real_t s = 0.0;
  for (real_t v : l2_norm) s += v;
  return s / static_cast<real_t>(l2_norm.size());
}

AttackResult fgs(const DifferentiableModel& model, const ImageBatch& batch,
                 real_t epsilon) {
  validate_batch(batch, "fgs");
  require_gradients(model, "fgs");
  if (epsilon < 0.0 || epsilon > 1.0)
    throw InvalidArgument("fgs: epsilon must lie in [0,1]");
  Tensor attacked = sign_attack_core(model, batch, epsilon, epsilon, 1, false, 0);
  return finish_result(model, batch, std::move(attacked));
}

AttackResult pgd(const DifferentiableModel& model, const ImageBatch& batch,
                 const AttackSpec& spec) {
  validate_batch(batch, "pgd");
  require_gradients(model, "pgd");
  validate_spec(spec);
  if (spec.family != AttackFamily::kPgd && spec.family != AttackFamily::kBim &&
      spec.family != AttackFamily::kBpda && spec.family != AttackFamily::kBlackBox &&
      spec.family != AttackFamily::kFgs)
    throw InvalidArgument("pgd: spec family is not an iterative sign attack");
  const bool random_start =
      spec.family == AttackFamily::kBim ? false : spec.random_start;
  Tensor attacked = sign_attack_core(model, batch, spec.epsilon, spec.step_size,
                                     spec.iterations, random_start, spec.seed);
  return finish_result(model, batch, std::move(attacked));
}

AttackResult cw_l2(const DifferentiableModel& model, const ImageBatch& batch,
                   const AttackSpec& spec) {
  validate_batch(batch, "cw_l2");
  require_gradients(model, "cw_l2");
  if (spec.family != AttackFamily::kCwL2)
    throw InvalidArgument("cw_l2: spec family mismatch");
  if (spec.cw_steps <= 0) return finish_result(model, batch, batch.images.detach());

  constexpr real_t kTradeoff = 1.0;  // fixed constant, no binary search
  const Tensor& orig = batch.images;
  Tensor out = orig.detach();
  const int n = batch.count();
  const int64_t stride = orig.size() / n;

  for (int begin = 0; begin < n; begin += kChunk) {
    const int count = std::min(kChunk, n - begin);
    Shape cs = orig.shape();
    cs[0] = count;
    Tensor base = Tensor::zeros(cs);
    std::copy_n(orig.data() + begin * stride, count * stride, base.data());
    std::vector<int> labels(batch.labels.begin() + begin,
                            batch.labels.begin() + begin + count);

    Tensor delta = Tensor::zeros(cs, true);
    Adam opt({delta}, spec.cw_lr);
    for (int step = 0; step < spec.cw_steps; ++step) {
      opt.zero_grad();
      Tensor adv = clamp(add(base, delta), 0.0, 1.0);
      Tensor margin = cw_margin_sum(model.logits(adv), labels, spec.cw_confidence);
      Tensor objective =
          weighted_sum({{1.0, sum_sq(delta)}, {kTradeoff, margin}});
      objective.backward();
      opt.step();
    }
    real_t* dst = out.data() + begin * stride;
    for (int64_t j = 0; j < count * stride; ++j)
      dst[j] = clamp01(base.data()[j] + delta.data()[j]);
  }
  return finish_result(model, batch, std::move(out));
}

AttackResult bpda(const DifferentiableModel& defended_model, const ImageBatch& batch,
                  const AttackSpec& spec) {
  validate_batch(batch, "bpda");
  require_gradients(defended_model, "bpda");
  validate_spec(spec);
  const bool random_start =
      spec.family == AttackFamily::kBim ? false : spec.random_start;
  Tensor attacked = sign_attack_core(defended_model, batch, spec.epsilon,
                                     spec.step_size, spec.iterations, random_start,
                                     spec.seed);
  return finish_result(defended_model, batch, std::move(attacked));
}

AttackResult black_box(const DifferentiableModel& substitute,
                       const DifferentiableModel& target, const ImageBatch& batch,
                       const AttackSpec& spec) {
  validate_batch(batch, "black_box");
  require_gradients(substitute, "black_box");
  AttackSpec white = spec;
  // remap to the white-box family run against the substitute
  if (white.family == AttackFamily::kBlackBox) white.family = AttackFamily::kPgd;
  if (white.family != AttackFamily::kFgs && white.family != AttackFamily::kPgd &&
      white.family != AttackFamily::kBim)
    throw InvalidArgument("black_box: transfer supports fgs/bim/pgd");
  validate_spec(white);
  const bool random_start =
      white.family == AttackFamily::kBim || white.family == AttackFamily::kFgs
          ? false
          : white.random_start;
  const int iterations = white.family == AttackFamily::kFgs ? 1 : white.iterations;
  const real_t step =
      white.family == AttackFamily::kFgs ? white.epsilon : white.step_size;
  Tensor attacked = sign_attack_core(substitute, batch, white.epsilon, step, iterations,
                                     random_start, white.seed);
  return finish_result(target, batch, std::move(attacked));
}

real_t model_accuracy(const DifferentiableModel& model, const ImageBatch& batch) {
  validate_batch(batch, "model_accuracy");
  const auto pred = predict(model, batch.images);
  if (pred.empty()) return 0.0;
  int64_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == batch.labels[i]) ++hits;
  return static_cast<real_t>(hits) / static_cast<real_t>(pred.size());
}

}  // namespace egcfl::attacks
