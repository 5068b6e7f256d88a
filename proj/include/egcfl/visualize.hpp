#pragma once

#include <string>
#include <vector>

#include "egcfl/attacks.hpp"
#include "egcfl/pipeline.hpp"

namespace egcfl::harness {

struct VisualizeResult {
  std::vector<std::string> files;
  // mean feature-map L2 distances to the clean images over all samples
  real_t attacked_feature_distance = 0.0;
  real_t defended_feature_distance = 0.0;
};

struct VisualizeOptions {
  attacks::AttackSpec attack = attacks::make_spec(attacks::AttackFamily::kPgd);
  int k_test = 3;
  // activation tap counted back from the classifier's last activation layer
  int tap_from_end = 3;
  int upscale = 4;
  int max_panels = 8;  // per-sample heatmap files emitted for the first n samples
};

// Emits, per sample, a clean/attacked/cleaned image strip (plus the loop
// estimates) and per-state heatmap panels: image, feature-map magnitude, and
// gradient-weighted class-activation overlay. Also measures mean feature
// distances of attacked and defended images to the clean ones.
VisualizeResult visualize(Classifier& classifier, pipeline::DefensePipeline& defense,
                          const ImageBatch& samples, const VisualizeOptions& options,
                          const std::string& out_dir);

}  // namespace egcfl::harness
