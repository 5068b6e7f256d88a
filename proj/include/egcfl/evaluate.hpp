#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "egcfl/attacks.hpp"
#include "egcfl/pipeline.hpp"
#include "egcfl/training.hpp"

namespace egcfl::harness {

struct EvalOptions {
  int k_test = 3;
  int eval_size = 0;  // 0: whole test set, else its first n images
  uint64_t seed = 0;  // derives per-row attack seeds when a spec leaves seed=0
  std::string defense_variant = "none";
  Classifier* substitute = nullptr;  // needed by black_box rows
  nlohmann::json dataset_tag;        // recorded into row metadata
};

struct EvalRow {
  std::string defense_variant;
  std::string attack;  // "none" for the clean row
  real_t epsilon = 0.0;
  int iterations = 0;
  real_t accuracy = 0.0;
  nlohmann::json metadata;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  nlohmann::json metadata;
  bool complete = true;  // false when rows were skipped

  const EvalRow* find(const std::string& variant, const std::string& attack) const;
};

// Runs the clean row plus one row per attack spec. With a defense present,
// white-box attacks are generated against the unrolled defense + classifier
// (straight-through deadzone for BPDA, the true masked gradient otherwise)
// and accuracy is measured end to end. Mismatched rows (e.g. black_box
// without a substitute) are skipped with a warning and mark the report
// incomplete.
EvalReport evaluate(Classifier& classifier, pipeline::DefensePipeline* defense,
                    const ImageBatch& test_set,
                    const std::vector<attacks::AttackSpec>& specs,
                    const EvalOptions& options);

// Re-runs a single row from its recorded metadata; bit-identical accuracy is
// the reproducibility contract.
real_t regenerate_row(const EvalRow& row, Classifier& classifier,
                      pipeline::DefensePipeline* defense, const ImageBatch& test_set,
                      Classifier* substitute = nullptr);

// report.csv + report.json under dir; the text table mirrors a
// variants-by-attacks accuracy grid.
void write_report(const EvalReport& report, const std::string& dir,
                  const std::string& name);
std::string render_text_table(const EvalReport& report);

// ---------------------------------------------------------------------------

struct AblateOutcome {
  EvalReport report;
  std::unique_ptr<pipeline::DefensePipeline> full, without_transform,
      without_feedback;
};

// Trains the full pipeline and the two reduced variants (transform stage
// disabled; single loop with no fusion recursion) with shared seeds, then
// evaluates each under the given attacks.
AblateOutcome ablate(Classifier& classifier, Classifier* feature_net,
                     const ImageBatch& train, const ImageBatch& val,
                     const ImageBatch& test, const pipeline::PipelineConfig& arch,
                     const training::TrainConfig& train_cfg,
                     const std::vector<attacks::AttackSpec>& specs,
                     const EvalOptions& options);

enum class SweepAxis { kIterations, kEpsilon, kKTest };
std::string sweep_axis_name(SweepAxis axis);
SweepAxis sweep_axis_from_name(const std::string& name);

// Evaluates each attack family along the axis; emits CSV plus a line plot
// (one series per family) when out_dir is nonempty. Values must be sorted
// ascending and nonempty.
EvalReport sweep(Classifier& classifier, pipeline::DefensePipeline* defense,
                 const ImageBatch& test_set, SweepAxis axis,
                 const std::vector<real_t>& values,
                 const std::vector<attacks::AttackSpec>& base_specs,
                 const EvalOptions& options, const std::string& out_dir = "");

}  // namespace egcfl::harness
