#include "egcfl/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include "egcfl/io/fsutil.hpp"
#include "egcfl/io/plot.hpp"

namespace egcfl::harness {

using attacks::AttackFamily;
using attacks::AttackSpec;
using nlohmann::json;

namespace {

json spec_to_json(const AttackSpec& spec) {
  return json{{"family", attacks::family_name(spec.family)},
              {"epsilon", spec.epsilon},
              {"step_size", spec.step_size},
              {"iterations", spec.iterations},
              {"random_start", spec.random_start},
              {"cw_confidence", spec.cw_confidence},
              {"cw_steps", spec.cw_steps},
              {"cw_lr", spec.cw_lr},
              {"seed", spec.seed}};
}

AttackSpec spec_from_json(const json& j) {
  AttackSpec spec;
  spec.family = attacks::family_from_name(j.at("family").get<std::string>());
  spec.epsilon = j.at("epsilon").get<real_t>();
  spec.step_size = j.at("step_size").get<real_t>();
  spec.iterations = j.at("iterations").get<int>();
  spec.random_start = j.at("random_start").get<bool>();
  spec.cw_confidence = j.at("cw_confidence").get<real_t>();
  spec.cw_steps = j.at("cw_steps").get<int>();
  spec.cw_lr = j.at("cw_lr").get<real_t>();
  spec.seed = j.at("seed").get<uint64_t>();
  return spec;
}

ImageBatch eval_subset(const ImageBatch& test_set, int eval_size) {
  if (eval_size <= 0 || eval_size >= test_set.count()) return test_set;
  return test_set.slice(0, eval_size);
}

// Runs one attack row and returns post-attack accuracy of the evaluated
// surface (defended when a defense is present).
real_t run_attack_row(Classifier& classifier, pipeline::DefensePipeline* defense,
                      Classifier* substitute, const ImageBatch& subset,
                      const AttackSpec& spec, int k_test) {
  attacks::ClassifierModel bare(classifier);

  if (spec.family == AttackFamily::kBlackBox) {
    if (substitute == nullptr)
      throw InvalidArgument("black_box row requires a substitute classifier");
    attacks::ClassifierModel sub_model(*substitute);
    if (defense == nullptr)
      return 1.0 - attacks::black_box(sub_model, bare, subset, spec).success_rate();
    pipeline::DefendedModel defended(*defense, classifier, k_test,
                                     nn::DeadzoneBackward::kMasked);
    return 1.0 - attacks::black_box(sub_model, defended, subset, spec).success_rate();
  }

  const nn::DeadzoneBackward mode = spec.family == AttackFamily::kBpda
                                        ? nn::DeadzoneBackward::kStraightThrough
                                        : nn::DeadzoneBackward::kMasked;
  std::optional<pipeline::DefendedModel> defended;
  const attacks::DifferentiableModel* model = &bare;
  if (defense != nullptr) {
    defended.emplace(*defense, classifier, k_test, mode);
    model = &*defended;
  }

  switch (spec.family) {
    case AttackFamily::kFgs:
      return 1.0 - attacks::fgs(*model, subset, spec.epsilon).success_rate();
    case AttackFamily::kCwL2:
      return 1.0 - attacks::cw_l2(*model, subset, spec).success_rate();
    case AttackFamily::kBpda:
      return 1.0 - attacks::bpda(*model, subset, spec).success_rate();
    case AttackFamily::kBim:
    case AttackFamily::kPgd:
      return 1.0 - attacks::pgd(*model, subset, spec).success_rate();
    case AttackFamily::kBlackBox:
      break;
  }
  throw InternalError("run_attack_row: unhandled family");
}

}  // namespace

const EvalRow* EvalReport::find(const std::string& variant,
                                const std::string& attack) const {
  for (const auto& row : rows)
    if (row.defense_variant == variant && row.attack == attack) return &row;
  return nullptr;
}

EvalReport evaluate(Classifier& classifier, pipeline::DefensePipeline* defense,
                    const ImageBatch& test_set, const std::vector<AttackSpec>& specs,
                    const EvalOptions& options) {
  if (options.k_test < 1) throw InvalidArgument("evaluate: k_test must be >= 1");
  const ImageBatch subset = eval_subset(test_set, options.eval_size);

  EvalReport report;
  report.metadata = {
      {"k_test", options.k_test},
      {"eval_size", subset.count()},
      {"seed", options.seed},
      {"defense_variant", options.defense_variant},
      {"classifier_checksum", classifier.checksum()},
      {"defense_checksum", defense != nullptr ? defense->checksum() : 0},
      {"dataset", options.dataset_tag},
  };

  // clean row
  {
    EvalRow row;
    row.defense_variant = options.defense_variant;
    row.attack = "none";
    if (defense == nullptr) {
      row.accuracy = classifier_accuracy(classifier, subset);
    } else {
      pipeline::DefendedModel defended(*defense, classifier, options.k_test,
                                       nn::DeadzoneBackward::kMasked);
      row.accuracy = attacks::model_accuracy(defended, subset);
    }
    row.metadata = report.metadata;
    row.metadata["attack"] = "none";
    report.rows.push_back(std::move(row));
  }

  for (size_t si = 0; si < specs.size(); ++si) {
    AttackSpec spec = specs[si];
    if (spec.seed == 0)
      spec.seed = Rng::substream(options.seed, 0xE7A1 + static_cast<uint64_t>(si));
    EvalRow row;
    row.defense_variant = options.defense_variant;
    row.attack = attacks::family_name(spec.family);
    row.epsilon = spec.epsilon;
    row.iterations = spec.family == AttackFamily::kFgs ? 1 : spec.iterations;
    row.metadata = report.metadata;
    row.metadata["attack"] = row.attack;
    row.metadata["spec"] = spec_to_json(spec);
    try {
      row.accuracy = run_attack_row(classifier, defense, options.substitute, subset,
                                    spec, options.k_test);
    } catch (const InvalidArgument& e) {
      std::cerr << "warning: skipping row '" << row.attack << "': " << e.what()
                << "\n";
      report.complete = false;
      continue;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

real_t regenerate_row(const EvalRow& row, Classifier& classifier,
                      pipeline::DefensePipeline* defense, const ImageBatch& test_set,
                      Classifier* substitute) {
  const int eval_size = row.metadata.at("eval_size").get<int>();
  const int k_test = row.metadata.at("k_test").get<int>();
  const ImageBatch subset = eval_subset(test_set, eval_size);
  if (row.attack == "none") {
    if (defense == nullptr) return classifier_accuracy(classifier, subset);
    pipeline::DefendedModel defended(*defense, classifier, k_test,
                                     nn::DeadzoneBackward::kMasked);
    return attacks::model_accuracy(defended, subset);
  }
  const AttackSpec spec = spec_from_json(row.metadata.at("spec"));
  return run_attack_row(classifier, defense, substitute, subset, spec, k_test);
}

void write_report(const EvalReport& report, const std::string& dir,
                  const std::string& name) {
  io::ensure_dir(dir);
  std::vector<std::vector<std::string>> rows;
  rows.reserve(report.rows.size());
  for (const auto& row : report.rows)
    rows.push_back({row.defense_variant, row.attack, io::format_real(row.epsilon),
                    std::to_string(row.iterations), io::format_real(row.accuracy)});
  io::write_csv(dir + "/" + name + ".csv",
                {"defense_variant", "attack_family", "epsilon", "iterations",
                 "accuracy"},
                rows);

  json doc;
  doc["metadata"] = report.metadata;
  doc["complete"] = report.complete;
  doc["rows"] = json::array();
  for (const auto& row : report.rows)
    doc["rows"].push_back({{"defense_variant", row.defense_variant},
                           {"attack", row.attack},
                           {"epsilon", row.epsilon},
                           {"iterations", row.iterations},
                           {"accuracy", row.accuracy},
                           {"metadata", row.metadata}});
  io::atomic_write_file(dir + "/" + name + ".json", doc.dump(2) + "\n");
  io::atomic_write_file(dir + "/" + name + ".txt", render_text_table(report));
}

std::string render_text_table(const EvalReport& report) {
  std::vector<std::string> variants, families;
  for (const auto& row : report.rows) {
    if (std::find(variants.begin(), variants.end(), row.defense_variant) ==
        variants.end())
      variants.push_back(row.defense_variant);
    if (std::find(families.begin(), families.end(), row.attack) == families.end())
      families.push_back(row.attack);
  }
  std::ostringstream out;
  out << std::left;
  const int wide = 20, cell = 11;
  out.width(wide);
  out << "defense";
  for (const auto& f : families) {
    out.width(cell);
    out << (f == "none" ? std::string("clean") : f);
  }
  out << "\n";
  for (const auto& v : variants) {
    out.width(wide);
    out << v;
    for (const auto& f : families) {
      const EvalRow* row = report.find(v, f);
      char buf[16];
      if (row != nullptr)
        std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * row->accuracy);
      else
        std::snprintf(buf, sizeof(buf), "-");
      out.width(cell);
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

AblateOutcome ablate(Classifier& classifier, Classifier* feature_net,
                     const ImageBatch& train, const ImageBatch& val,
                     const ImageBatch& test, const pipeline::PipelineConfig& arch,
                     const training::TrainConfig& train_cfg,
                     const std::vector<AttackSpec>& specs, const EvalOptions& options) {
  AblateOutcome out;

  struct Variant {
    std::string name;
    pipeline::PipelineConfig cfg;
    int train_loops;
    int k_test;
  };
  pipeline::PipelineConfig no_transform_cfg = arch;
  no_transform_cfg.tdz_enabled = false;
  const std::vector<Variant> variants = {
      {"full", arch, train_cfg.train_loops, options.k_test},
      {"without_transform", no_transform_cfg, train_cfg.train_loops, options.k_test},
      {"without_feedback", arch, 1, 1},
  };

  for (const auto& variant : variants) {
    auto defense =
        std::make_unique<pipeline::DefensePipeline>(variant.cfg, train_cfg.seed);
    training::TrainConfig cfg = train_cfg;
    cfg.target_classifier = &classifier;
    cfg.feature_net = feature_net;
    cfg.train_loops = variant.train_loops;
    training::train_defense(*defense, train, val, cfg);

    EvalOptions opt = options;
    opt.defense_variant = variant.name;
    opt.k_test = variant.k_test;
    EvalReport variant_report = evaluate(classifier, defense.get(), test, specs, opt);
    for (auto& row : variant_report.rows) out.report.rows.push_back(std::move(row));
    out.report.complete = out.report.complete && variant_report.complete;
    if (out.report.metadata.is_null()) out.report.metadata = variant_report.metadata;

    if (variant.name == "full")
      out.full = std::move(defense);
    else if (variant.name == "without_transform")
      out.without_transform = std::move(defense);
    else
      out.without_feedback = std::move(defense);
  }
  return out;
}

std::string sweep_axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kIterations: return "iterations";
    case SweepAxis::kEpsilon: return "epsilon";
    case SweepAxis::kKTest: return "k_test";
  }
  return "unknown";
}

SweepAxis sweep_axis_from_name(const std::string& name) {
  if (name == "iterations") return SweepAxis::kIterations;
  if (name == "epsilon") return SweepAxis::kEpsilon;
  if (name == "k_test" || name == "k-test") return SweepAxis::kKTest;
  throw InvalidArgument("unknown sweep axis: " + name);
}

EvalReport sweep(Classifier& classifier, pipeline::DefensePipeline* defense,
                 const ImageBatch& test_set, SweepAxis axis,
                 const std::vector<real_t>& values,
                 const std::vector<AttackSpec>& base_specs, const EvalOptions& options,
                 const std::string& out_dir) {
  if (values.empty()) throw InvalidArgument("sweep: empty value list");
  if (!std::is_sorted(values.begin(), values.end()))
    throw InvalidArgument("sweep: values must be sorted ascending");
  if (axis == SweepAxis::kKTest && defense == nullptr)
    throw InvalidArgument("sweep: k_test axis requires a defense");

  EvalReport report;
  io::LinePlot plot;
  plot.title = "ACCURACY VS " + sweep_axis_name(axis);
  plot.x_label = sweep_axis_name(axis);
  plot.y_label = "ACCURACY";

  for (const auto& base : base_specs) {
    io::Series series;
    series.name = attacks::family_name(base.family);
    for (size_t vi = 0; vi < values.size(); ++vi) {
      AttackSpec spec = base;
      EvalOptions opt = options;
      switch (axis) {
        case SweepAxis::kIterations:
          spec.iterations = std::max(1, static_cast<int>(std::lround(values[vi])));
          break;
        case SweepAxis::kEpsilon: {
          const real_t ratio = base.epsilon > 0.0 ? values[vi] / base.epsilon : 0.0;
          spec.epsilon = values[vi];
          spec.step_size = base.step_size * ratio;
          break;
        }
        case SweepAxis::kKTest:
          opt.k_test = std::max(1, static_cast<int>(std::lround(values[vi])));
          break;
      }
      if (spec.seed == 0)
        spec.seed = Rng::substream(options.seed,
                                   0x53EE + 131 * static_cast<uint64_t>(vi) +
                                       static_cast<uint64_t>(spec.family));
      EvalReport one = evaluate(classifier, defense, test_set, {spec}, opt);
      report.complete = report.complete && one.complete;
      if (report.metadata.is_null()) report.metadata = one.metadata;
      // keep the attack row; tag it with the axis value
      for (auto& row : one.rows) {
        if (row.attack == "none") continue;
        row.metadata["axis"] = sweep_axis_name(axis);
        row.metadata["axis_value"] = values[vi];
        if (axis == SweepAxis::kKTest)
          row.metadata["k_test"] = opt.k_test;
        series.x.push_back(values[vi]);
        series.y.push_back(row.accuracy);
        report.rows.push_back(std::move(row));
      }
    }
    plot.series.push_back(std::move(series));
  }

  if (!out_dir.empty()) {
    io::ensure_dir(out_dir);
    std::vector<std::vector<std::string>> rows;
    for (const auto& row : report.rows)
      rows.push_back({row.attack, io::format_real(row.metadata.at("axis_value").get<real_t>()),
                      io::format_real(row.accuracy)});
    io::write_csv(out_dir + "/sweep_" + sweep_axis_name(axis) + ".csv",
                  {"attack_family", sweep_axis_name(axis), "accuracy"}, rows);
    io::write_plot(out_dir + "/sweep_" + sweep_axis_name(axis) + ".png", plot);
  }
  return report;
}

}  // namespace egcfl::harness
