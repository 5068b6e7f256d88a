// Command-line front end: dataset ingestion, classifier/defense training,
// attack generation, evaluation, ablations, sweeps, and visualization.

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>

#include "egcfl/data.hpp"
#include "egcfl/evaluate.hpp"
#include "egcfl/io/archive.hpp"
#include "egcfl/io/checkpoint.hpp"
#include "egcfl/io/fsutil.hpp"
#include "egcfl/tdz.hpp"
#include "egcfl/training.hpp"
#include "egcfl/visualize.hpp"

using namespace egcfl;
using nlohmann::json;

namespace {

struct DatasetOpts {
  std::string kind = "synth";
  int train_size = 2000;
  int test_size = 512;
  std::string root;
  std::string cache_dir = "cache";
  uint64_t seed = 7;

  data::DatasetSpec spec() const {
    data::DatasetSpec s;
    s.kind = data::dataset_kind_from_name(kind);
    s.train_size = train_size;
    s.test_size = test_size;
    s.root_path = root;
    s.seed = seed;
    return s;
  }
  data::Dataset load() const { return data::ingest(spec(), cache_dir); }
};

void add_dataset_options(CLI::App* cmd, DatasetOpts& opts) {
  cmd->add_option("--dataset", opts.kind, "Dataset: synth, cifar10, or svhn");
  cmd->add_option("--train-size", opts.train_size, "Training split size");
  cmd->add_option("--test-size", opts.test_size, "Test split size");
  cmd->add_option("--data-root", opts.root, "Source directory for file-backed datasets");
  cmd->add_option("--cache-dir", opts.cache_dir, "Dataset cache directory");
  cmd->add_option("--data-seed", opts.seed, "Dataset split seed");
}

struct AttackOpts {
  std::string family = "pgd";
  real_t eps = 8.0 / 255.0;
  real_t step = 1.0 / 255.0;
  int iters = 10;
  bool random_start = true;
  int cw_steps = 100;
  real_t cw_lr = 0.01;
  real_t cw_confidence = 0.0;
  uint64_t seed = 0;

  attacks::AttackSpec spec() const {
    attacks::AttackSpec s = attacks::make_spec(attacks::family_from_name(family));
    s.epsilon = eps;
    s.step_size = std::min(step, eps);
    if (s.family == attacks::AttackFamily::kFgs) s.step_size = eps;
    s.iterations = iters;
    if (s.family != attacks::AttackFamily::kBim) s.random_start = random_start;
    s.cw_steps = cw_steps;
    s.cw_lr = cw_lr;
    s.cw_confidence = cw_confidence;
    s.seed = seed;
    return s;
  }
};

void add_attack_options(CLI::App* cmd, AttackOpts& opts) {
  cmd->add_option("--family", opts.family, "fgs, bim, pgd, cw, bpda, or black_box");
  cmd->add_option("--eps", opts.eps, "L-inf budget in pixel units");
  cmd->add_option("--step", opts.step, "Per-iteration step size");
  cmd->add_option("--iters", opts.iters, "Attack iterations");
  cmd->add_option("--random-start", opts.random_start, "Uniform init in the eps ball");
  cmd->add_option("--cw-steps", opts.cw_steps, "Optimization steps for cw");
  cmd->add_option("--cw-lr", opts.cw_lr, "Learning rate for cw");
  cmd->add_option("--cw-confidence", opts.cw_confidence, "Margin confidence for cw");
}

training::TrainConfig train_config_from_json(const json& j) {
  training::TrainConfig cfg;
  if (j.contains("weights")) {
    cfg.weights.lambda1 = j["weights"].value("lambda1", cfg.weights.lambda1);
    cfg.weights.lambda2 = j["weights"].value("lambda2", cfg.weights.lambda2);
    cfg.weights.lambda3 = j["weights"].value("lambda3", cfg.weights.lambda3);
  }
  if (j.contains("attack")) {
    const auto& a = j["attack"];
    cfg.attack_spec = attacks::make_spec(
        attacks::family_from_name(a.value("family", std::string("pgd"))));
    cfg.attack_spec.epsilon = a.value("epsilon", cfg.attack_spec.epsilon);
    cfg.attack_spec.step_size = a.value("step_size", cfg.attack_spec.step_size);
    cfg.attack_spec.iterations = a.value("iterations", cfg.attack_spec.iterations);
    cfg.attack_spec.random_start = a.value("random_start", cfg.attack_spec.random_start);
  }
  cfg.train_loops = j.value("train_loops", cfg.train_loops);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.val_attack_size = j.value("val_attack_size", cfg.val_attack_size);
  return cfg;
}

pipeline::PipelineConfig pipeline_config_from_json(const json& j) {
  pipeline::PipelineConfig cfg;
  cfg.converter_width = j.value("converter_width", cfg.converter_width);
  cfg.cleaner_width = j.value("cleaner_width", cfg.cleaner_width);
  cfg.fusion_width = j.value("fusion_width", cfg.fusion_width);
  cfg.cleaner_downsample = j.value("cleaner_downsample", cfg.cleaner_downsample);
  cfg.sigmoid_output = j.value("sigmoid_output", cfg.sigmoid_output);
  cfg.tdz_enabled = j.value("tdz_enabled", cfg.tdz_enabled);
  cfg.block_size = j.value("block_size", cfg.block_size);
  cfg.delta = j.value("delta", cfg.delta);
  cfg.loop_count = j.value("loop_count", cfg.loop_count);
  return cfg;
}

DatasetOpts dataset_opts_from_json(const json& j, const DatasetOpts& defaults) {
  DatasetOpts opts = defaults;
  opts.kind = j.value("kind", opts.kind);
  opts.train_size = j.value("train_size", opts.train_size);
  opts.test_size = j.value("test_size", opts.test_size);
  opts.root = j.value("root_path", opts.root);
  opts.cache_dir = j.value("cache_dir", opts.cache_dir);
  opts.seed = j.value("seed", opts.seed);
  return opts;
}

std::vector<attacks::AttackSpec> parse_attack_list(const std::string& list,
                                                   const AttackOpts& base) {
  std::vector<attacks::AttackSpec> specs;
  std::stringstream ss(list);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (token.empty()) continue;
    AttackOpts one = base;
    one.family = token;
    specs.push_back(one.spec());
  }
  return specs;
}

int run_ingest(const DatasetOpts& opts) {
  const data::Dataset ds = opts.load();
  std::cout << "dataset " << opts.kind << ": train " << ds.train.count() << ", test "
            << ds.test.count() << ", checksum " << std::hex << ds.checksum << std::dec
            << "\n"
            << "cache: " << data::cache_archive_path(ds.spec, opts.cache_dir) << "\n";
  return 0;
}

int run_train_classifier(const DatasetOpts& dopts, const std::string& arch, int epochs,
                         int batch_size, real_t lr, uint64_t seed,
                         const std::string& out) {
  const data::Dataset ds = dopts.load();
  ClassifierConfig cfg;
  auto model = make_classifier(classifier_arch_from_name(arch), cfg, seed);
  FitConfig fit;
  fit.epochs = epochs;
  fit.batch_size = batch_size;
  fit.learning_rate = lr;
  fit.seed = seed;
  const FitLog log = train_classifier(*model, ds.train, ds.test, fit);
  for (size_t i = 0; i < log.train_loss.size(); ++i)
    std::cout << "epoch " << i << ": loss " << log.train_loss[i] << ", test acc "
              << log.test_accuracy[i] << "\n";
  io::save_classifier(out, *model,
                      {{"dataset", dopts.kind},
                       {"dataset_checksum", ds.checksum},
                       {"epochs", epochs},
                       {"seed", seed},
                       {"final_test_accuracy", log.test_accuracy.back()}});
  std::cout << "saved " << out << "\n";
  return 0;
}

int run_train_defense(const std::string& config_path, const std::string& classifier_path,
                      const std::string& feature_path, const std::string& out,
                      uint64_t seed_override, bool has_seed_override) {
  const json cfg_json = json::parse(io::read_file(config_path));
  training::TrainConfig cfg = train_config_from_json(cfg_json);
  if (has_seed_override) cfg.seed = seed_override;
  pipeline::PipelineConfig arch = pipeline_config_from_json(
      cfg_json.contains("pipeline") ? cfg_json["pipeline"] : json::object());
  DatasetOpts dopts = dataset_opts_from_json(
      cfg_json.contains("dataset") ? cfg_json["dataset"] : json::object(), {});

  const data::Dataset ds = dopts.load();
  auto classifier = io::load_classifier(classifier_path);
  std::unique_ptr<Classifier> feature;
  if (!feature_path.empty() && feature_path != "none")
    feature = io::load_classifier(feature_path);
  cfg.target_classifier = classifier.get();
  cfg.feature_net = feature ? feature.get() : classifier.get();

  pipeline::DefensePipeline defense(arch, cfg.seed);
  const auto log = training::train_defense(defense, ds.train, ds.test, cfg);
  for (const auto& e : log)
    std::cout << "epoch " << e.epoch << ": loss " << e.loss_total << " (p " << e.loss_p
              << ", a " << e.loss_a << ", c " << e.loss_c << "), val clean "
              << e.val_clean_acc << ", val pgd " << e.val_pgd_acc << "\n";

  io::save_pipeline(out, defense,
                    {{"classifier", classifier_path},
                     {"classifier_checksum", classifier->checksum()},
                     {"dataset", dopts.kind},
                     {"dataset_checksum", ds.checksum},
                     {"seed", cfg.seed},
                     {"train_attack",
                      {{"family", attacks::family_name(cfg.attack_spec.family)},
                       {"epsilon", cfg.attack_spec.epsilon},
                       {"step_size", cfg.attack_spec.step_size},
                       {"iterations", cfg.attack_spec.iterations}}}});
  training::write_train_log(log, out + ".train.csv");
  std::cout << "saved " << out << "\n";
  return 0;
}

int run_attack(const DatasetOpts& dopts, const AttackOpts& aopts,
               const std::string& model_path, const std::string& defense_path,
               const std::string& substitute_path, int k_test, const std::string& out) {
  const data::Dataset ds = dopts.load();
  auto classifier = io::load_classifier(model_path);
  std::unique_ptr<pipeline::DefensePipeline> defense;
  if (!defense_path.empty() && defense_path != "none")
    defense = io::load_pipeline(defense_path);

  const attacks::AttackSpec spec = aopts.spec();
  attacks::ClassifierModel bare(*classifier);
  std::unique_ptr<pipeline::DefendedModel> defended;
  const attacks::DifferentiableModel* model = &bare;
  if (defense) {
    const auto mode = spec.family == attacks::AttackFamily::kBpda
                          ? nn::DeadzoneBackward::kStraightThrough
                          : nn::DeadzoneBackward::kMasked;
    defended = std::make_unique<pipeline::DefendedModel>(*defense, *classifier, k_test,
                                                         mode);
    model = defended.get();
  }

  attacks::AttackResult result;
  switch (spec.family) {
    case attacks::AttackFamily::kFgs:
      result = attacks::fgs(*model, ds.test, spec.epsilon);
      break;
    case attacks::AttackFamily::kCwL2:
      result = attacks::cw_l2(*model, ds.test, spec);
      break;
    case attacks::AttackFamily::kBlackBox: {
      if (substitute_path.empty())
        throw InvalidArgument("black_box attack requires --substitute");
      auto substitute = io::load_classifier(substitute_path);
      attacks::ClassifierModel sub_model(*substitute);
      result = attacks::black_box(sub_model, *model, ds.test, spec);
      break;
    }
    default:
      result = attacks::bpda(*model, ds.test, spec);
      break;
  }

  io::ensure_dir(out);
  io::TensorArchive arch;
  arch.put_f64("images", result.attacked.images.shape(), result.attacked.images.data());
  arch.put_i32("labels", std::vector<int32_t>(result.attacked.labels.begin(),
                                              result.attacked.labels.end()));
  arch.save(out + "/attacked.bin");

  json summary;
  summary["family"] = attacks::family_name(spec.family);
  summary["epsilon"] = spec.epsilon;
  summary["iterations"] = spec.iterations;
  summary["seed"] = spec.seed;
  summary["accuracy"] = 1.0 - result.success_rate();
  summary["success_rate"] = result.success_rate();
  summary["max_linf"] = result.max_linf();
  summary["mean_l2"] = result.mean_l2();
  summary["defended"] = defense != nullptr;
  summary["k_test"] = defense != nullptr ? k_test : 0;
  io::atomic_write_file(out + "/summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

nn::Tensor images_from_archive(const std::string& path) {
  const io::TensorArchive arch = io::TensorArchive::load(path);
  for (const char* name : {"images", "test_images", "train_images"})
    if (arch.contains(name)) {
      const auto& entry = arch.at(name);
      return nn::Tensor::from_data(entry.dims, arch.get_f64(name));
    }
  throw IoError("no image tensor found in " + path);
}

int run_tdz_report(const DatasetOpts& dopts, const AttackOpts& aopts,
                   const std::string& model_path, const std::string& clean_path,
                   const std::string& attacked_path, int block_size, real_t delta,
                   int batch_size, const std::string& out) {
  nn::Tensor clean, attacked;
  if (!clean_path.empty() && !attacked_path.empty()) {
    clean = images_from_archive(clean_path);
    attacked = images_from_archive(attacked_path);
  } else {
    if (model_path.empty())
      throw InvalidArgument("tdz-report needs either --clean/--attacked or --model");
    const data::Dataset ds = dopts.load();
    auto classifier = io::load_classifier(model_path);
    attacks::ClassifierModel model(*classifier);
    clean = ds.test.images;
    attacked = attacks::pgd(model, ds.test, aopts.spec()).attacked.images;
  }
  const tdz::TdzConfig cfg = tdz::make_tdz_config(block_size, delta);
  const auto report = tdz::noise_energy_report(clean, attacked, cfg, batch_size);
  io::ensure_dir(out);
  tdz::write_noise_energy_report(report, out + "/energy.csv", out + "/energy.png");
  std::cout << "batches " << report.batch_count << ", mean pre " << report.mean_pre()
            << ", mean post " << report.mean_post() << "\n"
            << "wrote " << out << "/energy.csv and " << out << "/energy.png\n";
  return 0;
}

int run_evaluate(const DatasetOpts& dopts, const AttackOpts& aopts,
                 const std::string& model_path, const std::string& defense_path,
                 const std::string& substitute_path, const std::string& attack_list,
                 int k_test, int eval_size, uint64_t seed, const std::string& out) {
  const data::Dataset ds = dopts.load();
  auto classifier = io::load_classifier(model_path);
  std::unique_ptr<pipeline::DefensePipeline> defense;
  if (!defense_path.empty() && defense_path != "none")
    defense = io::load_pipeline(defense_path);
  std::unique_ptr<Classifier> substitute;
  if (!substitute_path.empty()) substitute = io::load_classifier(substitute_path);

  harness::EvalOptions opt;
  opt.k_test = k_test;
  opt.eval_size = eval_size;
  opt.seed = seed;
  opt.defense_variant = defense ? "defended" : "none";
  opt.substitute = substitute.get();
  opt.dataset_tag = {{"kind", dopts.kind}, {"checksum", ds.checksum}};

  const auto specs = parse_attack_list(attack_list, aopts);
  const harness::EvalReport report =
      harness::evaluate(*classifier, defense.get(), ds.test, specs, opt);
  if (!out.empty()) harness::write_report(report, out, "eval");
  std::cout << harness::render_text_table(report);
  return report.complete ? 0 : 1;
}

int run_ablate(const DatasetOpts& dopts, const std::string& model_path,
               const std::string& feature_path, const std::string& config_path,
               const std::string& attack_list, const AttackOpts& aopts, int k_test,
               int eval_size, const std::string& out) {
  const json cfg_json =
      config_path.empty() ? json::object() : json::parse(io::read_file(config_path));
  training::TrainConfig cfg = train_config_from_json(cfg_json);
  pipeline::PipelineConfig arch = pipeline_config_from_json(
      cfg_json.contains("pipeline") ? cfg_json["pipeline"] : json::object());
  DatasetOpts effective = dataset_opts_from_json(
      cfg_json.contains("dataset") ? cfg_json["dataset"] : json::object(), dopts);

  const data::Dataset ds = effective.load();
  auto classifier = io::load_classifier(model_path);
  std::unique_ptr<Classifier> feature;
  if (!feature_path.empty() && feature_path != "none")
    feature = io::load_classifier(feature_path);

  harness::EvalOptions opt;
  opt.k_test = k_test;
  opt.eval_size = eval_size;
  opt.seed = cfg.seed;
  opt.dataset_tag = {{"kind", effective.kind}, {"checksum", ds.checksum}};

  const auto specs = parse_attack_list(attack_list, aopts);
  auto outcome = harness::ablate(*classifier, feature ? feature.get() : nullptr,
                                 ds.train, ds.test, ds.test, arch, cfg, specs, opt);
  io::ensure_dir(out);
  harness::write_report(outcome.report, out, "ablate");
  io::save_pipeline(out + "/full.ckpt", *outcome.full);
  io::save_pipeline(out + "/without_transform.ckpt", *outcome.without_transform);
  io::save_pipeline(out + "/without_feedback.ckpt", *outcome.without_feedback);
  std::cout << harness::render_text_table(outcome.report);
  return outcome.report.complete ? 0 : 1;
}

int run_sweep(const DatasetOpts& dopts, const AttackOpts& aopts,
              const std::string& model_path, const std::string& defense_path,
              const std::string& axis, const std::string& values_csv,
              const std::string& attack_list, int k_test, int eval_size, uint64_t seed,
              const std::string& out) {
  const data::Dataset ds = dopts.load();
  auto classifier = io::load_classifier(model_path);
  std::unique_ptr<pipeline::DefensePipeline> defense;
  if (!defense_path.empty() && defense_path != "none")
    defense = io::load_pipeline(defense_path);

  std::vector<real_t> values;
  std::stringstream ss(values_csv);
  std::string token;
  while (std::getline(ss, token, ','))
    if (!token.empty()) values.push_back(std::stod(token));

  harness::EvalOptions opt;
  opt.k_test = k_test;
  opt.eval_size = eval_size;
  opt.seed = seed;
  opt.defense_variant = defense ? "defended" : "none";
  opt.dataset_tag = {{"kind", dopts.kind}, {"checksum", ds.checksum}};

  const auto report = harness::sweep(*classifier, defense.get(), ds.test,
                                     harness::sweep_axis_from_name(axis), values,
                                     parse_attack_list(attack_list, aopts), opt, out);
  for (const auto& row : report.rows)
    std::cout << row.attack << " @ " << row.metadata.at("axis_value").get<real_t>()
              << ": " << row.accuracy << "\n";
  return report.complete ? 0 : 1;
}

int run_visualize(const DatasetOpts& dopts, const AttackOpts& aopts,
                  const std::string& model_path, const std::string& defense_path,
                  int samples, int k_test, int tap, const std::string& out) {
  const data::Dataset ds = dopts.load();
  auto classifier = io::load_classifier(model_path);
  auto defense = io::load_pipeline(defense_path);

  harness::VisualizeOptions opt;
  opt.attack = aopts.spec();
  opt.k_test = k_test;
  opt.tap_from_end = tap;
  const auto result = harness::visualize(*classifier, *defense,
                                         ds.test.slice(0, samples), opt, out);
  std::cout << "attacked feature distance " << result.attacked_feature_distance
            << ", defended feature distance " << result.defended_feature_distance
            << "\n";
  for (const auto& f : result.files) std::cout << "wrote " << f << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble generative cleaning defense toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags are accepted after the subcommand too

  uint64_t global_seed = 0;
  std::string device = "cpu";
  app.add_option("--seed", global_seed, "Seed for attack/evaluation randomness");
  app.add_option("--device", device, "Compute device (cpu only)");

  // ingest
  DatasetOpts ingest_data;
  auto* ingest_cmd = app.add_subcommand("ingest", "Materialize and cache a dataset");
  add_dataset_options(ingest_cmd, ingest_data);

  // train-classifier
  DatasetOpts cls_data;
  std::string cls_arch = "small_resnet", cls_out = "classifier.ckpt";
  int cls_epochs = 10, cls_batch = 64;
  real_t cls_lr = 3e-3;
  auto* cls_cmd = app.add_subcommand("train-classifier", "Train a classifier");
  add_dataset_options(cls_cmd, cls_data);
  cls_cmd->add_option("--arch", cls_arch, "small_resnet or small_conv");
  cls_cmd->add_option("--epochs", cls_epochs, "Training epochs");
  cls_cmd->add_option("--batch-size", cls_batch, "Batch size");
  cls_cmd->add_option("--lr", cls_lr, "Learning rate");
  cls_cmd->add_option("--out", cls_out, "Checkpoint output path");

  // train-defense
  std::string def_config, def_classifier, def_feature, def_out = "defense.ckpt";
  auto* def_cmd = app.add_subcommand("train-defense", "Train the defense pipeline");
  def_cmd->add_option("--config", def_config, "JSON training configuration")
      ->required();
  def_cmd->add_option("--classifier", def_classifier, "Target classifier checkpoint")
      ->required();
  def_cmd->add_option("--feature-net", def_feature,
                      "Feature extractor checkpoint (defaults to the classifier)");
  def_cmd->add_option("--out", def_out, "Checkpoint output path");

  // attack
  DatasetOpts atk_data;
  AttackOpts atk_opts;
  std::string atk_model, atk_defense = "none", atk_substitute, atk_out = "attack_out";
  int atk_k = 3;
  auto* atk_cmd = app.add_subcommand("attack", "Generate adversarial examples");
  add_dataset_options(atk_cmd, atk_data);
  add_attack_options(atk_cmd, atk_opts);
  atk_cmd->add_option("--model", atk_model, "Classifier checkpoint")->required();
  atk_cmd->add_option("--defense", atk_defense, "Defense checkpoint or 'none'");
  atk_cmd->add_option("--substitute", atk_substitute,
                      "Substitute checkpoint for black_box");
  atk_cmd->add_option("--k-test", atk_k, "Unrolled loops when attacking a defense");
  atk_cmd->add_option("--out", atk_out, "Output directory");

  // tdz-report
  DatasetOpts tdz_data;
  AttackOpts tdz_attack;
  std::string tdz_model, tdz_clean, tdz_attacked, tdz_out = "tdz_out";
  int tdz_block = 8, tdz_batch = 4;
  real_t tdz_delta = 0.05;
  auto* tdz_cmd =
      app.add_subcommand("tdz-report", "Attack-noise energy before/after the deadzone");
  add_dataset_options(tdz_cmd, tdz_data);
  add_attack_options(tdz_cmd, tdz_attack);
  tdz_cmd->add_option("--model", tdz_model, "Classifier used to generate the attack");
  tdz_cmd->add_option("--clean", tdz_clean, "Clean image archive");
  tdz_cmd->add_option("--attacked", tdz_attacked, "Attacked image archive");
  tdz_cmd->add_option("--block-size", tdz_block, "Transform block size");
  tdz_cmd->add_option("--delta", tdz_delta, "Deadzone half width");
  tdz_cmd->add_option("--batch-size", tdz_batch, "Images per energy batch");
  tdz_cmd->add_option("--out", tdz_out, "Output directory");

  // evaluate
  DatasetOpts eval_data;
  AttackOpts eval_attack;
  std::string eval_model, eval_defense = "none", eval_substitute;
  std::string eval_attacks = "fgs,pgd,bim,cw";
  std::string eval_out = "eval_out";
  int eval_k = 3, eval_size = 0;
  auto* eval_cmd = app.add_subcommand("evaluate", "Accuracy under a set of attacks");
  add_dataset_options(eval_cmd, eval_data);
  add_attack_options(eval_cmd, eval_attack);
  eval_cmd->add_option("--model", eval_model, "Classifier checkpoint")->required();
  eval_cmd->add_option("--defense", eval_defense, "Defense checkpoint or 'none'");
  eval_cmd->add_option("--substitute", eval_substitute, "Substitute for black_box");
  eval_cmd->add_option("--attacks", eval_attacks, "Comma list of attack families");
  eval_cmd->add_option("--k-test", eval_k, "Feedback loops at test time");
  eval_cmd->add_option("--eval-size", eval_size, "Evaluate on the first n test images");
  eval_cmd->add_option("--out", eval_out, "Report output directory");

  // ablate
  DatasetOpts abl_data;
  AttackOpts abl_attack;
  std::string abl_model, abl_feature, abl_config, abl_out = "ablate_out";
  std::string abl_attacks = "fgs,pgd,bpda";
  int abl_k = 3, abl_eval_size = 0;
  auto* abl_cmd =
      app.add_subcommand("ablate", "Train/evaluate full and reduced variants");
  add_dataset_options(abl_cmd, abl_data);
  add_attack_options(abl_cmd, abl_attack);
  abl_cmd->add_option("--model", abl_model, "Classifier checkpoint")->required();
  abl_cmd->add_option("--feature-net", abl_feature, "Feature extractor checkpoint");
  abl_cmd->add_option("--config", abl_config, "JSON training configuration");
  abl_cmd->add_option("--attacks", abl_attacks, "Comma list of attack families");
  abl_cmd->add_option("--k-test", abl_k, "Feedback loops at test time");
  abl_cmd->add_option("--eval-size", abl_eval_size, "Evaluate on first n test images");
  abl_cmd->add_option("--out", abl_out, "Output directory");

  // sweep
  DatasetOpts swp_data;
  AttackOpts swp_attack;
  std::string swp_model, swp_defense = "none", swp_axis = "iterations";
  std::string swp_values = "10,20,50,100", swp_attacks = "pgd", swp_out = "sweep_out";
  int swp_k = 3, swp_eval_size = 0;
  auto* swp_cmd = app.add_subcommand("sweep", "Accuracy along an attack axis");
  add_dataset_options(swp_cmd, swp_data);
  add_attack_options(swp_cmd, swp_attack);
  swp_cmd->add_option("--model", swp_model, "Classifier checkpoint")->required();
  swp_cmd->add_option("--defense", swp_defense, "Defense checkpoint or 'none'");
  swp_cmd->add_option("--axis", swp_axis, "iterations, epsilon, or k_test");
  swp_cmd->add_option("--values", swp_values, "Comma list of ascending axis values");
  swp_cmd->add_option("--attacks", swp_attacks, "Comma list of attack families");
  swp_cmd->add_option("--k-test", swp_k, "Feedback loops at test time");
  swp_cmd->add_option("--eval-size", swp_eval_size, "Evaluate on first n test images");
  swp_cmd->add_option("--out", swp_out, "Output directory");

  // visualize
  DatasetOpts vis_data;
  AttackOpts vis_attack;
  std::string vis_model, vis_defense, vis_out = "visualize_out";
  int vis_samples = 6, vis_k = 3, vis_tap = 3;
  auto* vis_cmd =
      app.add_subcommand("visualize", "Image grids and activation heatmaps");
  add_dataset_options(vis_cmd, vis_data);
  add_attack_options(vis_cmd, vis_attack);
  vis_cmd->add_option("--model", vis_model, "Classifier checkpoint")->required();
  vis_cmd->add_option("--defense", vis_defense, "Defense checkpoint")->required();
  vis_cmd->add_option("--samples", vis_samples, "Number of samples");
  vis_cmd->add_option("--k-test", vis_k, "Feedback loops at test time");
  vis_cmd->add_option("--tap", vis_tap, "Activation tap from the end");
  vis_cmd->add_option("--out", vis_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  if (device != "cpu")
    std::cerr << "warning: device '" << device << "' unavailable, using cpu\n";

  try {
    if (*ingest_cmd) return run_ingest(ingest_data);
    if (*cls_cmd)
      return run_train_classifier(cls_data, cls_arch, cls_epochs, cls_batch, cls_lr,
                                  global_seed, cls_out);
    if (*def_cmd)
      return run_train_defense(def_config, def_classifier, def_feature, def_out,
                               global_seed, app.count("--seed") > 0);
    if (*atk_cmd) {
      atk_opts.seed = global_seed;
      return run_attack(atk_data, atk_opts, atk_model, atk_defense, atk_substitute,
                        atk_k, atk_out);
    }
    if (*tdz_cmd) {
      tdz_attack.seed = global_seed;
      return run_tdz_report(tdz_data, tdz_attack, tdz_model, tdz_clean, tdz_attacked,
                            tdz_block, tdz_delta, tdz_batch, tdz_out);
    }
    if (*eval_cmd)
      return run_evaluate(eval_data, eval_attack, eval_model, eval_defense,
                          eval_substitute, eval_attacks, eval_k, eval_size, global_seed,
                          eval_out);
    if (*abl_cmd)
      return run_ablate(abl_data, abl_model, abl_feature, abl_config, abl_attacks,
                        abl_attack, abl_k, abl_eval_size, abl_out);
    if (*swp_cmd)
      return run_sweep(swp_data, swp_attack, swp_model, swp_defense, swp_axis,
                       swp_values, swp_attacks, swp_k, swp_eval_size, global_seed,
                       swp_out);
    if (*vis_cmd) {
      vis_attack.seed = global_seed;
      return run_visualize(vis_data, vis_attack, vis_model, vis_defense, vis_samples,
                           vis_k, vis_tap, vis_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
