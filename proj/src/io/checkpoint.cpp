#include "egcfl/io/checkpoint.hpp"

#include <sstream>

#include "egcfl/io/archive.hpp"
#include "egcfl/io/fsutil.hpp"

namespace egcfl::io {

using nlohmann::json;

namespace {

std::string hex64(uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << v;
  return ss.str();
}

TensorArchive archive_params(nn::ParamMap& params) {
  TensorArchive arch;
  for (const auto& [name, t] : params.params)
    arch.put_f64("param." + name, t.shape(), t.data());
  for (const auto& [name, buf] : params.buffers)
    arch.put_f64("buffer." + name, {static_cast<int>(buf->size())}, buf->data());
  return arch;
}

void restore_params(const TensorArchive& arch, nn::ParamMap& params,
                    const std::string& path) {
  for (auto& [name, t] : params.params) {
    const auto& entry = arch.at("param." + name);
    if (entry.dims != t.shape())
      throw IoError("checkpoint: shape mismatch for '" + name + "' in " + path);
    const auto values = arch.get_f64("param." + name);
    std::copy(values.begin(), values.end(), t.data());
  }
  for (auto& [name, buf] : params.buffers) {
    const auto values = arch.get_f64("buffer." + name);
    if (values.size() != buf->size())
      throw IoError("checkpoint: buffer size mismatch for '" + name + "' in " + path);
    std::copy(values.begin(), values.end(), buf->begin());
  }
}

json pipeline_config_json(const pipeline::PipelineConfig& cfg) {
  return json{{"in_channels", cfg.in_channels},
              {"converter_width", cfg.converter_width},
              {"cleaner_width", cfg.cleaner_width},
              {"fusion_width", cfg.fusion_width},
              {"cleaner_downsample", cfg.cleaner_downsample},
              {"sigmoid_output", cfg.sigmoid_output},
              {"tdz_enabled", cfg.tdz_enabled},
              {"block_size", cfg.block_size},
              {"delta", cfg.delta},
              {"loop_count", cfg.loop_count}};
}

pipeline::PipelineConfig pipeline_config_from_json(const json& j) {
  pipeline::PipelineConfig cfg;
  cfg.in_channels = j.at("in_channels").get<int>();
  cfg.converter_width = j.at("converter_width").get<int>();
  cfg.cleaner_width = j.at("cleaner_width").get<int>();
  cfg.fusion_width = j.at("fusion_width").get<int>();
  cfg.cleaner_downsample = j.at("cleaner_downsample").get<bool>();
  cfg.sigmoid_output = j.at("sigmoid_output").get<bool>();
  cfg.tdz_enabled = j.at("tdz_enabled").get<bool>();
  cfg.block_size = j.at("block_size").get<int>();
  cfg.delta = j.at("delta").get<real_t>();
  cfg.loop_count = j.at("loop_count").get<int>();
  return cfg;
}

}  // namespace

void save_classifier(const std::string& path, Classifier& model, const json& extra) {
  auto params = model.param_map();
  const TensorArchive arch = archive_params(params);
  arch.save(path);

  json sidecar;
  sidecar["type"] = "classifier";
  sidecar["architecture"] = model.architecture();
  if (auto* resnet = dynamic_cast<SmallResNet*>(&model)) {
    sidecar["base_width"] = resnet->config().base_width;
    sidecar["classes"] = resnet->config().classes;
    sidecar["in_channels"] = resnet->config().in_channels;
  } else if (auto* conv = dynamic_cast<SmallConv*>(&model)) {
    sidecar["base_width"] = conv->config().base_width;
    sidecar["classes"] = conv->config().classes;
    sidecar["in_channels"] = conv->config().in_channels;
  } else {
    throw IoError("save_classifier: unknown classifier implementation");
  }
  sidecar["params_checksum"] = hex64(arch.checksum());
  if (!extra.is_null() && !extra.empty()) sidecar["meta"] = extra;
  atomic_write_file(path + ".json", sidecar.dump(2) + "\n");
}

std::unique_ptr<Classifier> load_classifier(const std::string& path) {
  const json sidecar = read_sidecar(path);
  if (sidecar.at("type").get<std::string>() != "classifier")
    throw IoError("load_classifier: " + path + " is not a classifier checkpoint");
  ClassifierConfig cfg;
  cfg.base_width = sidecar.at("base_width").get<int>();
  cfg.classes = sidecar.at("classes").get<int>();
  cfg.in_channels = sidecar.at("in_channels").get<int>();
  auto model = make_classifier(
      classifier_arch_from_name(sidecar.at("architecture").get<std::string>()), cfg, 0);
  const TensorArchive arch = TensorArchive::load(path);
  auto params = model->param_map();
  restore_params(arch, params, path);
  return model;
}

void save_pipeline(const std::string& path, pipeline::DefensePipeline& defense,
                   const json& extra) {
  auto params = defense.param_map();
  const TensorArchive arch = archive_params(params);
  arch.save(path);

  json sidecar;
  sidecar["type"] = "defense_pipeline";
  sidecar["config"] = pipeline_config_json(defense.config());
  sidecar["params_checksum"] = hex64(arch.checksum());
  if (!extra.is_null() && !extra.empty()) sidecar["meta"] = extra;
  atomic_write_file(path + ".json", sidecar.dump(2) + "\n");
}

std::unique_ptr<pipeline::DefensePipeline> load_pipeline(const std::string& path) {
  const json sidecar = read_sidecar(path);
  if (sidecar.at("type").get<std::string>() != "defense_pipeline")
    throw IoError("load_pipeline: " + path + " is not a defense checkpoint");
  auto defense = std::make_unique<pipeline::DefensePipeline>(
      pipeline_config_from_json(sidecar.at("config")), 0);
  const TensorArchive arch = TensorArchive::load(path);
  auto params = defense->param_map();
  restore_params(arch, params, path);
  return defense;
}

json read_sidecar(const std::string& path) {
  return json::parse(read_file(path + ".json"));
}

uint64_t checkpoint_checksum(const std::string& path) {
  return TensorArchive::load(path).checksum();
}

}  // namespace egcfl::io
