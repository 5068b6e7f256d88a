#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "egcfl/classifier.hpp"
#include "egcfl/pipeline.hpp"

namespace egcfl::io {

// Checkpoints are a tensor archive (parameters + norm statistics) plus a JSON
// sidecar at <path>.json holding the architecture, a parameter checksum, and
// caller metadata.
void save_classifier(const std::string& path, Classifier& model,
                     const nlohmann::json& extra = nlohmann::json::object());
std::unique_ptr<Classifier> load_classifier(const std::string& path);

void save_pipeline(const std::string& path, pipeline::DefensePipeline& defense,
                   const nlohmann::json& extra = nlohmann::json::object());
std::unique_ptr<pipeline::DefensePipeline> load_pipeline(const std::string& path);

nlohmann::json read_sidecar(const std::string& path);

// Checksum of the serialized parameter archive on disk.
uint64_t checkpoint_checksum(const std::string& path);

}  // namespace egcfl::io
