#pragma once

#include <string>
#include <vector>

#include "egcfl/batch.hpp"

namespace egcfl::data {

enum class DatasetKind { kCifar10Subset, kSvhnSubset, kSynthShapes };

std::string dataset_kind_name(DatasetKind kind);
DatasetKind dataset_kind_from_name(const std::string& name);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::kSynthShapes;
  int train_size = 2000;
  int test_size = 512;
  int height = 32, width = 32, channels = 3;
  int class_count = 10;
  std::string root_path;  // source directory for CIFAR-10/SVHN binaries
  uint64_t seed = 7;
};

struct Dataset {
  DatasetSpec spec;
  ImageBatch train, test;
  uint64_t checksum = 0;
};

// Materializes the dataset without touching the cache.
Dataset build_dataset(const DatasetSpec& spec);

// Cached ingestion: loads the binary tensor archive + JSON manifest under
// cache_dir when present and intact (manifest checksum verified), otherwise
// rebuilds and rewrites both. A corrupt cache triggers re-ingestion with a
// warning on stderr; a missing source directory for file-backed datasets is
// fatal.
Dataset ingest(const DatasetSpec& spec, const std::string& cache_dir);

std::vector<int> label_histogram(const ImageBatch& batch, int class_count);

// Cache file locations for a spec (used by tests and the CLI).
std::string cache_archive_path(const DatasetSpec& spec, const std::string& cache_dir);
std::string cache_manifest_path(const DatasetSpec& spec, const std::string& cache_dir);

}  // namespace egcfl::data
