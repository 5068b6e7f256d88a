#include "egcfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "egcfl/io/archive.hpp"
#include "egcfl/io/fsutil.hpp"

namespace egcfl::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string dataset_kind_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kCifar10Subset: return "cifar10";
    case DatasetKind::kSvhnSubset: return "svhn";
    case DatasetKind::kSynthShapes: return "synth";
  }
  return "unknown";
}

DatasetKind dataset_kind_from_name(const std::string& name) {
  if (name == "cifar10") return DatasetKind::kCifar10Subset;
  if (name == "svhn") return DatasetKind::kSvhnSubset;
  if (name == "synth") return DatasetKind::kSynthShapes;
  throw InvalidArgument("unknown dataset kind: " + name);
}

namespace {

// ---------------------------------------------------------------------------
// Synthetic shapes: ten geometric classes on gradient+noise backgrounds.
// ---------------------------------------------------------------------------

bool inside_shape(int cls, real_t dx, real_t dy, real_t r) {
  const real_t ax = std::fabs(dx), ay = std::fabs(dy);
  switch (cls) {
    case 0:  // filled circle
      return dx * dx + dy * dy <= r * r;
    case 1:  // filled square
      return ax <= 0.8 * r && ay <= 0.8 * r;
    case 2: {  // upward triangle
      const real_t down = dy + r;  // 0 at apex
      return down >= 0.0 && down <= 1.8 * r && ax <= 0.55 * down;
    }
    case 3:  // ring
      return dx * dx + dy * dy <= r * r && dx * dx + dy * dy >= 0.3 * r * r;
    case 4:  // plus
      return (ax <= 0.3 * r && ay <= r) || (ay <= 0.3 * r && ax <= r);
    case 5:  // horizontal stripes
      return ax <= r && ay <= r &&
             (static_cast<int>(std::floor((dy + r) / (0.5 * r))) % 2 == 0);
    case 6:  // vertical stripes
      return ax <= r && ay <= r &&
             (static_cast<int>(std::floor((dx + r) / (0.5 * r))) % 2 == 0);
    case 7:  // checkerboard
      return ax <= r && ay <= r &&
             ((static_cast<int>(std::floor((dx + r) / (0.5 * r))) +
               static_cast<int>(std::floor((dy + r) / (0.5 * r)))) %
                  2 ==
              0);
    case 8:  // diamond
      return ax + ay <= r;
    case 9:  // diagonal cross
      return std::fabs(ax - ay) <= 0.35 * r && std::max(ax, ay) <= r;
  }
  return false;
}

void render_shape_image(real_t* dst, int h, int w, int cls, Rng& rng) {
  // background: bilinear gradient between four corner colors + light noise.
  // The noise floor stays well under typical deadzone widths so the images
  // keep natural-image-like energy compaction under the block transform.
  real_t corners[4][3];
  for (auto& corner : corners)
    for (real_t& ch : corner) ch = rng.uniform(0.1, 0.9);
  const real_t noise_sigma = rng.uniform(0.01, 0.035);

  // shape parameters
  const real_t cx = rng.uniform(0.38, 0.62) * w;
  const real_t cy = rng.uniform(0.38, 0.62) * h;
  const real_t r = rng.uniform(0.55, 0.95) * 0.36 * std::min(h, w);
  real_t color[3];
  const int bright = rng.uniform_int(3);
  for (int c = 0; c < 3; ++c)
    color[c] = (c == bright) ? rng.uniform(0.75, 1.0) : rng.uniform(0.0, 0.35);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const real_t fx = static_cast<real_t>(x) / (w - 1);
      const real_t fy = static_cast<real_t>(y) / (h - 1);
      // 2x2 supersampled coverage for soft edges
      real_t cover = 0.0;
      for (real_t oy : {0.25, 0.75})
        for (real_t ox : {0.25, 0.75})
          if (inside_shape(cls, x + ox - cx, y + oy - cy, r)) cover += 0.25;
      for (int c = 0; c < 3; ++c) {
        const real_t top = corners[0][c] + fx * (corners[1][c] - corners[0][c]);
        const real_t bot = corners[2][c] + fx * (corners[3][c] - corners[2][c]);
        real_t v = top + fy * (bot - top);
        v = (1.0 - cover) * v + cover * color[c];
        v += noise_sigma * rng.normal();
        dst[static_cast<int64_t>(c) * h * w + static_cast<int64_t>(y) * w + x] =
            clamp01(v);
      }
    }
  }
}

ImageBatch build_synth_split(const DatasetSpec& spec, int count, uint64_t seed) {
  ImageBatch batch;
  batch.images =
      nn::Tensor::zeros({count, spec.channels, spec.height, spec.width});
  batch.labels.resize(static_cast<size_t>(count));
  Rng rng(seed);
  // exact class balance, order shuffled
  std::vector<int> labels(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) labels[static_cast<size_t>(i)] = i % spec.class_count;
  for (int i = count - 1; i > 0; --i)
    std::swap(labels[static_cast<size_t>(i)],
              labels[static_cast<size_t>(rng.uniform_int(i + 1))]);

  const int64_t stride =
      static_cast<int64_t>(spec.channels) * spec.height * spec.width;
  for (int i = 0; i < count; ++i) {
    batch.labels[static_cast<size_t>(i)] = labels[static_cast<size_t>(i)];
    render_shape_image(batch.images.data() + i * stride, spec.height, spec.width,
                       labels[static_cast<size_t>(i)], rng);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// CIFAR-10 style binaries: one record = label byte + channel-major pixels.
// ---------------------------------------------------------------------------

struct RawRecords {
  std::vector<uint8_t> pixels;  // records * 3072
  std::vector<int> labels;
};

RawRecords read_record_files(const std::vector<std::string>& paths, int record_pixels) {
  RawRecords out;
  for (const auto& path : paths) {
    const std::string buf = io::read_file(path);
    const size_t record = 1 + static_cast<size_t>(record_pixels);
    if (buf.size() % record != 0)
      throw IoError("dataset: unexpected record size in " + path);
    const size_t n = buf.size() / record;
    for (size_t i = 0; i < n; ++i) {
      out.labels.push_back(static_cast<uint8_t>(buf[i * record]));
      const auto* px = reinterpret_cast<const uint8_t*>(buf.data() + i * record + 1);
      out.pixels.insert(out.pixels.end(), px, px + record_pixels);
    }
  }
  return out;
}

std::vector<std::string> locate_binaries(const std::string& root,
                                         const std::vector<std::string>& names) {
  // accept the files either directly in root or one directory down
  // (e.g. cifar-10-batches-bin)
  std::vector<std::string> found;
  for (const auto& name : names) {
    fs::path direct = fs::path(root) / name;
    if (fs::exists(direct)) {
      found.push_back(direct.string());
      continue;
    }
    bool hit = false;
    if (fs::exists(root))
      for (const auto& sub : fs::directory_iterator(root)) {
        if (!sub.is_directory()) continue;
        fs::path nested = sub.path() / name;
        if (fs::exists(nested)) {
          found.push_back(nested.string());
          hit = true;
          break;
        }
      }
    if (!hit)
      throw IoError("dataset: missing source file '" + name + "' under " + root);
  }
  return found;
}

ImageBatch subset_from_records(const RawRecords& raw, const DatasetSpec& spec,
                               int count, uint64_t seed) {
  const int record_pixels = spec.channels * spec.height * spec.width;
  const int total = static_cast<int>(raw.labels.size());
  if (count > total)
    throw InvalidArgument("dataset: requested subset larger than the source (" +
                          std::to_string(count) + " > " + std::to_string(total) + ")");
  std::vector<int> order(static_cast<size_t>(total));
  for (int i = 0; i < total; ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  for (int i = total - 1; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)],
              order[static_cast<size_t>(rng.uniform_int(i + 1))]);

  ImageBatch batch;
  batch.images = nn::Tensor::zeros({count, spec.channels, spec.height, spec.width});
  batch.labels.resize(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int src = order[static_cast<size_t>(i)];
    batch.labels[static_cast<size_t>(i)] = raw.labels[static_cast<size_t>(src)];
    const uint8_t* px = raw.pixels.data() + static_cast<int64_t>(src) * record_pixels;
    real_t* dst = batch.images.data() + static_cast<int64_t>(i) * record_pixels;
    for (int j = 0; j < record_pixels; ++j)
      dst[j] = static_cast<real_t>(px[j]) / 255.0;
  }
  return batch;
}

Dataset build_file_backed(const DatasetSpec& spec) {
  const int record_pixels = spec.channels * spec.height * spec.width;
  std::vector<std::string> train_files, test_files;
  if (spec.kind == DatasetKind::kCifar10Subset) {
    train_files = locate_binaries(
        spec.root_path, {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                         "data_batch_4.bin", "data_batch_5.bin"});
    test_files = locate_binaries(spec.root_path, {"test_batch.bin"});
  } else {
    train_files = locate_binaries(spec.root_path, {"train_32x32.bin"});
    test_files = locate_binaries(spec.root_path, {"test_32x32.bin"});
  }
  Dataset ds;
  ds.spec = spec;
  const RawRecords train_raw = read_record_files(train_files, record_pixels);
  const RawRecords test_raw = read_record_files(test_files, record_pixels);
  ds.train = subset_from_records(train_raw, spec, spec.train_size,
                                 Rng::substream(spec.seed, 1));
  ds.test = subset_from_records(test_raw, spec, spec.test_size,
                                Rng::substream(spec.seed, 2));
  return ds;
}

io::TensorArchive to_archive(const Dataset& ds) {
  io::TensorArchive arch;
  arch.put_f64("train_images", ds.train.images.shape(), ds.train.images.data());
  arch.put_i32("train_labels",
               std::vector<int32_t>(ds.train.labels.begin(), ds.train.labels.end()));
  arch.put_f64("test_images", ds.test.images.shape(), ds.test.images.data());
  arch.put_i32("test_labels",
               std::vector<int32_t>(ds.test.labels.begin(), ds.test.labels.end()));
  return arch;
}

ImageBatch batch_from_archive(const io::TensorArchive& arch, const std::string& images,
                              const std::string& labels) {
  const auto& entry = arch.at(images);
  ImageBatch b;
  b.images = nn::Tensor::from_data(entry.dims, arch.get_f64(images));
  const auto raw_labels = arch.get_i32(labels);
  b.labels.assign(raw_labels.begin(), raw_labels.end());
  return b;
}

std::string spec_slug(const DatasetSpec& spec) {
  std::ostringstream ss;
  ss << dataset_kind_name(spec.kind) << "_tr" << spec.train_size << "_te"
     << spec.test_size << "_s" << spec.seed;
  return ss.str();
}

}  // namespace

Dataset build_dataset(const DatasetSpec& spec) {
  if (spec.train_size < 1 || spec.test_size < 1)
    throw InvalidArgument("dataset: split sizes must be positive");
  Dataset ds;
  if (spec.kind == DatasetKind::kSynthShapes) {
    ds.spec = spec;
    ds.train = build_synth_split(spec, spec.train_size, Rng::substream(spec.seed, 1));
    ds.test = build_synth_split(spec, spec.test_size, Rng::substream(spec.seed, 2));
  } else {
    ds = build_file_backed(spec);
  }
  ds.checksum = to_archive(ds).checksum();
  return ds;
}

std::string cache_archive_path(const DatasetSpec& spec, const std::string& cache_dir) {
  return (fs::path(cache_dir) / (spec_slug(spec) + ".bin")).string();
}

std::string cache_manifest_path(const DatasetSpec& spec, const std::string& cache_dir) {
  return (fs::path(cache_dir) / (spec_slug(spec) + ".json")).string();
}

Dataset ingest(const DatasetSpec& spec, const std::string& cache_dir) {
  const std::string bin_path = cache_archive_path(spec, cache_dir);
  const std::string manifest_path = cache_manifest_path(spec, cache_dir);

  if (io::file_exists(bin_path) && io::file_exists(manifest_path)) {
    try {
      const io::TensorArchive arch = io::TensorArchive::load(bin_path);
      const json manifest = json::parse(io::read_file(manifest_path));
      const uint64_t expected = std::stoull(manifest.at("checksum").get<std::string>(),
                                            nullptr, 16);
      if (arch.checksum() == expected) {
        Dataset ds;
        ds.spec = spec;
        ds.train = batch_from_archive(arch, "train_images", "train_labels");
        ds.test = batch_from_archive(arch, "test_images", "test_labels");
        ds.checksum = expected;
        return ds;
      }
      std::cerr << "warning: dataset cache checksum mismatch for " << bin_path
                << ", re-ingesting\n";
    } catch (const std::exception& e) {
      std::cerr << "warning: dataset cache unreadable (" << e.what()
                << "), re-ingesting\n";
    }
  }

  Dataset ds = build_dataset(spec);
  io::ensure_dir(cache_dir);
  const io::TensorArchive arch = to_archive(ds);
  arch.save(bin_path);

  json manifest;
  manifest["kind"] = dataset_kind_name(spec.kind);
  manifest["train_size"] = spec.train_size;
  manifest["test_size"] = spec.test_size;
  manifest["image_shape"] = {spec.channels, spec.height, spec.width};
  manifest["class_count"] = spec.class_count;
  manifest["seed"] = spec.seed;
  {
    std::ostringstream hex;
    hex << std::hex << ds.checksum;
    manifest["checksum"] = hex.str();
  }
  manifest["train_label_histogram"] = label_histogram(ds.train, spec.class_count);
  manifest["test_label_histogram"] = label_histogram(ds.test, spec.class_count);
  io::atomic_write_file(manifest_path, manifest.dump(2) + "\n");
  return ds;
}

std::vector<int> label_histogram(const ImageBatch& batch, int class_count) {
  std::vector<int> hist(static_cast<size_t>(class_count), 0);
  for (int y : batch.labels) {
    if (y < 0 || y >= class_count)
      throw InvalidArgument("label_histogram: label out of range");
    ++hist[static_cast<size_t>(y)];
  }
  return hist;
}

}  // namespace egcfl::data
