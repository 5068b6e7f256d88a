#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "egcfl/data.hpp"
#include "egcfl/io/archive.hpp"
#include "egcfl/io/fsutil.hpp"

using namespace egcfl;
using namespace egcfl::data;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Writes CIFAR-format binary files (label byte + 3072 pixel bytes).
void write_record_file(const std::string& path, int records, uint64_t seed) {
  Rng rng(seed);
  std::ofstream out(path, std::ios::binary);
  for (int i = 0; i < records; ++i) {
    out.put(static_cast<char>(rng.uniform_int(10)));
    for (int j = 0; j < 3072; ++j)
      out.put(static_cast<char>(rng.uniform_int(256)));
  }
}

}  // namespace

TEST_CASE("synthetic shapes: determinism and balance") {
  DatasetSpec spec;
  spec.kind = DatasetKind::kSynthShapes;
  spec.train_size = 500;
  spec.test_size = 100;
  spec.seed = 7;

  const Dataset a = build_dataset(spec);
  const Dataset b = build_dataset(spec);
  CHECK(a.checksum == b.checksum);
  CHECK(a.train.images.values() == b.train.images.values());

  spec.seed = 8;
  const Dataset c = build_dataset(spec);
  CHECK(c.checksum != a.checksum);

  // balanced labels within +-2%
  const auto hist = label_histogram(a.train, 10);
  for (int count : hist)
    CHECK(std::abs(count - 50) <= std::max(1, static_cast<int>(0.02 * 500)));

  // pixel range
  for (int64_t i = 0; i < a.train.images.size(); ++i) {
    CHECK(a.train.images.data()[i] >= 0.0);
    CHECK(a.train.images.data()[i] <= 1.0);
  }

  // train and test splits are distinct draws
  CHECK(a.train.images.values() != std::vector<real_t>(
                                       a.test.images.values().begin(),
                                       a.test.images.values().begin() +
                                           a.train.images.size()));
}

TEST_CASE("ingest: cache round trip, manifest, corruption recovery") {
  const auto dir = fresh_dir("egcfl_ingest_test");
  DatasetSpec spec;
  spec.kind = DatasetKind::kSynthShapes;
  spec.train_size = 120;
  spec.test_size = 40;
  spec.seed = 3;

  const Dataset first = ingest(spec, dir.string());
  const std::string bin = cache_archive_path(spec, dir.string());
  const std::string manifest = cache_manifest_path(spec, dir.string());
  REQUIRE(io::file_exists(bin));
  REQUIRE(io::file_exists(manifest));

  const Dataset second = ingest(spec, dir.string());
  CHECK(second.checksum == first.checksum);
  CHECK(second.train.images.values() == first.train.images.values());
  CHECK(second.test.labels == first.test.labels);

  const std::string manifest_text = io::read_file(manifest);
  CHECK(manifest_text.find("\"kind\": \"synth\"") != std::string::npos);
  CHECK(manifest_text.find("\"class_count\": 10") != std::string::npos);
  CHECK(manifest_text.find("train_label_histogram") != std::string::npos);

  // corrupt one payload byte; ingest must detect and rebuild
  {
    std::fstream f(bin, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(200);
    f.put(static_cast<char>(0x5A));
  }
  const Dataset third = ingest(spec, dir.string());
  CHECK(third.checksum == first.checksum);
  CHECK(io::TensorArchive::load(bin).checksum() == first.checksum);
}

TEST_CASE("cifar-format ingestion from fixture files") {
  const auto dir = fresh_dir("egcfl_cifar_fixture");
  for (int i = 1; i <= 5; ++i)
    write_record_file((dir / ("data_batch_" + std::to_string(i) + ".bin")).string(),
                      60, 100 + static_cast<uint64_t>(i));
  write_record_file((dir / "test_batch.bin").string(), 80, 200);

  DatasetSpec spec;
  spec.kind = DatasetKind::kCifar10Subset;
  spec.train_size = 150;
  spec.test_size = 50;
  spec.root_path = dir.string();
  spec.seed = 11;

  const Dataset ds = build_dataset(spec);
  CHECK(ds.train.images.shape() == nn::Shape{150, 3, 32, 32});
  CHECK(ds.test.images.shape() == nn::Shape{50, 3, 32, 32});
  for (int y : ds.train.labels) {
    CHECK(y >= 0);
    CHECK(y <= 9);
  }
  for (int64_t i = 0; i < ds.train.images.size(); ++i) {
    CHECK(ds.train.images.data()[i] >= 0.0);
    CHECK(ds.train.images.data()[i] <= 1.0);
  }
  // deterministic subset selection
  const Dataset again = build_dataset(spec);
  CHECK(again.checksum == ds.checksum);

  // oversized request fails
  spec.train_size = 10000;
  CHECK_THROWS_AS(build_dataset(spec), InvalidArgument);

  // missing source is fatal
  spec.train_size = 10;
  spec.root_path = (dir / "nope").string();
  CHECK_THROWS_AS(build_dataset(spec), IoError);
}

TEST_CASE("tensor archive round trip") {
  io::TensorArchive arch;
  const std::vector<real_t> values = {1.5, -2.25, 0.0, 3.75};
  arch.put_f64("x", {2, 2}, values.data());
  arch.put_i32("labels", {3, 1, 4, 1, 5});

  const auto dir = fresh_dir("egcfl_archive_test");
  const std::string path = (dir / "a.bin").string();
  arch.save(path);

  const auto loaded = io::TensorArchive::load(path);
  CHECK(loaded.get_f64("x") == values);
  CHECK(loaded.get_i32("labels") == std::vector<int32_t>{3, 1, 4, 1, 5});
  CHECK(loaded.at("x").dims == std::vector<int>{2, 2});
  CHECK(loaded.checksum() == arch.checksum());
  CHECK(!loaded.contains("missing"));
  CHECK_THROWS_AS(loaded.at("missing"), IoError);
}
