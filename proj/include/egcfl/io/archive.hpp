#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "egcfl/common.hpp"

namespace egcfl::io {

// Flat binary container for named typed arrays; backs dataset caches and
// model checkpoints. Layout (little-endian, fixed for this artifact):
//   magic "EGCA", u32 version, u64 entry count,
//   per entry: u32 name length, name bytes, u8 dtype, u8 ndim, i32 dims[],
//              u64 payload bytes, payload.
class TensorArchive {
 public:
  enum class DType : uint8_t { kF64 = 0, kI32 = 1, kU8 = 2 };

  struct Entry {
    std::string name;
    DType dtype = DType::kF64;
    std::vector<int> dims;
    std::vector<uint8_t> bytes;

    int64_t element_count() const {
      int64_t n = 1;
      for (int d : dims) n *= d;
      return n;
    }
  };

  void put_f64(const std::string& name, const std::vector<int>& dims,
               const real_t* data);
  void put_i32(const std::string& name, const std::vector<int32_t>& values);

  bool contains(const std::string& name) const;
  const Entry& at(const std::string& name) const;
  std::vector<real_t> get_f64(const std::string& name) const;
  std::vector<int32_t> get_i32(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<uint8_t> serialize() const;
  uint64_t checksum() const {
    const auto bytes = serialize();
    return fnv1a(bytes.data(), bytes.size());
  }

  void save(const std::string& path) const;
  static TensorArchive load(const std::string& path);

 private:
  std::vector<Entry> entries_;
};

}  // namespace egcfl::io
