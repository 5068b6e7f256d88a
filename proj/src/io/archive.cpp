#include "egcfl/io/archive.hpp"

#include <cstring>

#include "egcfl/io/fsutil.hpp"

namespace egcfl::io {

namespace {

constexpr char kMagic[4] = {'E', 'G', 'C', 'A'};
constexpr uint32_t kVersion = 1;

template <typename T>
void append_pod(std::vector<uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T read_pod(const std::string& buf, size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw IoError("archive: truncated file");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

void TensorArchive::put_f64(const std::string& name, const std::vector<int>& dims,
                            const real_t* data) {
  Entry e;
  e.name = name;
  e.dtype = DType::kF64;
  e.dims = dims;
  e.bytes.resize(static_cast<size_t>(e.element_count()) * sizeof(real_t));
  std::memcpy(e.bytes.data(), data, e.bytes.size());
  entries_.push_back(std::move(e));
}

void TensorArchive::put_i32(const std::string& name, const std::vector<int32_t>& values) {
  Entry e;
  e.name = name;
  e.dtype = DType::kI32;
  e.dims = {static_cast<int>(values.size())};
  e.bytes.resize(values.size() * sizeof(int32_t));
  std::memcpy(e.bytes.data(), values.data(), e.bytes.size());
  entries_.push_back(std::move(e));
}

bool TensorArchive::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

const TensorArchive::Entry& TensorArchive::at(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw IoError("archive: missing entry '" + name + "'");
}

std::vector<real_t> TensorArchive::get_f64(const std::string& name) const {
  const Entry& e = at(name);
  if (e.dtype != DType::kF64) throw IoError("archive: '" + name + "' is not f64");
  std::vector<real_t> out(static_cast<size_t>(e.element_count()));
  std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  return out;
}

std::vector<int32_t> TensorArchive::get_i32(const std::string& name) const {
  const Entry& e = at(name);
  if (e.dtype != DType::kI32) throw IoError("archive: '" + name + "' is not i32");
  std::vector<int32_t> out(static_cast<size_t>(e.element_count()));
  std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  return out;
}

std::vector<uint8_t> TensorArchive::serialize() const {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  append_pod(out, kVersion);
  append_pod(out, static_cast<uint64_t>(entries_.size()));
  for (const auto& e : entries_) {
    append_pod(out, static_cast<uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    append_pod(out, static_cast<uint8_t>(e.dtype));
    append_pod(out, static_cast<uint8_t>(e.dims.size()));
    for (int d : e.dims) append_pod(out, static_cast<int32_t>(d));
    append_pod(out, static_cast<uint64_t>(e.bytes.size()));
    out.insert(out.end(), e.bytes.begin(), e.bytes.end());
  }
  return out;
}

void TensorArchive::save(const std::string& path) const {
  const auto bytes = serialize();
  atomic_write_file(path, bytes.data(), bytes.size());
}

TensorArchive TensorArchive::load(const std::string& path) {
  const std::string buf = read_file(path);
  size_t pos = 0;
  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw IoError("archive: bad magic in " + path);
  pos = 4;
  const auto version = read_pod<uint32_t>(buf, pos);
  if (version != kVersion) throw IoError("archive: unsupported version in " + path);
  const auto count = read_pod<uint64_t>(buf, pos);
  TensorArchive arch;
  for (uint64_t i = 0; i < count; ++i) {
    Entry e;
    const auto name_len = read_pod<uint32_t>(buf, pos);
    if (pos + name_len > buf.size()) throw IoError("archive: truncated name");
    e.name.assign(buf.data() + pos, name_len);
    pos += name_len;
    e.dtype = static_cast<DType>(read_pod<uint8_t>(buf, pos));
    const auto ndim = read_pod<uint8_t>(buf, pos);
    for (int d = 0; d < ndim; ++d) e.dims.push_back(read_pod<int32_t>(buf, pos));
    const auto payload = read_pod<uint64_t>(buf, pos);
    if (pos + payload > buf.size()) throw IoError("archive: truncated payload");
    e.bytes.assign(buf.begin() + static_cast<ptrdiff_t>(pos),
                   buf.begin() + static_cast<ptrdiff_t>(pos + payload));
    pos += payload;
    arch.entries_.push_back(std::move(e));
  }
  return arch;
}

}  // namespace egcfl::io
