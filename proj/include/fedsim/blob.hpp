#pragma once
//
// FSIM1 binary files. All integers and reals are little-endian.
//
//   header     "FSIM1" (5 bytes), kind (1 byte): 'P' parameters, 'D' dataset
//
//   parameters u32 tensor_count
//              per tensor: u32 name_len, name bytes, u32 rank, u64 dims[rank]
//              u64 value_count, f64 values[value_count]
//
//   dataset    u32 class_count, per class: u32 len, bytes
//              u64 input_dim
//              u32 section_count
//              per section: u8 role (0 client, 1 eval), u32 len, name bytes,
//                           u64 rows, f64 inputs[rows * input_dim],
//                           u8 targets[rows * class_count],
//                           u8 has_groups, u32 groups[rows] if has_groups
//
// A dataset holds every client section in order followed by one eval section.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/error.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

inline constexpr std::string_view kBlobMagic = "FSIM1";

class BlobError : public ValidationError {
 public:
  enum class Kind { bad_magic, wrong_kind, truncated, manifest_mismatch, corrupt };

  BlobError(Kind kind, const std::string& what) : ValidationError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

class BlobWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  const std::vector<unsigned char>& buffer() const noexcept { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class BlobReader {
 public:
  explicit BlobReader(std::vector<unsigned char> buf) : buf_(std::move(buf)) {}

  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n)
      throw BlobError(BlobError::Kind::truncated, "FSIM1: file truncated at byte " + std::to_string(pos_));
  }
  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(buf_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  // Guards size fields before allocating: `count` items of `width` bytes
  // must still fit in the buffer.
  void need_items(std::uint64_t count, std::size_t width) const {
    if (width && count > (buf_.size() - pos_) / width)
      throw BlobError(BlobError::Kind::truncated, "FSIM1: file truncated at byte " + std::to_string(pos_));
  }
  bool at_end() const noexcept { return pos_ == buf_.size(); }

  void header(char kind) {
    if (buf_.size() < kBlobMagic.size() || std::memcmp(buf_.data(), kBlobMagic.data(), kBlobMagic.size()) != 0)
      throw BlobError(BlobError::Kind::bad_magic, "FSIM1: bad magic (not an FSIM1 file)");
    pos_ = kBlobMagic.size();
    const char got = static_cast<char>(u8());
    if (got != kind)
      throw BlobError(BlobError::Kind::wrong_kind,
                      std::string("FSIM1: expected a '") + kind + "' file, found '" + got + "'");
  }

 private:
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeFailure("write failed for '" + path + "'");
}

inline void header(BlobWriter& w, char kind) {
  w.bytes(kBlobMagic.data(), kBlobMagic.size());
  w.u8(static_cast<std::uint8_t>(kind));
}

}  // namespace detail

inline std::vector<unsigned char> encode_params(const ParameterVector& p) {
  detail::BlobWriter w;
  detail::header(w, 'P');
  w.u32(static_cast<std::uint32_t>(p.manifest().size()));
  for (const auto& t : p.manifest()) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(d);
  }
  w.u64(p.size());
  for (double v : p.values()) w.f64(v);
  return w.buffer();
}

inline ParameterVector decode_params(std::vector<unsigned char> bytes) {
  detail::BlobReader r(std::move(bytes));
  r.header('P');
  Manifest manifest(r.u32());
  std::uint64_t expected = 0;
  for (auto& t : manifest) {
    t.name = r.str();
    const std::uint32_t rank = r.u32();
    r.need_items(rank, 8);
    t.shape.resize(rank);
    for (auto& d : t.shape) d = r.u64();
    expected += t.numel();
  }
  const std::uint64_t count = r.u64();
  if (count != expected)
    throw BlobError(BlobError::Kind::manifest_mismatch,
                    "FSIM1: value count " + std::to_string(count) + " does not match manifest (" +
                        std::to_string(expected) + ")");
  r.need_items(count, 8);
  std::vector<double> values(count);
  for (auto& v : values) v = r.f64();
  if (!r.at_end()) throw BlobError(BlobError::Kind::corrupt, "FSIM1: trailing bytes after parameters");
  return {std::move(manifest), std::move(values)};
}

inline void save_params(const ParameterVector& p, const std::string& path) {
  detail::write_file(path, encode_params(p));
}

inline ParameterVector load_params(const std::string& path) { return decode_params(detail::read_file(path)); }

// Load and check the layout against what the caller expects.
inline ParameterVector load_params(const std::string& path, const Manifest& expected) {
  auto p = load_params(path);
  if (p.manifest() != expected)
    throw BlobError(BlobError::Kind::manifest_mismatch, "FSIM1: checkpoint layout does not match the model");
  return p;
}

namespace detail {

inline void write_section(BlobWriter& w, std::uint8_t role, const std::string& name, const LabeledBatch& b,
                          const std::vector<std::uint32_t>& groups) {
  w.u8(role);
  w.str(name);
  w.u64(b.size());
  for (double v : b.inputs.data()) w.f64(v);
  for (double v : b.targets.data()) w.u8(v > 0.5 ? 1 : 0);
  w.u8(groups.empty() ? 0 : 1);
  for (auto g : groups) w.u32(g);
}

}  // namespace detail

inline std::vector<unsigned char> encode_task(const FederatedTask& task) {
  detail::BlobWriter w;
  detail::header(w, 'D');
  w.u32(static_cast<std::uint32_t>(task.classes.size()));
  for (const auto& c : task.classes) w.str(c);
  const std::size_t dim = task.input_dim();
  w.u64(dim);
  w.u32(static_cast<std::uint32_t>(task.clients.size() + 1));
  for (const auto& c : task.clients) {
    detail::require(c.examples.inputs.cols() == dim || c.n() == 0, "encode_task: inconsistent input width");
    detail::write_section(w, 0, c.id, c.examples, {});
  }
  detail::write_section(w, 1, "eval", task.eval.batch, task.eval.groups);
  return w.buffer();
}

inline FederatedTask decode_task(std::vector<unsigned char> bytes) {
  detail::BlobReader r(std::move(bytes));
  r.header('D');
  FederatedTask task;
  task.classes.resize(r.u32());
  for (auto& c : task.classes) c = r.str();
  const std::size_t k = task.classes.size();
  const std::uint64_t dim = r.u64();
  const std::uint32_t sections = r.u32();
  bool have_eval = false;
  for (std::uint32_t s = 0; s < sections; ++s) {
    const std::uint8_t role = r.u8();
    if (role > 1) throw BlobError(BlobError::Kind::corrupt, "FSIM1: unknown section role");
    std::string name = r.str();
    const std::uint64_t rows = r.u64();
    r.need_items(rows, dim * 8 + k);
    std::vector<double> inputs(rows * dim), targets(rows * k);
    for (auto& v : inputs) v = r.f64();
    for (auto& v : targets) {
      const auto b = r.u8();
      if (b > 1) throw BlobError(BlobError::Kind::corrupt, "FSIM1: target byte not 0/1");
      v = b;
    }
    LabeledBatch batch{Matrix(rows, dim, std::move(inputs)), Matrix(rows, k, std::move(targets))};
    std::vector<std::uint32_t> groups;
    if (r.u8()) {
      r.need_items(rows, 4);
      groups.resize(rows);
      for (auto& g : groups) g = r.u32();
    }
    if (role == 0) {
      task.clients.push_back({std::move(name), std::move(batch)});
    } else {
      if (have_eval) throw BlobError(BlobError::Kind::corrupt, "FSIM1: more than one eval section");
      have_eval = true;
      task.eval = EvalSet(std::move(batch), std::move(groups));
    }
  }
  if (!have_eval) throw BlobError(BlobError::Kind::corrupt, "FSIM1: dataset has no eval section");
  if (!r.at_end()) throw BlobError(BlobError::Kind::corrupt, "FSIM1: trailing bytes after dataset");
  return task;
}

inline void save_task(const FederatedTask& task, const std::string& path) {
  detail::write_file(path, encode_task(task));
}

inline FederatedTask load_task(const std::string& path) { return decode_task(detail::read_file(path)); }

// FNV-1a over the encoded dataset; identifies the data a run consumed.
inline std::uint64_t task_fingerprint(const FederatedTask& task) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char b : encode_task(task)) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace fedsim
