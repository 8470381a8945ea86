#pragma once

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cbt/config.hpp"
#include "cbt/errors.hpp"
#include "cbt/tensor.hpp"

// Binary checkpoint container, all integers little-endian:
//
//   magic      8 bytes  "CBTCKPT\0"
//   version    u32
//   config     u64 length + UTF-8 `key = value` text (config_to_text)
//   step       i64
//   tables     parameters, ema_parameters, optimizer_state; each is
//              u32 count, then per entry: u32 name length, name bytes,
//              u8 dtype (0 = f32, 1 = f64), u32 rank, u32 dims[rank], raw data
//   rng        u64 length + stream state text
//   digest     32-byte SHA-256 of every preceding byte
namespace cbt {

using ParamMap = std::map<std::string, Tensor<float>>;
using StateMap = std::map<std::string, Tensor<double>>;

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::array<char, 8> kCheckpointMagic{'C', 'B', 'T', 'C', 'K', 'P', 'T', '\0'};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  TrainConfig config;
  ParamMap parameters;
  ParamMap ema_parameters;
  StateMap optimizer_state;
  std::string rng_state;
  std::int64_t step = 0;

  bool operator==(const Checkpoint&) const = default;
};

namespace ckpt_detail {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

class Writer {
 public:
  template <class I>
  void put_int(I v) {
    for (std::size_t i = 0; i < sizeof(I); ++i) buf_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
  void put_bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void put_blob(const std::string& s) {
    put_int<std::uint64_t>(s.size());
    buf_ += s;
  }
  template <class T>
  void put_table(const std::map<std::string, Tensor<T>>& table) {
    put_int<std::uint32_t>(static_cast<std::uint32_t>(table.size()));
    for (const auto& [name, t] : table) {
      put_int<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
      buf_ += name;
      put_int<std::uint8_t>(std::is_same_v<T, float> ? 0 : 1);
      put_int<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
      for (int d : t.shape()) put_int<std::uint32_t>(static_cast<std::uint32_t>(d));
      put_bytes(t.data(), t.size() * sizeof(T));
    }
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& data, std::size_t end) : data_(data), end_(end) {}

  void need(std::size_t n) const {
    if (pos_ + n > end_) throw IntegrityError("checkpoint truncated");
  }
  template <class I>
  I get_int() {
    need(sizeof(I));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(I); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(I);
    return static_cast<I>(v);
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_blob() { return get_string(get_int<std::uint64_t>()); }

  template <class T>
  std::map<std::string, Tensor<T>> get_table() {
    std::map<std::string, Tensor<T>> out;
    const auto count = get_int<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string name = get_string(get_int<std::uint32_t>());
      const auto dtype = get_int<std::uint8_t>();
      if (dtype != (std::is_same_v<T, float> ? 0 : 1)) throw IntegrityError("unexpected dtype for '" + name + "'");
      const auto rank = get_int<std::uint32_t>();
      if (rank > 8) throw IntegrityError("implausible rank for '" + name + "'");
      Shape shape;
      for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<int>(get_int<std::uint32_t>()));
      const std::size_t n = shape_numel(shape);
      need(n * sizeof(T));
      std::vector<T> values(n);
      std::memcpy(values.data(), data_.data() + pos_, n * sizeof(T));
      pos_ += n * sizeof(T);
      out.emplace(std::move(name), Tensor<T>(std::move(shape), std::move(values)));
    }
    return out;
  }
  std::size_t pos() const noexcept { return pos_; }

 private:
  const std::string& data_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

inline std::array<unsigned char, 32> sha256(const void* data, std::size_t n) {
  std::array<unsigned char, 32> out{};
  unsigned int len = 0;
  if (EVP_Digest(data, n, out.data(), &len, EVP_sha256(), nullptr) != 1 || len != 32)
    throw Error("SHA-256 computation failed");
  return out;
}

}  // namespace ckpt_detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  for (const auto* table : {&c.parameters, &c.ema_parameters})
    for (const auto& [name, t] : *table)
      if (!all_finite(t)) throw NumericalError("refusing to save non-finite tensor '" + name + "'");
  if (c.parameters.size() != c.ema_parameters.size())
    throw ValidationError("parameter and EMA maps have different keys");
  for (auto a = c.parameters.begin(), b = c.ema_parameters.begin(); a != c.parameters.end(); ++a, ++b)
    if (a->first != b->first) throw ValidationError("parameter and EMA maps have different keys");

  ckpt_detail::Writer w;
  w.put_bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.put_int<std::uint32_t>(c.version);
  w.put_blob(config_to_text(c.config));
  w.put_int<std::int64_t>(c.step);
  w.put_table(c.parameters);
  w.put_table(c.ema_parameters);
  w.put_table(c.optimizer_state);
  w.put_blob(c.rng_state);
  const auto digest = ckpt_detail::sha256(w.buffer().data(), w.buffer().size());
  w.put_bytes(digest.data(), digest.size());
  return std::move(w.buffer());
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  constexpr std::size_t kHeader = kCheckpointMagic.size() + sizeof(std::uint32_t);
  if (bytes.size() < kHeader + 32) throw IntegrityError("checkpoint too short");
  if (std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
    throw IntegrityError("not a checkpoint file (bad magic)");
  const std::size_t body = bytes.size() - 32;
  ckpt_detail::Reader r(bytes, body);
  r.get_string(kCheckpointMagic.size());
  Checkpoint c;
  c.version = r.get_int<std::uint32_t>();
  if (c.version != kCheckpointVersion) throw UnsupportedVersionError(c.version);
  const auto digest = ckpt_detail::sha256(bytes.data(), body);
  if (std::memcmp(digest.data(), bytes.data() + body, 32) != 0) throw IntegrityError("checkpoint digest mismatch");
  c.config = parse_config(r.get_blob());
  c.step = r.get_int<std::int64_t>();
  c.parameters = r.get_table<float>();
  c.ema_parameters = r.get_table<float>();
  c.optimizer_state = r.get_table<double>();
  c.rng_state = r.get_blob();
  if (r.pos() != body) throw IntegrityError("trailing bytes before digest");
  return c;
}

// Writes to a temporary sibling and renames, so an existing file at `path`
// is only replaced by a complete checkpoint.
inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(c);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace cbt
