#pragma once

// Little-endian binary buffers and the provenance trailer shared by every
// binary format.

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include "nbd/error.hpp"
#include "nbd/rng.hpp"

namespace nbd::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::MissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::MissingFile, "cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    buf_.append(b, sizeof(T));
  }
  void bytes(std::string_view s) { buf_.append(s); }
  void text(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  const std::string& str() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string text() { return std::string(bytes(get<std::uint32_t>())); }
  void expect_magic(std::string_view magic) {
    require(data_.size() >= magic.size(), ErrorCode::FormatError, "file too short for magic");
    const auto got = data_.substr(0, magic.size());
    if (got != magic) {
      // Same family, different version digit.
      const bool family = got.substr(0, magic.size() - 1) == magic.substr(0, magic.size() - 1);
      fail(family ? ErrorCode::VersionMismatch : ErrorCode::FormatError,
           "expected magic " + std::string(magic) + ", found " + std::string(got));
    }
    pos_ = magic.size();
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    require(pos_ + n <= data_.size(), ErrorCode::FormatError, "unexpected end of data");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

// Hash of the producing configuration plus the run seed.
struct Provenance {
  std::string tool;
  std::string config_hash;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const { return {{"tool", tool}, {"config_hash", config_hash}, {"seed", seed}}; }
  static Provenance from_json(const nlohmann::json& j) {
    return {j.value("tool", ""), j.value("config_hash", ""), j.value("seed", std::uint64_t{0})};
  }
};

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

// Canonical hash of a JSON config: keys are sorted by nlohmann's object map.
inline std::string config_hash(const nlohmann::json& cfg) { return hex64(fnv1a(cfg.dump())); }

inline void write_provenance(Writer& w, const std::optional<Provenance>& p) {
  if (!p) return;
  w.bytes("PROV");
  w.text(p->to_json().dump());
}

inline std::optional<Provenance> read_provenance(Reader& r) {
  if (r.remaining() == 0) return std::nullopt;
  require(r.bytes(4) == "PROV", ErrorCode::FormatError, "trailing bytes are not a provenance block");
  auto p = Provenance::from_json(nlohmann::json::parse(r.text()));
  require(r.remaining() == 0, ErrorCode::FormatError, "data after provenance block");
  return p;
}

}  // namespace nbd::io
