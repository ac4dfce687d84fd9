// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpa/error.hpp"

namespace dpa::io {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian and written by memcpy");

/// Append-only byte buffer for the binary file formats.
class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.append(s); }

  template <typename T>
  void pod(T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf_.append(raw, sizeof(T));
  }

  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }
  void f64(double v) { pod(v); }

  void f32_array(std::span<const double> values) {
    for (double v : values) pod(static_cast<float>(v));
  }
  void f64_array(std::span<const double> values) {
    for (double v : values) pod(v);
  }
  void string(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }

  const std::string& buffer() const noexcept { return buf_; }

 private:
  std::string buf_;
};

/// Bounds-checked cursor over a byte buffer; running past the end raises
/// `short_code` so callers can pick the error that fits their format.
class ByteReader {
 public:
  ByteReader(std::string_view buf, ErrorCode short_code) : buf_(buf), short_code_(short_code) {}

  std::size_t remaining() const noexcept { return buf_.size() - pos_; }

  std::string_view bytes(std::size_t n) {
    require(n <= remaining(), short_code_, "unexpected end of file");
    auto out = buf_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  template <typename T>
  T pod() {
    auto raw = bytes(sizeof(T));
    T v;
    std::memcpy(&v, raw.data(), sizeof(T));
    return v;
  }

  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  double f64() { return pod<double>(); }

  std::vector<double> f32_array(std::size_t count) {
    require(count <= remaining() / sizeof(float), short_code_, "array exceeds file size");
    std::vector<double> out(count);
    for (auto& v : out) v = static_cast<double>(pod<float>());
    return out;
  }
  std::vector<double> f64_array(std::size_t count) {
    require(count <= remaining() / sizeof(double), short_code_, "array exceeds file size");
    std::vector<double> out(count);
    for (auto& v : out) v = pod<double>();
    return out;
  }
  std::string string() {
    const auto n = u32();
    return std::string(bytes(n));
  }

 private:
  std::string_view buf_;
  std::size_t pos_ = 0;
  ErrorCode short_code_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot open " + path + " for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  require(static_cast<bool>(out), ErrorCode::IoError, "short write to " + path);
}

}  // namespace dpa::io
