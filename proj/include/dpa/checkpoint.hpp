// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "dpa/binary_io.hpp"
#include "dpa/error.hpp"
#include "dpa/trainer.hpp"

namespace dpa {

/// Checkpoint layout (little-endian):
///   "DPAC" | u32 version | string config_json | u32 C | u32 d | u32 N | u64 epochs_done
///   f64 Z[C*d] | f64 scale[d] | f64 bias[d] | f64 P[C*d] | u64 counts[C]
///   f64 running_mean[C] | f64 momentum
///   per optimizer (prototypes, adapter): u64 step | u64 len | f64 m[len] | f64 v[len]
///   f64 bank_features[N*d] | u32 bank_labels[N] | u8 bank_filled[N]
///   string report_json | u64 fnv1a-64 of every preceding byte
/// State arrays are float64 so that a resumed run continues bit-exactly.
struct Checkpoint {
  TrainConfig config;
  TrainState state;

  bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline void write_opt(io::ByteWriter& w, const AdamWState& s) {
  w.u64(s.step);
  w.u64(s.m.size());
  w.f64_array(s.m);
  w.f64_array(s.v);
}

inline AdamWState read_opt(io::ByteReader& r, const AdamWHyper& hyper) {
  AdamWState s;
  s.hyper = hyper;
  s.step = r.u64();
  const auto len = r.u64();
  s.m = r.f64_array(len);
  s.v = r.f64_array(len);
  return s;
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  const auto& s = ck.state;
  const std::size_t c = s.textual.Z.rows(), d = s.textual.Z.cols(), n = s.bank.size();
  io::ByteWriter w;
  w.bytes("DPAC");
  w.u32(kCheckpointVersion);
  w.string(to_json(ck.config).dump());
  w.u32(static_cast<std::uint32_t>(c));
  w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(n));
  w.u64(s.epochs_done);
  w.f64_array(s.textual.Z.flat());
  w.f64_array(s.adapter.scale);
  w.f64_array(s.adapter.bias);
  w.f64_array(s.image.P.flat());
  for (auto count : s.image.counts) w.u64(count);
  w.f64_array(s.da.running_mean);
  w.f64(s.da.momentum);
  detail::write_opt(w, s.prototype_opt);
  detail::write_opt(w, s.adapter_opt);
  w.f64_array(s.bank.features.flat());
  for (int y : s.bank.labels) w.u32(static_cast<std::uint32_t>(y));
  for (bool f : s.bank.filled) w.pod<std::uint8_t>(f ? 1 : 0);
  nlohmann::json report = nlohmann::json::array();
  for (const auto& rec : s.report.epochs) report.push_back(to_json(rec));
  w.string(report.dump());
  const auto digest = detail::fnv1a(w.buffer());
  w.u64(digest);
  return w.buffer();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  require(bytes.size() >= 16 && bytes.substr(0, 4) == "DPAC", ErrorCode::CorruptFile, "missing DPAC magic");
  io::ByteReader r(bytes, ErrorCode::CorruptFile);
  r.bytes(4);
  const auto version = r.u32();
  require(version == kCheckpointVersion, ErrorCode::VersionMismatch,
          "checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  {
    io::ByteReader tail(bytes.substr(bytes.size() - 8), ErrorCode::CorruptFile);
    require(tail.u64() == detail::fnv1a(bytes.substr(0, bytes.size() - 8)), ErrorCode::CorruptFile,
            "checksum mismatch");
  }

  Checkpoint ck;
  try {
    ck.config = train_config_from_json(nlohmann::json::parse(r.string()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptFile, std::string("config echo: ") + e.what());
  }
  auto& s = ck.state;
  const std::size_t c = r.u32(), d = r.u32(), n = r.u32();
  s.epochs_done = r.u64();
  s.textual.Z = Mat(c, d, r.f64_array(c * d));
  s.adapter.scale = r.f64_array(d);
  s.adapter.bias = r.f64_array(d);
  s.image.P = Mat(c, d, r.f64_array(c * d));
  s.image.counts.resize(c);
  for (auto& count : s.image.counts) count = r.u64();
  s.da.running_mean = r.f64_array(c);
  s.da.momentum = r.f64();
  s.prototype_opt = detail::read_opt(r, ck.config.prototype_optim);
  s.adapter_opt = detail::read_opt(r, ck.config.adapter_optim);
  s.bank = MemoryBank(n, d);
  s.bank.features = Mat(n, d, r.f64_array(n * d));
  for (auto& y : s.bank.labels) {
    const auto raw = r.u32();
    require(raw < c, ErrorCode::CorruptFile, "memory bank label out of range");
    y = static_cast<int>(raw);
  }
  for (std::size_t i = 0; i < n; ++i) s.bank.filled[i] = r.pod<std::uint8_t>() != 0;
  try {
    for (const auto& rec : nlohmann::json::parse(r.string())) s.report.epochs.push_back(epoch_record_from_json(rec));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptFile, std::string("report: ") + e.what());
  }
  require(r.remaining() == 8, ErrorCode::CorruptFile, "unexpected bytes before checksum");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  io::write_file(path.string(), encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path.string()));
}

}  // namespace dpa
