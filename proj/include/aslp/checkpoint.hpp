#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aslp/adaptive.hpp"
#include "aslp/binary_io.hpp"
#include "aslp/files.hpp"
#include "aslp/model.hpp"

namespace aslp {

/// Checkpoint layout, little-endian:
///   "ASLPCKPT" | u16 version | sections...
/// each section is a 4-byte tag, a u64 payload length, then the payload.
///   PRMS  u32 hidden | u64 n | n x f64
///   ADAM  u64 step | f64 lr | u64 n | n x f64 (m) | n x f64 (v)
///   CALB  u8 present | [u8 mode | f64 eta | f64 lambda | u64 n | n x f64 alpha | n x f64 beta]
///   SCAL  u8 has_ideal | f64 ideal_accuracy | u64 epoch
///   CONF  UTF-8 "key=value\n" lines, keys sorted
inline constexpr char kCheckpointMagic[8] = {'A', 'S', 'L', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint16_t version = kCheckpointVersion;
  SegmenterParams params;
  AdamState adam;
  std::optional<CalibState> calib;
  std::optional<double> ideal_accuracy;
  std::uint64_t epoch = 0;
  std::map<std::string, std::string> config;
};

namespace detail {

inline void put_section(io::ByteWriter& out, const char (&tag)[5], const io::ByteWriter& payload) {
  out.raw(std::string_view(tag, 4));
  out.u64(payload.data().size());
  out.bytes(payload.data());
}

inline void put_doubles(io::ByteWriter& w, const std::vector<double>& v) {
  for (double x : v) w.f64(x);
}

inline std::vector<double> get_doubles(io::ByteReader& r, std::uint64_t n) {
  r.need(n * 8);
  std::vector<double> v(n);
  for (auto& x : v) x = r.f64();
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  io::ByteWriter out;
  out.raw(std::string_view(kCheckpointMagic, 8));
  out.u16(ck.version);

  io::ByteWriter prms;
  prms.u32(static_cast<std::uint32_t>(ck.params.hidden()));
  prms.u64(ck.params.size());
  for (double v : ck.params.values()) prms.f64(v);
  detail::put_section(out, "PRMS", prms);

  io::ByteWriter adam;
  adam.u64(ck.adam.step);
  adam.f64(ck.adam.lr);
  adam.u64(ck.adam.m.size());
  detail::put_doubles(adam, ck.adam.m);
  detail::put_doubles(adam, ck.adam.v);
  detail::put_section(out, "ADAM", adam);

  io::ByteWriter calb;
  calb.u8(ck.calib ? 1 : 0);
  if (ck.calib) {
    calb.u8(static_cast<std::uint8_t>(ck.calib->mode()));
    calb.f64(ck.calib->eta());
    calb.f64(ck.calib->lambda());
    calb.u64(ck.calib->size());
    detail::put_doubles(calb, ck.calib->alphas());
    detail::put_doubles(calb, ck.calib->betas());
  }
  detail::put_section(out, "CALB", calb);

  io::ByteWriter scal;
  scal.u8(ck.ideal_accuracy ? 1 : 0);
  scal.f64(ck.ideal_accuracy.value_or(0.0));
  scal.u64(ck.epoch);
  detail::put_section(out, "SCAL", scal);

  io::ByteWriter conf;
  for (const auto& [k, v] : ck.config) conf.raw(k + "=" + v + "\n");
  detail::put_section(out, "CONF", conf);
  return out.take();
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  io::ByteReader r(bytes.data(), bytes.size(), source);
  if (r.raw(8) != std::string_view(kCheckpointMagic, 8)) r.fail("not a checkpoint (bad magic)");
  Checkpoint ck;
  ck.version = r.u16();
  if (ck.version != kCheckpointVersion) {
    r.fail("checkpoint version " + std::to_string(ck.version) + " is not supported (expected " +
           std::to_string(kCheckpointVersion) + ")");
  }
  auto section = [&](const char* tag) {
    if (r.raw(4) != std::string_view(tag, 4)) r.fail(std::string("expected section ") + tag);
    const std::uint64_t len = r.u64();
    r.need(len);
    return len;
  };
  auto check_end = [&](std::size_t start, std::uint64_t len, const char* tag) {
    if (r.offset() - start != len) r.fail(std::string("section ") + tag + " length mismatch");
  };

  auto len = section("PRMS");
  auto start = r.offset();
  const std::uint32_t hidden = r.u32();
  const std::uint64_t n = r.u64();
  if (hidden == 0 || n != ParamSet::count_for(hidden)) r.fail("parameter count does not match hidden width");
  ck.params = SegmenterParams(hidden);
  auto pv = ck.params.values();
  for (auto& v : pv) v = r.f64();
  check_end(start, len, "PRMS");

  len = section("ADAM");
  start = r.offset();
  ck.adam.step = r.u64();
  ck.adam.lr = r.f64();
  const std::uint64_t moments = r.u64();
  if (moments != n) r.fail("optimizer moments do not match parameters");
  ck.adam.m = detail::get_doubles(r, moments);
  ck.adam.v = detail::get_doubles(r, moments);
  check_end(start, len, "ADAM");

  len = section("CALB");
  start = r.offset();
  if (r.u8() != 0) {
    const std::uint8_t mode = r.u8();
    if (mode > 2) r.fail("unknown calibration mode");
    const double eta = r.f64();
    const double lambda = r.f64();
    const std::uint64_t samples = r.u64();
    auto alphas = detail::get_doubles(r, samples);
    auto betas = detail::get_doubles(r, samples);
    ck.calib = CalibState::restore(static_cast<AdaptMode>(mode), eta, lambda, std::move(alphas),
                                   std::move(betas), std::nullopt);
  }
  check_end(start, len, "CALB");

  len = section("SCAL");
  start = r.offset();
  const bool has_ideal = r.u8() != 0;
  const double ideal = r.f64();
  if (has_ideal) ck.ideal_accuracy = ideal;
  ck.epoch = r.u64();
  check_end(start, len, "SCAL");

  len = section("CONF");
  std::istringstream text(r.raw(len));
  std::string line;
  while (std::getline(text, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) r.fail("malformed config echo line '" + line + "'");
    ck.config[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  if (ck.calib && ck.ideal_accuracy) {
    ck.calib = CalibState::restore(ck.calib->mode(), ck.calib->eta(), ck.calib->lambda(), ck.calib->alphas(),
                                   ck.calib->betas(), ck.ideal_accuracy);
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  io::write_file(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

}  // namespace aslp
