#pragma once

// Model checkpoint file:
//   "IMCN" | u16 version | u32 n + n bytes UTF-8 architecture descriptor |
//   u32 record count | records
// record:
//   u16 n + n bytes name | u8 dtype (1 = f64, 2 = f32) | u8 rank |
//   u64 extents[rank] | little-endian IEEE-754 payload
// All integers little-endian. Writers emit f64; readers accept both.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "irismatch/binary_io.hpp"
#include "irismatch/matcher.hpp"

namespace irismatch {

inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF64 = 1;
inline constexpr std::uint8_t kDtypeF32 = 2;

inline void write_checkpoint(std::ostream& out, const IrisMatchModel& model) {
  // state() hands out writable views; saving only reads through them.
  auto entries = const_cast<IrisMatchModel&>(model).state();
  const std::string descriptor = model.architecture().to_string();
  io::write_magic(out, "IMCN");
  io::write_le<std::uint16_t>(out, kCheckpointVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(descriptor.size()));
  out.write(descriptor.data(), static_cast<std::streamsize>(descriptor.size()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    io::write_le<std::uint8_t>(out, kDtypeF64);
    io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
    for (std::size_t extent : e.shape) io::write_le<std::uint64_t>(out, extent);
    for (double v : e.values) io::write_f64(out, v);
  }
}

inline IrisMatchModel read_checkpoint(std::istream& in) {
  io::expect_magic(in, "IMCN", "checkpoint");
  const auto version = io::read_le<std::uint16_t>(in);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto descriptor = io::read_bytes(in, io::read_le<std::uint32_t>(in));
  ArchitectureSpec arch;
  try {
    arch = ArchitectureSpec::parse(descriptor);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint: bad architecture descriptor: ") + e.what());
  }
  IrisMatchModel model(arch, 0);
  std::map<std::string, StateEntry> pending;
  for (auto& e : model.state()) pending.emplace(e.name, e);

  const auto count = io::read_le<std::uint32_t>(in);
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto name = io::read_bytes(in, io::read_le<std::uint16_t>(in));
    const auto dtype = io::read_le<std::uint8_t>(in);
    const auto rank = io::read_le<std::uint8_t>(in);
    Shape shape(rank);
    for (auto& extent : shape) extent = static_cast<std::size_t>(io::read_le<std::uint64_t>(in));
    auto it = pending.find(name);
    if (it == pending.end()) throw FormatError("checkpoint: unexpected record '" + name + "'");
    if (it->second.shape != shape) {
      throw FormatError("checkpoint: record '" + name + "' has shape " + shape_string(shape) +
                        ", architecture expects " + shape_string(it->second.shape));
    }
    for (double& v : it->second.values) {
      if (dtype == kDtypeF64) {
        v = io::read_f64(in);
      } else if (dtype == kDtypeF32) {
        v = static_cast<double>(io::read_f32(in));
      } else {
        throw FormatError("checkpoint: record '" + name + "' has unknown dtype " + std::to_string(dtype));
      }
    }
    pending.erase(it);
  }
  if (!pending.empty()) throw FormatError("checkpoint: missing record '" + pending.begin()->first + "'");
  return model;
}

inline void save_checkpoint(const IrisMatchModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  write_checkpoint(out, model);
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

inline IrisMatchModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace irismatch
