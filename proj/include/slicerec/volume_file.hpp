#pragma once

// EBSD volume container.
//
//   "EBSDVOL1"                  8-byte magic
//   u16 version                 currently 1
//   u8  dtype                   payload element type (see VolumeDtype)
//   u32 N1, N2, N3
//   u32 channels
//   payload                     row-major, channels interleaved, little-endian
//   u32 section count
//   per section: u16 name length, name, u8 dtype, u32 channels, u64 byte length, bytes
//
// The main payload holds cubochoric orientations (3 channels). Known sections
// are "ids" (i32, 1 channel) and "boundaries" (u8, 1 channel); others are
// skipped on read.

#include <fstream>
#include <optional>
#include <string>

#include "slicerec/binary_io.hpp"
#include "slicerec/volume.hpp"

namespace slicerec {

inline constexpr char kVolumeMagic[9] = "EBSDVOL1";
inline constexpr std::uint16_t kVolumeVersion = 1;

enum class VolumeDtype : std::uint8_t { F64 = 1, F32 = 2, I32 = 3, U8 = 4 };

inline std::size_t dtype_size(VolumeDtype d) {
  switch (d) {
    case VolumeDtype::F64: return 8;
    case VolumeDtype::F32: return 4;
    case VolumeDtype::I32: return 4;
    case VolumeDtype::U8: return 1;
  }
  throw FormatError("unknown dtype code");
}

inline VolumeDtype parse_dtype(std::uint8_t code) {
  if (code < 1 || code > 4) throw FormatError("unknown dtype code " + std::to_string(code));
  return static_cast<VolumeDtype>(code);
}

struct VolumeFile {
  OrientationVolume orientations;
  std::optional<GrainMap> ids;
  std::optional<BoundaryMask> boundaries;

  bool operator==(const VolumeFile&) const = default;
};

inline void write_volume(std::ostream& os, const VolumeFile& f) {
  const Dims3 d = f.orientations.dims();
  if (f.ids) require_same_dims(d, f.ids->dims(), "volume file ids");
  if (f.boundaries) require_same_dims(d, f.boundaries->dims(), "volume file boundaries");
  for (auto n : d) {
    if (n > 0xFFFFFFFFu) throw FormatError("dimension too large for the volume format");
  }
  binio::put_bytes(os, kVolumeMagic, 8);
  binio::put<std::uint16_t>(os, kVolumeVersion);
  binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(VolumeDtype::F64));
  for (auto n : d) binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(n));
  binio::put<std::uint32_t>(os, 3);
  binio::put_bytes(os, f.orientations.cells().data(), f.orientations.size() * sizeof(Vec3));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(f.ids.has_value() + f.boundaries.has_value()));
  if (f.ids) {
    binio::put_string16(os, "ids");
    binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(VolumeDtype::I32));
    binio::put<std::uint32_t>(os, 1);
    binio::put<std::uint64_t>(os, f.ids->size() * sizeof(GrainId));
    binio::put_bytes(os, f.ids->cells().data(), f.ids->size() * sizeof(GrainId));
  }
  if (f.boundaries) {
    binio::put_string16(os, "boundaries");
    binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(VolumeDtype::U8));
    binio::put<std::uint32_t>(os, 1);
    binio::put<std::uint64_t>(os, f.boundaries->size());
    binio::put_bytes(os, f.boundaries->cells().data(), f.boundaries->size());
  }
}

inline VolumeFile read_volume(std::istream& is) {
  static_assert(sizeof(Vec3) == 3 * sizeof(double));
  binio::expect_magic(is, kVolumeMagic, "volume");
  const auto version = binio::get<std::uint16_t>(is, "version");
  if (version != kVolumeVersion) throw FormatError("unsupported volume version " + std::to_string(version));
  const VolumeDtype dtype = parse_dtype(binio::get<std::uint8_t>(is, "dtype"));
  Dims3 d{};
  for (auto& n : d) n = binio::get<std::uint32_t>(is, "dims");
  const auto channels = binio::get<std::uint32_t>(is, "channels");
  if (channels != 3) throw FormatError("volume payload must have 3 channels, found " + std::to_string(channels));
  VolumeFile f;
  f.orientations = OrientationVolume(d);
  const std::size_t n = f.orientations.size();
  if (dtype == VolumeDtype::F64) {
    binio::get_bytes(is, f.orientations.cells().data(), n * sizeof(Vec3), "payload");
  } else if (dtype == VolumeDtype::F32) {
    std::vector<float> tmp(n * 3);
    binio::get_bytes(is, tmp.data(), tmp.size() * sizeof(float), "payload");
    for (std::size_t i = 0; i < n; ++i) f.orientations[i] = {tmp[3 * i], tmp[3 * i + 1], tmp[3 * i + 2]};
  } else {
    throw FormatError("orientation payload must be floating point");
  }
  const auto sections = binio::get<std::uint32_t>(is, "section count");
  for (std::uint32_t s = 0; s < sections; ++s) {
    const std::string name = binio::get_string16(is, "section name");
    const VolumeDtype sd = parse_dtype(binio::get<std::uint8_t>(is, "section dtype"));
    const auto sc = binio::get<std::uint32_t>(is, "section channels");
    const auto bytes = binio::get<std::uint64_t>(is, "section length");
    if (name == "ids" || name == "boundaries") {
      const VolumeDtype want = name == "ids" ? VolumeDtype::I32 : VolumeDtype::U8;
      if (sd != want || sc != 1 || bytes != n * dtype_size(want)) {
        throw FormatError("section '" + name + "' has unexpected layout");
      }
      if (name == "ids") {
        GrainMap g(d);
        binio::get_bytes(is, g.cells().data(), bytes, "ids section");
        f.ids = std::move(g);
      } else {
        BoundaryMask b(d);
        binio::get_bytes(is, b.cells().data(), bytes, "boundaries section");
        f.boundaries = std::move(b);
      }
    } else {
      is.ignore(static_cast<std::streamsize>(bytes));
      if (static_cast<std::uint64_t>(is.gcount()) != bytes) throw FormatError("truncated section '" + name + "'");
    }
  }
  return f;
}

inline void save_volume(const std::string& path, const VolumeFile& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_volume(os, f);
  if (!os) throw Error("failed writing " + path);
}

inline VolumeFile load_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open volume " + path);
  return read_volume(is);
}

}  // namespace slicerec
