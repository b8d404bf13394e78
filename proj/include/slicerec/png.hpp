#pragma once

// Minimal 8-bit RGB PNG writer (zlib for deflate and CRC) and slice rendering.

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "slicerec/volume.hpp"

namespace slicerec {

struct RgbImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB
};

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[5], const std::vector<std::uint8_t>& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  if (img.width == 0 || img.height == 0 || img.pixels.size() != img.width * img.height * 3) {
    throw DimensionError("image buffer does not match its size");
  }
  std::vector<std::uint8_t> raw;
  raw.reserve(img.height * (img.width * 3 + 1));
  for (std::size_t r = 0; r < img.height; ++r) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), img.pixels.begin() + r * img.width * 3, img.pixels.begin() + (r + 1) * img.width * 3);
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw Error("zlib compression failed");
  }
  z.resize(zlen);

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  std::vector<std::uint8_t> ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // depth 8, truecolour, deflate, no filter, no interlace
  detail::put_chunk(out, "IHDR", ihdr);
  detail::put_chunk(out, "IDAT", z);
  detail::put_chunk(out, "IEND", {});
  return out;
}

inline void write_png(const std::string& path, const RgbImage& img) {
  const auto bytes = encode_png(img);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("failed writing " + path);
}

/// Per-channel min-max scaling of a vector slice to [0, 255]. Constant
/// channels map to 0.
inline RgbImage render_slice(const Grid2<Vec3>& s) {
  RgbImage img{s.cols(), s.rows(), std::vector<std::uint8_t>(s.size() * 3)};
  for (int c = 0; c < 3; ++c) {
    double lo = 0, hi = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      lo = i == 0 ? s[i][c] : std::min(lo, s[i][c]);
      hi = i == 0 ? s[i][c] : std::max(hi, s[i][c]);
    }
    const double span = hi - lo;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double t = span > 0 ? (s[i][c] - lo) / span : 0.0;
      img.pixels[3 * i + c] = static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
    }
  }
  return img;
}

/// Slice `index` along `axis` (0-based) of a vector volume.
inline Grid2<Vec3> volume_slice(const OrientationVolume& v, int axis, std::size_t index) {
  if (axis < 0 || axis > 2) throw UsageError("slice axis must be 0, 1 or 2");
  if (index >= v.dim(axis)) throw UsageError("slice index out of range");
  const int a = axis == 0 ? 1 : 0, b = axis == 2 ? 1 : 2;
  Grid2<Vec3> out(v.dim(a), v.dim(b));
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) {
      Dims3 p{};
      p[axis] = index;
      p[a] = r;
      p[b] = c;
      out(r, c) = v(p[0], p[1], p[2]);
    }
  return out;
}

}  // namespace slicerec
