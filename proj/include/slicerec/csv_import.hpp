#pragma once

// Point-list CSV (x, y, z, phi1, Phi, phi2) -> orientation volume.
// Coordinates may be indices or physical positions on a regular grid; each
// axis is indexed by the sorted distinct values it takes. x, y, z map to
// dims 1, 2, 3.

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "slicerec/orientation.hpp"
#include "slicerec/volume.hpp"

namespace slicerec {

enum class AngleUnits { Degrees, Radians };

inline AngleUnits parse_units(const std::string& s) {
  if (s == "deg" || s == "degrees") return AngleUnits::Degrees;
  if (s == "rad" || s == "radians") return AngleUnits::Radians;
  throw UsageError("unknown angle unit '" + s + "' (expected deg or rad)");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r' && ch != ' ' && ch != '\t') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end && !s.empty();
}

}  // namespace detail

inline OrientationVolume import_csv(std::istream& is, AngleUnits units) {
  static const std::vector<std::string> kColumns{"x", "y", "z", "phi1", "Phi", "phi2"};
  std::vector<std::size_t> col{0, 1, 2, 3, 4, 5};
  std::vector<std::array<double, 6>> rows;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    const auto fields = detail::split_csv_line(line);
    double probe;
    if (first && !detail::parse_double(fields[0], probe)) {
      for (std::size_t c = 0; c < kColumns.size(); ++c) {
        const auto it = std::find(fields.begin(), fields.end(), kColumns[c]);
        if (it == fields.end()) throw FormatError("CSV header lacks column '" + kColumns[c] + "'");
        col[c] = static_cast<std::size_t>(it - fields.begin());
      }
      first = false;
      continue;
    }
    first = false;
    std::array<double, 6> r{};
    for (std::size_t c = 0; c < 6; ++c) {
      if (col[c] >= fields.size() || !detail::parse_double(fields[col[c]], r[c])) {
        throw FormatError("CSV line " + std::to_string(lineno) + ": bad or missing value for " + kColumns[c]);
      }
    }
    rows.push_back(r);
  }
  if (rows.empty()) throw FormatError("CSV holds no data rows");

  std::array<std::vector<double>, 3> axis;
  for (int a = 0; a < 3; ++a) {
    for (const auto& r : rows) axis[a].push_back(r[a]);
    std::sort(axis[a].begin(), axis[a].end());
    axis[a].erase(std::unique(axis[a].begin(), axis[a].end()), axis[a].end());
  }
  const Dims3 dims{axis[0].size(), axis[1].size(), axis[2].size()};
  if (dims[0] * dims[1] * dims[2] != rows.size()) {
    throw FormatError("CSV points do not form a full grid: " + std::to_string(rows.size()) + " rows for " +
                      dims_str(dims));
  }
  OrientationVolume v(dims);
  std::vector<std::uint8_t> seen(v.size(), 0);
  const double k = units == AngleUnits::Degrees ? kPi / 180.0 : 1.0;
  for (const auto& r : rows) {
    std::size_t idx[3];
    for (int a = 0; a < 3; ++a) {
      idx[a] = static_cast<std::size_t>(std::lower_bound(axis[a].begin(), axis[a].end(), r[a]) - axis[a].begin());
    }
    const std::size_t flat = v.index(idx[0], idx[1], idx[2]);
    if (seen[flat]++) throw FormatError("CSV lists a grid point twice");
    v[flat] = euler_to_cubochoric({r[3] * k, r[4] * k, r[5] * k});
  }
  return v;
}

inline OrientationVolume import_csv_file(const std::string& path, AngleUnits units) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  return import_csv(is, units);
}

}  // namespace slicerec
