#pragma once

// Synthetic polycrystals: Laguerre tessellation with lognormal seed radii,
// uniform random orientations and planar twin lamellae.

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "slicerec/volume.hpp"

namespace slicerec {

struct GenSpec {
  Dims3 shape{64, 64, 64};
  double mean_grain_size = 2.0;
  double mean_twins_per_grain = 0.0;
  std::uint64_t seed = 0;
  double sigma_ln = 0.4;
  // Mean sphere diameter in voxels = mean_grain_size * voxels_per_size_unit.
  double voxels_per_size_unit = 4.0;
  std::size_t min_grain_voxels = kDefaultMinGrainVoxels;
  std::optional<std::size_t> forced_seed_count;
  double twin_rotation = kPi / 3;

  void validate() const {
    if (shape[0] < 1 || shape[1] < 1 || shape[2] < 1) throw ParameterError("shape dims must be >= 1");
    if (!(mean_grain_size > 0)) throw ParameterError("mean_grain_size must be > 0");
    if (!(mean_twins_per_grain >= 0)) throw ParameterError("mean_twins_per_grain must be >= 0");
    if (!(sigma_ln >= 0)) throw ParameterError("sigma_ln must be >= 0");
    if (!(voxels_per_size_unit > 0)) throw ParameterError("voxels_per_size_unit must be > 0");
    if (min_grain_voxels < 1) throw ParameterError("min_grain_voxels must be >= 1");
    if (forced_seed_count && *forced_seed_count < 1) throw ParameterError("forced seed count must be >= 1");
  }
};

struct GeneratedVolume {
  OrientationVolume orientations;
  GrainMap ids;
};

namespace detail {

struct LaguerreSeed {
  std::array<double, 3> pos;
  double r2;  // squared radius (additive weight)
};

/// Voxel -> seed index by minimum power distance |x - p|^2 - r^2 (lowest
/// index wins ties). Bucketed: each bucket keeps only seeds that can win
/// somewhere inside it.
inline std::vector<std::uint32_t> laguerre_assign(const Dims3& dims, const std::vector<LaguerreSeed>& seeds,
                                                  double bucket_side) {
  std::array<std::size_t, 3> nb{};
  for (int a = 0; a < 3; ++a) {
    nb[a] = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(static_cast<double>(dims[a]) / bucket_side)));
  }
  std::array<double, 3> side{};
  for (int a = 0; a < 3; ++a) side[a] = static_cast<double>(dims[a]) / static_cast<double>(nb[a]);

  std::vector<std::uint32_t> owner(dims[0] * dims[1] * dims[2], 0);
  std::vector<std::uint32_t> cand;
  for (std::size_t b0 = 0; b0 < nb[0]; ++b0)
    for (std::size_t b1 = 0; b1 < nb[1]; ++b1)
      for (std::size_t b2 = 0; b2 < nb[2]; ++b2) {
        const std::array<std::size_t, 3> b{b0, b1, b2};
        std::array<std::size_t, 3> lo{}, hi{};
        std::array<double, 3> blo{}, bhi{};
        for (int a = 0; a < 3; ++a) {
          lo[a] = static_cast<std::size_t>(std::ceil(static_cast<double>(b[a]) * side[a] - 0.5));
          hi[a] = std::min(dims[a], static_cast<std::size_t>(std::ceil(static_cast<double>(b[a] + 1) * side[a] - 0.5)));
          // Box spanned by the voxel centres in this bucket.
          blo[a] = static_cast<double>(lo[a]) + 0.5;
          bhi[a] = static_cast<double>(hi[a]) - 0.5;
        }
        if (lo[0] >= hi[0] || lo[1] >= hi[1] || lo[2] >= hi[2]) continue;
        auto min_d2 = [&](const LaguerreSeed& s) {
          double d2 = 0;
          for (int a = 0; a < 3; ++a) {
            const double d = std::max({0.0, blo[a] - s.pos[a], s.pos[a] - bhi[a]});
            d2 += d * d;
          }
          return d2;
        };
        auto max_d2 = [&](const LaguerreSeed& s) {
          double d2 = 0;
          for (int a = 0; a < 3; ++a) {
            const double d = std::max(std::abs(blo[a] - s.pos[a]), std::abs(s.pos[a] - bhi[a]));
            d2 += d * d;
          }
          return d2;
        };
        double upper = std::numeric_limits<double>::infinity();
        for (const auto& s : seeds) upper = std::min(upper, max_d2(s) - s.r2);
        cand.clear();
        for (std::size_t n = 0; n < seeds.size(); ++n) {
          if (min_d2(seeds[n]) - seeds[n].r2 <= upper) cand.push_back(static_cast<std::uint32_t>(n));
        }
        for (std::size_t i = lo[0]; i < hi[0]; ++i)
          for (std::size_t j = lo[1]; j < hi[1]; ++j)
            for (std::size_t k = lo[2]; k < hi[2]; ++k) {
              const double x = static_cast<double>(i) + 0.5, y = static_cast<double>(j) + 0.5,
                           z = static_cast<double>(k) + 0.5;
              double best = std::numeric_limits<double>::infinity();
              std::uint32_t arg = 0;
              for (std::uint32_t n : cand) {
                const auto& s = seeds[n];
                const double p = (x - s.pos[0]) * (x - s.pos[0]) + (y - s.pos[1]) * (y - s.pos[1]) +
                                 (z - s.pos[2]) * (z - s.pos[2]) - s.r2;
                if (p < best) {
                  best = p;
                  arg = n;
                }
              }
              owner[(i * dims[1] + j) * dims[2] + k] = arg;
            }
      }
  return owner;
}

template <class Rng>
Vec3 random_unit_vector(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  while (true) {
    const Vec3 v{n(rng), n(rng), n(rng)};
    const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (len > 1e-12) return {v[0] / len, v[1] / len, v[2] / len};
  }
}

}  // namespace detail

/// Generates one synthetic volume. RNG draw order: seed count, seed
/// positions, seed radii, grain orientations, then per grain (ascending
/// cell index) the twin count, lamella normal and per lamella thickness,
/// offset and rotation axis.
inline GeneratedVolume generate(const GenSpec& spec) {
  spec.validate();
  const Dims3 dims = spec.shape;
  const std::size_t n_vox = dims[0] * dims[1] * dims[2];
  if (n_vox < spec.min_grain_voxels) {
    throw GenerationError("shape " + dims_str(dims) + " cannot host a grain of " +
                          std::to_string(spec.min_grain_voxels) + " voxels");
  }
  std::mt19937_64 rng(spec.seed);
  const double diameter = spec.mean_grain_size * spec.voxels_per_size_unit;

  std::size_t n_seeds;
  if (spec.forced_seed_count) {
    n_seeds = *spec.forced_seed_count;
  } else {
    const double expected = static_cast<double>(n_vox) / (kPi * diameter * diameter * diameter / 6.0);
    n_seeds = std::max<std::size_t>(1, std::poisson_distribution<std::size_t>(expected)(rng));
  }

  std::vector<detail::LaguerreSeed> seeds(n_seeds);
  for (auto& s : seeds)
    for (int a = 0; a < 3; ++a) s.pos[a] = std::uniform_real_distribution<double>(0.0, static_cast<double>(dims[a]))(rng);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& s : seeds) {
    const double r = 0.5 * diameter * std::exp(spec.sigma_ln * gauss(rng));
    s.r2 = r * r;
  }
  std::vector<UnitQuaternion> orient(n_seeds);
  for (auto& q : orient) q = random_rotation(rng);

  const auto owner = detail::laguerre_assign(dims, seeds, diameter);

  // Cell IDs 1..n_seeds; lamellae get fresh IDs above that.
  GrainMap ids(dims);
  for (std::size_t i = 0; i < n_vox; ++i) ids[i] = static_cast<GrainId>(owner[i] + 1);
  std::vector<UnitQuaternion> id_orient(orient);
  id_orient.insert(id_orient.begin(), UnitQuaternion{});  // index 0 unused

  if (spec.mean_twins_per_grain > 0) {
    std::vector<std::vector<std::size_t>> members(n_seeds);
    for (std::size_t i = 0; i < n_vox; ++i) members[owner[i]].push_back(i);
    std::poisson_distribution<int> twins(spec.mean_twins_per_grain);
    std::uniform_int_distribution<int> thickness(1, 3);
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const int k = twins(rng);
      if (k == 0) continue;
      const Vec3 normal = detail::random_unit_vector(rng);
      const auto& vox = members[s];
      std::vector<double> t(vox.size());
      double tmin = std::numeric_limits<double>::infinity(), tmax = -tmin;
      for (std::size_t n = 0; n < vox.size(); ++n) {
        const Dims3 c = ids.coords(vox[n]);
        t[n] = normal[0] * static_cast<double>(c[0]) + normal[1] * static_cast<double>(c[1]) +
               normal[2] * static_cast<double>(c[2]);
        tmin = std::min(tmin, t[n]);
        tmax = std::max(tmax, t[n]);
      }
      for (int l = 0; l < k; ++l) {
        const double w = thickness(rng);
        const double off = std::uniform_real_distribution<double>(tmin, std::max(tmin, tmax - w + 1.0))(rng);
        const Vec3 axis = detail::random_unit_vector(rng);
        const auto new_id = static_cast<GrainId>(id_orient.size());
        id_orient.push_back(orient[s] * UnitQuaternion::from_axis_angle(axis, spec.twin_rotation));
        for (std::size_t n = 0; n < vox.size(); ++n) {
          if (t[n] >= off && t[n] < off + w) ids[vox[n]] = new_id;
        }
      }
    }
  }

  // Lamellae may split their parent and voxelised cells may be fragmented.
  std::vector<Vec3> cubo(id_orient.size());
  for (std::size_t i = 1; i < id_orient.size(); ++i) cubo[i] = quaternion_to_cubochoric(id_orient[i]);
  OrientationVolume v(dims);
  for (std::size_t i = 0; i < n_vox; ++i) v[i] = cubo[static_cast<std::size_t>(ids[i])];
  const GrainMap connected = relabel_connected(ids);
  OrientationVolume cleaned = remove_small_grains(connected, v, spec.min_grain_voxels).second;
  GrainMap final_ids = segment_grains(cleaned, 0.0);
  return {std::move(cleaned), std::move(final_ids)};
}

/// One row of the grain-size probability plot.
struct SizeQuantile {
  double probability;      // Hazen plotting position (i - 0.5) / n
  double normal_quantile;  // standard normal quantile of that probability
  double log_normalized;   // ln(D / mean(D)), sorted ascending
};

inline std::vector<SizeQuantile> size_distribution_report(const GrainMap& g, std::size_t min_grains = 30) {
  const auto sizes = grain_sizes(g);
  std::vector<double> d;
  for (std::size_t id = 1; id < sizes.size(); ++id) {
    if (sizes[id] > 0) d.push_back(std::cbrt(6.0 * static_cast<double>(sizes[id]) / kPi));
  }
  if (d.size() < min_grains) {
    throw StatisticsError("size distribution needs >= " + std::to_string(min_grains) + " grains, got " +
                          std::to_string(d.size()));
  }
  double mean = 0;
  for (double x : d) mean += x;
  mean /= static_cast<double>(d.size());
  std::vector<double> x;
  for (double di : d) x.push_back(std::log(di / mean));
  std::sort(x.begin(), x.end());
  const boost::math::normal_distribution<double> unit;
  std::vector<SizeQuantile> out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(x.size());
    out.push_back({p, boost::math::quantile(unit, p), x[i]});
  }
  return out;
}

/// Coefficient of determination of a least-squares line through the rows
/// whose probability lies in [lo, hi].
inline double probability_plot_r2(const std::vector<SizeQuantile>& rows, double lo = 0.1, double hi = 0.9) {
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (const auto& r : rows) {
    if (r.probability < lo || r.probability > hi) continue;
    n += 1;
    sx += r.normal_quantile;
    sy += r.log_normalized;
    sxx += r.normal_quantile * r.normal_quantile;
    sxy += r.normal_quantile * r.log_normalized;
    syy += r.log_normalized * r.log_normalized;
  }
  if (n < 3) throw StatisticsError("too few rows for a regression");
  const double cxx = sxx - sx * sx / n, cxy = sxy - sx * sy / n, cyy = syy - sy * sy / n;
  if (cyy <= 0) return 1.0;  // all points identical: the fit is exact
  return cxy * cxy / (cxx * cyy);
}

/// A named generation job from the preset table.
struct PresetVolume {
  std::string name;
  GenSpec spec;
};

/// The paper's dataset layout: 9 training volumes (sizes 2/2.5/3 without
/// twins; twin rates 0..5 at size 2.3) of shape (192,192,192), plus
/// `validation_per_setting` validation volumes of shape (64,192,64) for each
/// of those settings.
inline std::vector<PresetVolume> paper_preset(std::uint64_t seed, std::size_t validation_per_setting = 4) {
  struct Setting {
    std::string tag;
    double size, twins;
  };
  const std::vector<Setting> settings{{"size2.0_twins0", 2.0, 0}, {"size2.5_twins0", 2.5, 0},
                                      {"size3.0_twins0", 3.0, 0}, {"size2.3_twins0", 2.3, 0},
                                      {"size2.3_twins1", 2.3, 1}, {"size2.3_twins2", 2.3, 2},
                                      {"size2.3_twins3", 2.3, 3}, {"size2.3_twins4", 2.3, 4},
                                      {"size2.3_twins5", 2.3, 5}};
  std::vector<PresetVolume> out;
  std::seed_seq seq{seed};
  std::vector<std::uint64_t> seeds(settings.size() * (1 + validation_per_setting));
  {
    std::vector<std::uint32_t> raw(seeds.size() * 2);
    seq.generate(raw.begin(), raw.end());
    for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = (std::uint64_t{raw[2 * i]} << 32) | raw[2 * i + 1];
  }
  std::size_t next = 0;
  for (const auto& s : settings) {
    GenSpec g;
    g.shape = {192, 192, 192};
    g.mean_grain_size = s.size;
    g.mean_twins_per_grain = s.twins;
    g.seed = seeds[next++];
    out.push_back({"train_" + s.tag, g});
  }
  for (const auto& s : settings) {
    for (std::size_t r = 0; r < validation_per_setting; ++r) {
      GenSpec g;
      g.shape = {64, 192, 64};
      g.mean_grain_size = s.size;
      g.mean_twins_per_grain = s.twins;
      g.seed = seeds[next++];
      out.push_back({"val_" + s.tag + "_" + std::to_string(r), g});
    }
  }
  return out;
}

}  // namespace slicerec
