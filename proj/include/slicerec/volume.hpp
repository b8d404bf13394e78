#pragma once

// Voxel volumes of cubochoric orientations, grain ID maps and boundary masks,
// plus the derivation pipeline between them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "slicerec/grid.hpp"
#include "slicerec/orientation.hpp"

namespace slicerec {

using GrainId = std::int32_t;
using OrientationVolume = Grid3<Vec3>;
using GrainMap = Grid3<GrainId>;
using BoundaryMask = Grid3<std::uint8_t>;
using GrainDictionary = std::map<GrainId, Vec3>;

inline constexpr std::size_t kDefaultMinGrainVoxels = 27;

inline void require_same_dims(const Dims3& a, const Dims3& b, const char* what) {
  if (a != b) throw DimensionError(std::string(what) + ": shapes " + dims_str(a) + " and " + dims_str(b) + " differ");
}

/// Voxel count per ID, indexed by ID (entry 0 unused).
inline std::vector<std::size_t> grain_sizes(const GrainMap& g) {
  GrainId max_id = 0;
  for (GrainId id : g.cells()) max_id = std::max(max_id, id);
  std::vector<std::size_t> sizes(static_cast<std::size_t>(max_id) + 1, 0);
  for (GrainId id : g.cells()) ++sizes[static_cast<std::size_t>(id)];
  return sizes;
}

inline std::size_t grain_count(const GrainMap& g) {
  const auto sizes = grain_sizes(g);
  return static_cast<std::size_t>(std::count_if(sizes.begin() + 1, sizes.end(), [](std::size_t s) { return s > 0; }));
}

/// Relabels IDs to 1..G preserving the relative order of the old IDs.
inline GrainMap compact_ids(const GrainMap& g) {
  const auto sizes = grain_sizes(g);
  std::vector<GrainId> remap(sizes.size(), 0);
  GrainId next = 1;
  for (std::size_t id = 1; id < sizes.size(); ++id) {
    if (sizes[id] > 0) remap[id] = next++;
  }
  GrainMap out(g.dims());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = remap[static_cast<std::size_t>(g[i])];
  return out;
}

namespace detail {

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent_[a] = b;
  }

 private:
  std::vector<std::size_t> parent_;
};

/// Connected components over face neighbours joined by `same(a, b)`,
/// labelled 1.. in order of first appearance.
template <class Same>
GrainMap label_components(const Dims3& dims, Same&& same) {
  const std::size_t n = dims[0] * dims[1] * dims[2];
  UnionFind uf(n);
  const std::size_t s1 = dims[1] * dims[2], s2 = dims[2];
  for (std::size_t i = 0; i < dims[0]; ++i)
    for (std::size_t j = 0; j < dims[1]; ++j)
      for (std::size_t k = 0; k < dims[2]; ++k) {
        const std::size_t idx = i * s1 + j * s2 + k;
        if (i + 1 < dims[0] && same(idx, idx + s1)) uf.unite(idx, idx + s1);
        if (j + 1 < dims[1] && same(idx, idx + s2)) uf.unite(idx, idx + s2);
        if (k + 1 < dims[2] && same(idx, idx + 1)) uf.unite(idx, idx + 1);
      }
  GrainMap out(dims);
  std::vector<GrainId> root_label(n, 0);
  GrainId next = 1;
  for (std::size_t idx = 0; idx < n; ++idx) {
    const std::size_t r = uf.find(idx);
    if (root_label[r] == 0) root_label[r] = next++;
    out[idx] = root_label[r];
  }
  return out;
}

}  // namespace detail

/// Grain segmentation by 6-connected components whose neighbours are within
/// `tolerance` radians of misorientation. tolerance == 0 joins only exactly
/// equal cubochoric vectors.
inline GrainMap segment_grains(const OrientationVolume& v, double tolerance) {
  if (!(tolerance >= 0.0)) throw ParameterError("segmentation tolerance must be >= 0");
  if (tolerance == 0.0) {
    return detail::label_components(v.dims(), [&](std::size_t a, std::size_t b) { return v[a] == v[b]; });
  }
  std::vector<UnitQuaternion> q(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) q[i] = cubochoric_to_quaternion(v[i]);
  return detail::label_components(
      v.dims(), [&](std::size_t a, std::size_t b) { return misorientation_angle(q[a], q[b]) <= tolerance; });
}

/// Connected components of equal IDs (splits disconnected grains).
inline GrainMap relabel_connected(const GrainMap& g) {
  return detail::label_components(g.dims(), [&](std::size_t a, std::size_t b) { return g[a] == g[b]; });
}

/// Voxels whose face neighbours include a different ID (in-bounds only).
inline BoundaryMask extract_boundaries(const GrainMap& g) {
  BoundaryMask out(g.dims(), 0);
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    const GrainId id = g[idx];
    bool edge = false;
    for_each_face_neighbor(g, idx, [&](std::size_t n) { edge = edge || g[n] != id; });
    out[idx] = edge ? 1 : 0;
  }
  return out;
}

/// Absorbs every grain smaller than min_voxels into its most frequent
/// face-neighbouring grain, iterating to a fixpoint, then compacts IDs.
///
/// Each pass fixes the set of small grains up front and handles them in
/// ascending ID order. Candidates are counted by shared faces; grains that
/// were not small at the start of the pass are preferred, ties go to the
/// lowest ID. Reassigned voxels take the mean orientation of the untouched
/// voxels of the grain that absorbed them (its exact value if uniform). A
/// volume made only of small grains collapses into a single grain.
inline std::pair<GrainMap, OrientationVolume> remove_small_grains(const GrainMap& g, const OrientationVolume& v,
                                                                  std::size_t min_voxels = kDefaultMinGrainVoxels) {
  if (min_voxels < 1) throw ParameterError("min_voxels must be >= 1");
  require_same_dims(g.dims(), v.dims(), "remove_small_grains");
  GrainMap labels = g;
  std::vector<std::uint8_t> moved(g.size(), 0);

  while (true) {
    const auto sizes = grain_sizes(labels);
    std::vector<std::uint8_t> is_small(sizes.size(), 0);
    std::vector<GrainId> small;
    for (std::size_t id = 1; id < sizes.size(); ++id) {
      if (sizes[id] > 0 && sizes[id] < min_voxels) {
        is_small[id] = 1;
        small.push_back(static_cast<GrainId>(id));
      }
    }
    if (small.empty()) break;

    std::map<GrainId, std::vector<std::size_t>> members;
    for (std::size_t idx = 0; idx < labels.size(); ++idx) {
      if (is_small[static_cast<std::size_t>(labels[idx])]) members[labels[idx]].push_back(idx);
    }

    bool progress = false;
    for (GrainId id : small) {
      auto it = members.find(id);
      if (it == members.end() || it->second.empty()) continue;
      std::map<GrainId, std::size_t> contacts;
      for (std::size_t idx : it->second) {
        for_each_face_neighbor(labels, idx, [&](std::size_t n) {
          if (labels[n] != id) ++contacts[labels[n]];
        });
      }
      if (contacts.empty()) continue;
      const bool any_large = std::any_of(contacts.begin(), contacts.end(), [&](const auto& c) {
        return !is_small[static_cast<std::size_t>(c.first)];
      });
      GrainId target = 0;
      std::size_t best = 0;
      for (const auto& [cand, count] : contacts) {  // ascending ID: strict > keeps the lowest on ties
        if (any_large && is_small[static_cast<std::size_t>(cand)]) continue;
        if (count > best) {
          best = count;
          target = cand;
        }
      }
      std::vector<std::size_t> voxels = std::move(it->second);
      members.erase(it);
      for (std::size_t idx : voxels) {
        labels[idx] = target;
        moved[idx] = 1;
      }
      if (auto tgt = members.find(target); tgt != members.end()) {
        tgt->second.insert(tgt->second.end(), voxels.begin(), voxels.end());
      }
      progress = true;
    }
    if (!progress) break;
  }

  GrainMap compact = compact_ids(labels);
  const std::size_t grains = static_cast<std::size_t>(*std::max_element(compact.cells().begin(), compact.cells().end()));
  std::vector<Vec3> sum(grains + 1, Vec3{0, 0, 0}), first(grains + 1);
  std::vector<std::size_t> count(grains + 1, 0);
  std::vector<std::uint8_t> uniform(grains + 1, 1);
  for (std::size_t idx = 0; idx < compact.size(); ++idx) {
    if (moved[idx]) continue;
    const auto id = static_cast<std::size_t>(compact[idx]);
    if (count[id] == 0) first[id] = v[idx];
    else if (v[idx] != first[id]) uniform[id] = 0;
    for (int c = 0; c < 3; ++c) sum[id][c] += v[idx][c];
    ++count[id];
  }
  // Uniform grains hand over their exact value so segment_grains(v, 0) still
  // reproduces the map.
  for (std::size_t id = 1; id <= grains; ++id) {
    if (uniform[id]) sum[id] = first[id];
    else for (int c = 0; c < 3; ++c) sum[id][c] /= static_cast<double>(count[id]);
  }
  OrientationVolume out = v;
  for (std::size_t idx = 0; idx < compact.size(); ++idx) {
    if (moved[idx]) out[idx] = sum[static_cast<std::size_t>(compact[idx])];
  }
  return {std::move(compact), std::move(out)};
}

/// Replaces each voxel by its grain's arithmetic mean cubochoric vector.
/// Grains whose voxels already agree keep that exact value.
inline std::pair<OrientationVolume, GrainDictionary> average_orientations(const GrainMap& g,
                                                                          const OrientationVolume& v) {
  require_same_dims(g.dims(), v.dims(), "average_orientations");
  struct Acc {
    Vec3 sum{0, 0, 0};
    std::size_t n = 0;
    std::size_t first = 0;
    bool uniform = true;
  };
  std::map<GrainId, Acc> acc;
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    Acc& a = acc[g[idx]];
    if (a.n == 0) a.first = idx;
    a.uniform = a.uniform && v[idx] == v[a.first];
    for (int c = 0; c < 3; ++c) a.sum[c] += v[idx][c];
    ++a.n;
  }
  GrainDictionary dict;
  for (const auto& [id, a] : acc) {
    const double n = static_cast<double>(a.n);
    dict[id] = a.uniform ? v[a.first] : Vec3{a.sum[0] / n, a.sum[1] / n, a.sum[2] / n};
  }
  OrientationVolume out(v.dims());
  for (std::size_t idx = 0; idx < g.size(); ++idx) out[idx] = dict.at(g[idx]);
  return {std::move(out), std::move(dict)};
}

/// Per-channel mean and (population) standard deviation.
struct ChannelStats {
  Vec3 mean{0, 0, 0};
  Vec3 stddev{1, 1, 1};
  bool operator==(const ChannelStats&) const = default;
};

/// Pooled statistics over several volumes.
inline ChannelStats channel_stats(std::span<const OrientationVolume* const> volumes) {
  ChannelStats st;
  std::array<long double, 3> s{0, 0, 0}, s2{0, 0, 0};
  std::size_t n = 0;
  for (const auto* vol : volumes) {
    for (const auto& x : vol->cells()) {
      for (int c = 0; c < 3; ++c) s[c] += x[c];
    }
    n += vol->size();
  }
  if (n == 0) throw ParameterError("cannot compute channel statistics of an empty volume");
  for (int c = 0; c < 3; ++c) st.mean[c] = static_cast<double>(s[c] / static_cast<long double>(n));
  for (const auto* vol : volumes) {
    for (const auto& x : vol->cells()) {
      for (int c = 0; c < 3; ++c) s2[c] += (x[c] - st.mean[c]) * (x[c] - st.mean[c]);
    }
  }
  for (int c = 0; c < 3; ++c) {
    st.stddev[c] = std::sqrt(static_cast<double>(s2[c] / static_cast<long double>(n)));
    if (!(st.stddev[c] > 0.0)) {
      throw ParameterError("channel " + std::to_string(c) + " has zero variance");
    }
  }
  return st;
}

inline ChannelStats channel_stats(const OrientationVolume& v) {
  const OrientationVolume* one[] = {&v};
  return channel_stats(one);
}

inline Vec3 normalize_vec(const Vec3& x, const ChannelStats& st) {
  return {(x[0] - st.mean[0]) / st.stddev[0], (x[1] - st.mean[1]) / st.stddev[1], (x[2] - st.mean[2]) / st.stddev[2]};
}

inline Vec3 denormalize_vec(const Vec3& x, const ChannelStats& st) {
  return {x[0] * st.stddev[0] + st.mean[0], x[1] * st.stddev[1] + st.mean[1], x[2] * st.stddev[2] + st.mean[2]};
}

/// Per-channel z-score. With `stats` given they are applied as-is (held-out
/// data); otherwise they are computed from v.
inline std::pair<OrientationVolume, ChannelStats> normalize_channels(
    const OrientationVolume& v, const std::optional<ChannelStats>& stats = std::nullopt) {
  const ChannelStats st = stats ? *stats : channel_stats(v);
  for (int c = 0; c < 3; ++c) {
    if (!(st.stddev[c] > 0.0)) throw ParameterError("channel statistics need positive stddev");
  }
  OrientationVolume out(v.dims());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = normalize_vec(v[i], st);
  return {std::move(out), st};
}

inline OrientationVolume denormalize_channels(const OrientationVolume& v, const ChannelStats& st) {
  OrientationVolume out(v.dims());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = denormalize_vec(v[i], st);
  return out;
}

}  // namespace slicerec
