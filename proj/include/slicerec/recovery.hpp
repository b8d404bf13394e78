#pragma once

// Turning a predicted slice back into grain IDs: anchoring, nearest-neighbour
// projection, and the vote / copy baselines.

#include <algorithm>
#include <random>
#include <vector>

#include "slicerec/volume.hpp"

namespace slicerec {

inline constexpr GrainId kUnassigned = -1;

using IdSlice = Grid2<GrainId>;
using VecSlice = Grid2<Vec3>;

struct RecoveryInput {
  VecSlice pred_slice;  // denormalized model output at the missing slice
  IdSlice prev_ids;
  IdSlice next_ids;
  GrainDictionary dictionary;
};

namespace detail {

inline void check_recovery_shapes(const RecoveryInput& in) {
  if (in.prev_ids.size() == 0) throw RecoveryError("empty recovery input");
  if (in.prev_ids.rows() != in.next_ids.rows() || in.prev_ids.cols() != in.next_ids.cols()) {
    throw DimensionError("prev and next slices differ in shape");
  }
}

inline void check_pred_shape(const RecoveryInput& in) {
  if (in.pred_slice.rows() != in.prev_ids.rows() || in.pred_slice.cols() != in.prev_ids.cols()) {
    throw DimensionError("predicted slice does not match the neighbouring slices");
  }
}

/// In-slice 4-neighbours of (r, c), in the order up, down, left, right.
template <class Fn>
void for_each_in_slice_neighbor(std::size_t rows, std::size_t cols, std::size_t r, std::size_t c, Fn&& fn) {
  if (r > 0) fn(r - 1, c);
  if (r + 1 < rows) fn(r + 1, c);
  if (c > 0) fn(r, c - 1);
  if (c + 1 < cols) fn(r, c + 1);
}

/// IDs of the observed and assigned neighbours of (r, c): prev, next, then
/// assigned in-slice neighbours. Repeats are kept (the vote counts them).
inline std::vector<GrainId> neighbor_ids(const RecoveryInput& in, const IdSlice& out, std::size_t r, std::size_t c) {
  std::vector<GrainId> ids{in.prev_ids(r, c), in.next_ids(r, c)};
  for_each_in_slice_neighbor(out.rows(), out.cols(), r, c, [&](std::size_t rr, std::size_t cc) {
    if (out(rr, cc) != kUnassigned) ids.push_back(out(rr, cc));
  });
  return ids;
}

/// Fills the unassigned voxels of an anchored slice. Each round takes the
/// largest neighbour count among unassigned voxels as the threshold and
/// sweeps row-major, assigning every voxel whose live count reaches it;
/// assignments are visible to later voxels of the same sweep. Counts are at
/// least 2 (both adjacent slices are observed), so every round makes progress.
template <class Choose>
void fill_by_rounds(const RecoveryInput& in, IdSlice& out, Choose&& choose) {
  const std::size_t rows = out.rows(), cols = out.cols();
  auto count = [&](std::size_t r, std::size_t c) {
    std::size_t n = 2;
    for_each_in_slice_neighbor(rows, cols, r, c, [&](std::size_t rr, std::size_t cc) { n += out(rr, cc) != kUnassigned; });
    return n;
  };
  std::size_t remaining = 0;
  for (GrainId id : out.cells()) remaining += id == kUnassigned;
  while (remaining > 0) {
    std::size_t threshold = 0;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        if (out(r, c) == kUnassigned) threshold = std::max(threshold, count(r, c));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        if (out(r, c) != kUnassigned || count(r, c) < threshold) continue;
        out(r, c) = choose(r, c, neighbor_ids(in, out, r, c));
        --remaining;
      }
  }
}

}  // namespace detail

/// Voxels where prev and next agree keep that ID; the rest are kUnassigned.
inline IdSlice anchor(const RecoveryInput& in) {
  detail::check_recovery_shapes(in);
  IdSlice out(in.prev_ids.rows(), in.prev_ids.cols(), kUnassigned);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (in.prev_ids[i] == in.next_ids[i]) out[i] = in.prev_ids[i];
  }
  return out;
}

/// Anchors, then assigns each remaining voxel the neighbouring ID whose
/// dictionary orientation is closest (l2) to the prediction; ties go to the
/// lowest ID.
inline IdSlice project(const RecoveryInput& in) {
  if (in.dictionary.empty()) throw RecoveryError("empty grain dictionary");
  detail::check_recovery_shapes(in);
  detail::check_pred_shape(in);
  IdSlice out = anchor(in);
  detail::fill_by_rounds(in, out, [&](std::size_t r, std::size_t c, std::vector<GrainId> ids) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    const Vec3& p = in.pred_slice(r, c);
    GrainId best = kUnassigned;
    double best_d = 0;
    for (GrainId g : ids) {
      const auto it = in.dictionary.find(g);
      if (it == in.dictionary.end()) throw DictionaryError("grain " + std::to_string(g) + " missing from dictionary");
      double d = 0;
      for (int a = 0; a < 3; ++a) d += (p[a] - it->second[a]) * (p[a] - it->second[a]);
      if (best == kUnassigned || d < best_d) {
        best = g;
        best_d = d;
      }
    }
    return best;
  });
  return out;
}

/// Same anchoring and ordering as project; each voxel takes the most common
/// neighbouring ID, ties broken uniformly by a generator seeded with `seed`.
inline IdSlice knn_vote(const RecoveryInput& in, std::uint64_t seed) {
  detail::check_recovery_shapes(in);
  std::mt19937_64 rng(seed);
  IdSlice out = anchor(in);
  detail::fill_by_rounds(in, out, [&](std::size_t, std::size_t, std::vector<GrainId> ids) {
    std::sort(ids.begin(), ids.end());
    std::vector<GrainId> tied;
    std::size_t best = 0;
    for (std::size_t i = 0; i < ids.size();) {
      std::size_t j = i;
      while (j < ids.size() && ids[j] == ids[i]) ++j;
      if (j - i > best) {
        best = j - i;
        tied.assign(1, ids[i]);
      } else if (j - i == best) {
        tied.push_back(ids[i]);
      }
      i = j;
    }
    if (tied.size() == 1) return tied[0];
    return tied[std::uniform_int_distribution<std::size_t>(0, tied.size() - 1)(rng)];
  });
  return out;
}

inline IdSlice copy_previous(const RecoveryInput& in) { return in.prev_ids; }
inline IdSlice copy_next(const RecoveryInput& in) { return in.next_ids; }

inline VecSlice ids_to_cubochoric(const IdSlice& ids, const GrainDictionary& dictionary) {
  VecSlice out(ids.rows(), ids.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto it = dictionary.find(ids[i]);
    if (it == dictionary.end()) throw DictionaryError("grain " + std::to_string(ids[i]) + " missing from dictionary");
    out[i] = it->second;
  }
  return out;
}

/// Dictionary restricted to the IDs present in the given slices.
inline GrainDictionary restrict_dictionary(const GrainDictionary& full, const IdSlice& a, const IdSlice& b) {
  GrainDictionary out;
  for (const IdSlice* s : {&a, &b})
    for (GrainId id : s->cells()) {
      if (out.count(id)) continue;
      const auto it = full.find(id);
      if (it == full.end()) throw DictionaryError("grain " + std::to_string(id) + " missing from dictionary");
      out.emplace(id, it->second);
    }
  return out;
}

}  // namespace slicerec
