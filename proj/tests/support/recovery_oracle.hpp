#pragma once

// Straight-line projection oracle and the constructed recovery fixtures
// shared by the recovery tests and the acceptance run.

#include <set>
#include <vector>

#include "slicerec/recovery.hpp"

namespace slicerec::testing {

inline Vec3 grain_vec(GrainId g) { return {0.1 * g, -0.05 * g + 0.3, 0.02 * g * g - 0.4}; }

inline GrainDictionary dictionary_for(std::initializer_list<GrainId> ids) {
  GrainDictionary d;
  for (GrainId g : ids) d[g] = grain_vec(g);
  return d;
}

// Every step rescans the whole slice and nothing is cached between voxels.
inline IdSlice oracle_project(const RecoveryInput& in) {
  const std::size_t R = in.prev_ids.rows(), C = in.prev_ids.cols();
  std::vector<std::vector<GrainId>> out(R, std::vector<GrainId>(C, -1));
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c)
      if (in.prev_ids(r, c) == in.next_ids(r, c)) out[r][c] = in.prev_ids(r, c);
  const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
  auto known = [&](long r, long c) {
    return r >= 0 && c >= 0 && r < static_cast<long>(R) && c < static_cast<long>(C) && out[r][c] >= 0;
  };
  while (true) {
    int best = -1;
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        if (out[r][c] >= 0) continue;
        int n = 2;
        for (int d = 0; d < 4; ++d) n += known(static_cast<long>(r) + dr[d], static_cast<long>(c) + dc[d]);
        best = std::max(best, n);
      }
    if (best < 0) break;
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        if (out[r][c] >= 0) continue;
        int n = 2;
        std::set<GrainId> cand{in.prev_ids(r, c), in.next_ids(r, c)};
        for (int d = 0; d < 4; ++d) {
          const long rr = static_cast<long>(r) + dr[d], cc = static_cast<long>(c) + dc[d];
          if (known(rr, cc)) {
            ++n;
            cand.insert(out[rr][cc]);
          }
        }
        if (n < best) continue;
        double bd = 1e300;
        GrainId bg = -1;
        for (GrainId g : cand) {  // ascending, strict < keeps the lowest ID
          const Vec3& v = in.dictionary.at(g);
          const Vec3& p = in.pred_slice(r, c);
          const double d = (p[0] - v[0]) * (p[0] - v[0]) + (p[1] - v[1]) * (p[1] - v[1]) + (p[2] - v[2]) * (p[2] - v[2]);
          if (d < bd) {
            bd = d;
            bg = g;
          }
        }
        out[r][c] = bg;
      }
  }
  IdSlice s(R, C);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) s(r, c) = out[r][c];
  return s;
}

struct RecoveryCase {
  RecoveryInput in;
  IdSlice truth;
};

/// Slice m of a volume with the prediction set to the ground truth.
inline RecoveryCase case_from_volume(const GrainMap& ids, const OrientationVolume& v, std::size_t m) {
  const auto dict = average_orientations(ids, v).second;
  RecoveryCase out;
  out.in.prev_ids = slice_dim2(ids, m - 1);
  out.in.next_ids = slice_dim2(ids, m + 1);
  out.in.pred_slice = slice_dim2(v, m);
  out.in.dictionary = restrict_dictionary(dict, out.in.prev_ids, out.in.next_ids);
  out.truth = slice_dim2(ids, m);
  return out;
}

inline std::size_t components_of(const IdSlice& s, GrainId g) {
  Grid3<GrainId> g3({s.rows(), 1, s.cols()});
  for (std::size_t i = 0; i < s.size(); ++i) g3[i] = s[i] == g ? 1 : 0;
  const auto labels = relabel_connected(g3);
  std::set<GrainId> found;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] == g) found.insert(labels[i]);
  return found.size();
}

/// Grain 9 is a one-voxel-thick line living only in the missing slice.
inline RecoveryCase thin_in_slice_feature() {
  RecoveryCase k;
  k.in.prev_ids = IdSlice(10, 10, 1);
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t c = 5; c < 10; ++c) k.in.prev_ids(r, c) = 2;
  k.in.next_ids = k.in.prev_ids;
  k.truth = k.in.prev_ids;
  for (std::size_t c = 1; c < 9; ++c) k.truth(4, c) = 9;
  const GrainDictionary full = dictionary_for({1, 2, 9});
  k.in.pred_slice = ids_to_cubochoric(k.truth, full);
  k.in.dictionary = restrict_dictionary(full, k.in.prev_ids, k.in.next_ids);
  return k;
}

/// A two-voxel-wide anti-diagonal band of grain 5 in the missing slice. prev
/// shows the band only near the top-right end, next only near the
/// bottom-left end; in between both neighbours agree on the background, so
/// anchoring cuts the band.
inline RecoveryCase angled_thin_feature(std::size_t N = 16) {
  RecoveryCase k;
  k.in.prev_ids = IdSlice(N, N, 0);
  k.in.next_ids = IdSlice(N, N, 0);
  k.truth = IdSlice(N, N, 0);
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t c = 0; c < N; ++c) {
      const std::size_t s = r + c;
      const GrainId bg = s < N - 1 ? 1 : 2;
      const bool band = s == N - 1 || s == N;
      k.truth(r, c) = band ? 5 : bg;
      k.in.prev_ids(r, c) = band && r < 4 ? 5 : bg;
      k.in.next_ids(r, c) = band && c < 4 ? 5 : bg;
    }
  k.in.dictionary = dictionary_for({1, 2, 5});
  k.in.pred_slice = ids_to_cubochoric(k.truth, k.in.dictionary);
  return k;
}

}  // namespace slicerec::testing
