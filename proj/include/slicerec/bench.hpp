#pragma once

// Wall-time comparison of full (flattened) attention and axial attention on
// cubic inputs.

#include <chrono>
#include <ostream>
#include <random>
#include <vector>

#include "slicerec/model.hpp"

namespace slicerec {

struct BenchRow {
  std::size_t side = 0;
  std::size_t tokens = 0;
  double full_ms = 0;
  double axial_ms = 0;  // all three axes
  std::size_t full_score_bytes = 0;   // heads x N^2 doubles
  std::size_t axial_score_bytes = 0;  // largest single axis: heads x N x side doubles

  double ratio() const { return full_ms / axial_ms; }
};

/// Attention over all side^3 tokens as one sequence.
inline Tensor full_attention(const Tensor& x, const AttentionParams& p, std::size_t heads) {
  const std::size_t D = x.shape().back();
  return reshape(axial_attention(reshape(x, {x.numel() / D, D}), 0, p, heads), x.shape());
}

/// Best-of-`repeats` timings, forward only.
inline std::vector<BenchRow> bench_attention(const std::vector<std::size_t>& sides, std::size_t dim, std::size_t heads,
                                             std::size_t repeats, std::uint64_t seed) {
  if (repeats == 0) throw UsageError("repeats must be >= 1");
  NoGradGuard guard;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  auto rand = [&](Shape s) {
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = n(rng);
    return Tensor(std::move(s), std::move(v));
  };
  const AttentionParams p{rand({dim, dim}), rand({dim, dim}), rand({dim, dim}), rand({dim, dim})};
  using clock = std::chrono::steady_clock;
  auto time_ms = [&](auto&& fn) {
    double best = 1e300;
    for (std::size_t r = 0; r < repeats; ++r) {
      const auto t0 = clock::now();
      fn();
      best = std::min(best, std::chrono::duration<double, std::milli>(clock::now() - t0).count());
    }
    return best;
  };
  std::vector<BenchRow> rows;
  for (std::size_t L : sides) {
    if (L == 0) throw UsageError("side lengths must be positive");
    const Tensor x = rand({L, L, L, dim});
    BenchRow row;
    row.side = L;
    row.tokens = L * L * L;
    row.full_ms = time_ms([&] { (void)full_attention(x, p, heads); });
    row.axial_ms = time_ms([&] {
      for (std::size_t a = 0; a < 3; ++a) (void)axial_attention(x, a, p, heads);
    });
    row.full_score_bytes = heads * row.tokens * row.tokens * sizeof(double);
    row.axial_score_bytes = heads * row.tokens * L * sizeof(double);
    rows.push_back(row);
  }
  return rows;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << "side,tokens,full_ms,axial_ms,ratio,full_score_bytes,axial_score_bytes\n";
  for (const auto& r : rows) {
    os << r.side << ',' << r.tokens << ',' << r.full_ms << ',' << r.axial_ms << ',' << r.ratio() << ','
       << r.full_score_bytes << ',' << r.axial_score_bytes << '\n';
  }
}

}  // namespace slicerec
