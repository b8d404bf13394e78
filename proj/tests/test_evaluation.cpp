#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "slicerec/evaluation.hpp"
#include "slicerec/synthgen.hpp"

using namespace slicerec;

namespace {

// Columns of 8x8 blocks along dims 1 and 3, constant along dim 2: every
// slice has boundaries and all slices are identical.
GrainMap block_columns(const Dims3& d) {
  GrainMap g(d);
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    const auto [i, j, k] = g.coords(idx);
    g[idx] = static_cast<GrainId>((i / 8) * 100 + k / 8);
  }
  return g;
}

OrientationVolume values_for(const GrainMap& g) {
  OrientationVolume v(g.dims());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = g[i];
    v[i] = {std::sin(x), std::cos(0.7 * x), 0.01 * x - 1};
  }
  return v;
}

SampleRecord rec(std::size_t sample, Method m, double overall, double boundary) {
  SampleRecord r;
  r.sample = sample;
  r.method = m;
  r.overall = overall;
  r.boundary = boundary;
  return r;
}

}  // namespace

TEST(Partition, PaperValidationShapeGives27Segments) {
  const GrainMap g = block_columns({64, 192, 64});
  const auto samples = partition(values_for(g), g, {64, 7, 64}, 1);
  ASSERT_EQ(samples.size(), 27u);
  for (std::size_t s = 0; s < 27; ++s) {
    EXPECT_EQ(samples[s].origin, (Dims3{0, 7 * s, 0}));
    EXPECT_GE(samples[s].m, 1u);
    EXPECT_LE(samples[s].m, 5u);
    EXPECT_EQ(samples[s].ids.dims(), (Dims3{64, 7, 64}));
  }
}

TEST(Partition, TilesAllAxesAndDropsRemainders) {
  const GrainMap g = block_columns({20, 15, 17});
  const auto samples = partition(values_for(g), g, {8, 7, 8}, 0);
  EXPECT_EQ(samples.size(), 2u * 2u * 2u);
  for (const auto& s : samples) {
    EXPECT_EQ(s.ids, crop(g, s.origin, {8, 7, 8}));
    EXPECT_EQ(s.values, crop(values_for(g), s.origin, {8, 7, 8}));
  }
}

TEST(Partition, SingleGrainVolumeYieldsNothing) {
  const GrainMap g({64, 21, 64}, 0);
  EXPECT_TRUE(partition(OrientationVolume(g.dims()), g, {64, 7, 64}, 3).empty());
}

TEST(Partition, DiscardsSegmentsWithoutBoundaryInMaskedSlice) {
  // Two grains split across dim 2 at slice 10; only the segment holding the
  // interface can have boundary voxels in its masked slice.
  GrainMap g({8, 14, 8}, 0);
  for (std::size_t idx = 0; idx < g.size(); ++idx) g[idx] = g.coords(idx)[1] >= 10 ? 1 : 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto samples = partition(values_for(g), g, {8, 7, 8}, seed);
    for (const auto& s : samples) {
      EXPECT_EQ(s.origin[1], 7u);
      EXPECT_TRUE(s.m == 2 || s.m == 3);  // slices 9 and 10 of the volume
    }
  }
}

TEST(Partition, BoundarySliceMatchesFullVolume) {
  GenSpec spec;
  spec.shape = {24, 21, 24};
  spec.seed = 5;
  const auto gv = generate(spec);
  const auto full = extract_boundaries(gv.ids);
  for (const auto& s : partition(gv.orientations, gv.ids, {12, 7, 12}, 9)) {
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t k = 0; k < 12; ++k)
        EXPECT_EQ(s.boundary(i, k), full(s.origin[0] + i, s.origin[1] + s.m, s.origin[2] + k));
  }
}

TEST(Partition, DeterministicForSeed) {
  GenSpec spec;
  spec.shape = {16, 28, 16};
  spec.seed = 2;
  const auto gv = generate(spec);
  const auto a = partition(gv.orientations, gv.ids, {16, 7, 16}, 4);
  const auto b = partition(gv.orientations, gv.ids, {16, 7, 16}, 4);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].origin, b[i].origin);
    EXPECT_EQ(a[i].m, b[i].m);
  }
}

TEST(Partition, TooSmallVolumeIsPartitionError) {
  const GrainMap g = block_columns({63, 192, 64});
  EXPECT_THROW(partition(values_for(g), g, {64, 7, 64}, 0), PartitionError);
}

TEST(Metrics, OverallAccuracyCounts) {
  IdSlice a(4, 4, 1), b(4, 4, 1);
  EXPECT_DOUBLE_EQ(overall_accuracy(a, b), 1.0);
  IdSlice c(4, 4, 2);
  EXPECT_DOUBLE_EQ(overall_accuracy(a, c), 0.0);
  for (std::size_t i = 0; i < 8; ++i) c[i] = 1;
  EXPECT_DOUBLE_EQ(overall_accuracy(a, c), 0.5);
  EXPECT_THROW(overall_accuracy(a, IdSlice(4, 5, 1)), DimensionError);
}

TEST(Metrics, BoundaryAccuracyRestrictsToBoundary) {
  IdSlice truth(10, 10, 1);
  for (std::size_t r = 0; r < 10; ++r) truth(r, 9) = 2;
  Grid2<std::uint8_t> E(10, 10, 0);
  for (std::size_t r = 0; r < 10; ++r) E(r, 8) = E(r, 9) = 1;
  EXPECT_DOUBLE_EQ(boundary_accuracy(truth, truth, E), 1.0);
  IdSlice pred = truth;
  for (std::size_t r = 0; r < 10; ++r) {
    pred(r, 8) = 7;
    pred(r, 9) = 7;
  }
  EXPECT_DOUBLE_EQ(boundary_accuracy(pred, truth, E), 0.0);
  EXPECT_DOUBLE_EQ(overall_accuracy(pred, truth), 0.8);
  EXPECT_THROW(boundary_accuracy(pred, truth, Grid2<std::uint8_t>(10, 10, 0)), MetricError);
}

TEST(Metrics, RandomCasesMatchLoopOracle) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<GrainId> u(0, 3);
  for (int trial = 0; trial < 20; ++trial) {
    IdSlice p(13, 9), t(13, 9);
    Grid2<std::uint8_t> E(13, 9, 0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = u(rng);
      t[i] = u(rng);
      E[i] = u(rng) == 0;
    }
    E[0] = 1;
    double hit = 0, tot = 0, all = 0;
    for (std::size_t r = 0; r < 13; ++r)
      for (std::size_t c = 0; c < 9; ++c) {
        all += p(r, c) == t(r, c);
        if (E(r, c)) {
          tot += 1;
          hit += p(r, c) == t(r, c);
        }
      }
    EXPECT_DOUBLE_EQ(boundary_accuracy(p, t, E), hit / tot);
    EXPECT_DOUBLE_EQ(overall_accuracy(p, t), all / 117.0);
  }
}

TEST(Metrics, InvariantUnderJointRelabelling) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<GrainId> u(0, 4);
  IdSlice p(8, 8), t(8, 8);
  Grid2<std::uint8_t> E(8, 8, 1);
  for (std::size_t i = 0; i < 64; ++i) {
    p[i] = u(rng);
    t[i] = u(rng);
  }
  IdSlice p2 = p, t2 = t;
  for (auto& g : p2.cells()) g = 40 - 3 * g;
  for (auto& g : t2.cells()) g = 40 - 3 * g;
  EXPECT_EQ(overall_accuracy(p, t), overall_accuracy(p2, t2));
  EXPECT_EQ(boundary_accuracy(p, t, E), boundary_accuracy(p2, t2, E));
}

TEST(Improvements, SelfComparisonIsZero) {
  std::vector<SampleRecord> rs{rec(0, Method::KnnVote, 0.9, 0.7), rec(1, Method::KnnVote, 0.8, 0.6)};
  for (double d : improvements(rs, Method::KnnVote, Method::KnnVote, Metric::Boundary)) EXPECT_EQ(d, 0.0);
}

TEST(Improvements, MeanIsDifferenceOfMeans) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<SampleRecord> rs;
  double ma = 0, mb = 0;
  for (std::size_t s = 0; s < 50; ++s) {
    const double a = u(rng), b = u(rng);
    ma += a / 50;
    mb += b / 50;
    rs.push_back(rec(s, Method::Transformer, a, 0));
    rs.push_back(rec(s, Method::CopyPrevious, b, 0));
  }
  const auto d = improvements(rs, Method::Transformer, Method::CopyPrevious, Metric::Overall);
  EXPECT_NEAR(summarize(d).mean, ma - mb, 1e-12);
}

TEST(Improvements, TableStyleArithmetic) {
  // Means 91.83 and 86.44 differ by 5.39.
  std::vector<SampleRecord> rs{rec(0, Method::Transformer, 91.83, 0), rec(0, Method::CopyPrevious, 86.44, 0)};
  EXPECT_NEAR(improvements(rs, Method::Transformer, Method::CopyPrevious, Metric::Overall)[0], 5.39, 1e-12);
}

TEST(Improvements, MismatchedSamplesAreUsageError) {
  std::vector<SampleRecord> rs{rec(0, Method::Transformer, 1, 1), rec(1, Method::CopyNext, 1, 1)};
  EXPECT_THROW(improvements(rs, Method::Transformer, Method::CopyNext, Metric::Overall), UsageError);
}

TEST(Summaries, QuantilesOfKnownSet) {
  const auto s = summarize({4, 1, 3, 2});
  EXPECT_EQ(s.count, 4u);
  EXPECT_DOUBLE_EQ(s.min, 1);
  EXPECT_DOUBLE_EQ(s.q1, 1.75);
  EXPECT_DOUBLE_EQ(s.median, 2.5);
  EXPECT_DOUBLE_EQ(s.q3, 3.25);
  EXPECT_DOUBLE_EQ(s.max, 4);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.stddev, std::sqrt(5.0 / 3.0));
  EXPECT_THROW(summarize({}), StatisticsError);
}

TEST(RunComparison, IdenticalSlicesScorePerfectly) {
  const GrainMap g = block_columns({32, 21, 32});
  const auto samples = partition(values_for(g), g, {32, 7, 32}, 0);
  const auto report = run_comparison(samples, {Method::CopyPrevious, Method::KnnVote}, nullptr, 1);
  EXPECT_EQ(report.records.size(), samples.size() * 2);
  for (const auto& r : report.records) {
    EXPECT_EQ(r.overall, 1.0);
    EXPECT_EQ(r.boundary, 1.0);
  }
}

TEST(RunComparison, CopyAccuracyMatchesSliceDifference) {
  GenSpec spec;
  spec.shape = {32, 35, 32};
  spec.seed = 14;
  const auto gv = generate(spec);
  const auto samples = partition(gv.orientations, gv.ids, {32, 7, 32}, 2);
  const auto report = run_comparison(samples, {Method::CopyPrevious, Method::CopyNext}, nullptr, 0);
  for (const auto& r : report.records) {
    const auto& s = samples[r.sample];
    const std::size_t src = r.method == Method::CopyPrevious ? s.m - 1 : s.m + 1;
    double differ = 0;
    for (std::size_t i = 0; i < 32; ++i)
      for (std::size_t k = 0; k < 32; ++k) differ += s.ids(i, src, k) != s.ids(i, s.m, k);
    EXPECT_DOUBLE_EQ(r.overall, 1.0 - differ / 1024.0);
  }
}

TEST(RunComparison, BoundaryBelowOverallOnGeneratedVolumes) {
  GenSpec spec;
  spec.shape = {32, 70, 32};
  spec.seed = 21;
  const auto gv = generate(spec);
  const auto samples = partition(gv.orientations, gv.ids, {32, 7, 32}, 5);
  ASSERT_GE(samples.size(), 8u);
  const std::vector<Method> methods{Method::KnnVote, Method::CopyPrevious, Method::CopyNext};
  const auto report = run_comparison(samples, methods, nullptr, 7);
  for (Method m : methods) EXPECT_LT(report.summary(m).boundary.mean, report.summary(m).overall.mean) << method_name(m);
  ASSERT_EQ(report.per_baseline.size(), 4u);
  EXPECT_NEAR(report.per_baseline[0].summary.mean,
              report.summary(Method::KnnVote).overall.mean - report.summary(Method::CopyPrevious).overall.mean, 1e-12);
}

TEST(RunComparison, WorkerCountDoesNotChangeReports) {
  GenSpec spec;
  spec.shape = {24, 70, 24};
  spec.seed = 9;
  const auto gv = generate(spec);
  const auto samples = partition(gv.orientations, gv.ids, {24, 7, 24}, 1);
  const std::vector<Method> methods{Method::KnnVote, Method::CopyPrevious};
  std::ostringstream a, b, ja, jb;
  const auto r1 = run_comparison(samples, methods, nullptr, 3, 1);
  const auto r3 = run_comparison(samples, methods, nullptr, 3, 3);
  write_records_csv(a, r1);
  write_records_csv(b, r3);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(report_json(r1).dump(), report_json(r3).dump());
}

TEST(RunComparison, TransformerPathProducesObservedIds) {
  GenSpec spec;
  spec.shape = {8, 21, 8};
  spec.seed = 4;
  spec.mean_grain_size = 1.2;
  const auto gv = generate(spec);
  const auto samples = partition(gv.orientations, gv.ids, {8, 7, 8}, 0);
  ASSERT_FALSE(samples.empty());
  ModelConfig mc;
  mc.layers = 1;
  mc.heads = 2;
  mc.embed_dim = 8;
  mc.ff_dim = 8;
  mc.crop_shape = {8, 7, 8};
  const Checkpoint ck{init_model(mc, 2), channel_stats(gv.orientations)};
  const auto report = run_comparison(samples, {Method::Transformer, Method::CopyPrevious}, &ck, 0);
  EXPECT_EQ(report.records.size(), samples.size() * 2);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const IdSlice got = recover(samples[i], Method::Transformer, &ck, 0);
    const IdSlice prev = slice_dim2(samples[i].ids, samples[i].m - 1), next = slice_dim2(samples[i].ids, samples[i].m + 1);
    for (GrainId g : got.cells()) {
      EXPECT_TRUE(std::count(prev.cells().begin(), prev.cells().end(), g) ||
                  std::count(next.cells().begin(), next.cells().end(), g));
    }
  }
  EXPECT_THROW(run_comparison(samples, {Method::Transformer}, nullptr, 0), UsageError);
}

TEST(RunComparison, CropMismatchIsDimensionError) {
  const GrainMap g = block_columns({16, 7, 16});
  const auto samples = partition(values_for(g), g, {16, 7, 16}, 0);
  ModelConfig mc;
  mc.layers = 1;
  mc.heads = 2;
  mc.embed_dim = 8;
  mc.ff_dim = 8;
  mc.crop_shape = {8, 7, 8};
  const Checkpoint ck{init_model(mc, 2), channel_stats(values_for(g))};
  EXPECT_THROW(run_comparison(samples, {Method::Transformer}, &ck, 0), DimensionError);
}

TEST(ObservedDictionary, ExactForUniformGrains) {
  GenSpec spec;
  spec.shape = {16, 14, 16};
  spec.seed = 31;
  const auto gv = generate(spec);
  const auto dict = average_orientations(gv.ids, gv.orientations).second;
  for (const auto& s : partition(gv.orientations, gv.ids, {16, 7, 16}, 0)) {
    for (const auto& [g, v] : observed_dictionary(s)) EXPECT_EQ(v, dict.at(g));
  }
}

TEST(Methods, NamesRoundTrip) {
  for (Method m : {Method::Transformer, Method::KnnVote, Method::CopyPrevious, Method::CopyNext}) {
    EXPECT_EQ(parse_method(method_name(m)), m);
  }
  EXPECT_THROW(parse_method("oracle"), UsageError);
}

TEST(RecoverVolumeSlice, SliceEqualToNeighboursIsRecoveredExactly) {
  const GrainMap g = block_columns({20, 9, 19});
  const OrientationVolume v = values_for(g);
  ModelConfig mc;
  mc.layers = 1;
  mc.heads = 2;
  mc.embed_dim = 8;
  mc.ff_dim = 8;
  mc.crop_shape = {8, 7, 8};
  const Checkpoint ck{init_model(mc, 5), channel_stats(v)};
  for (std::size_t j : {1u, 4u, 7u}) {
    for (Method m : {Method::Transformer, Method::KnnVote, Method::CopyPrevious}) {
      EXPECT_EQ(recover_volume_slice(v, g, j, m, &ck, 0), slice_dim2(g, j)) << method_name(m) << " slice " << j;
    }
  }
  EXPECT_THROW(recover_volume_slice(v, g, 0, Method::KnnVote, nullptr, 0), UsageError);
  EXPECT_THROW(recover_volume_slice(v, g, 8, Method::KnnVote, nullptr, 0), UsageError);
  EXPECT_THROW(recover_volume_slice(v, g, 3, Method::Transformer, nullptr, 0), UsageError);
}

TEST(RecoverVolumeSlice, TilesMatchSegmentPredictionWhenVolumeIsOneCrop) {
  GenSpec spec;
  spec.shape = {8, 7, 8};
  spec.seed = 12;
  spec.mean_grain_size = 1.2;
  const auto gv = generate(spec);
  ModelConfig mc;
  mc.layers = 1;
  mc.heads = 2;
  mc.embed_dim = 8;
  mc.ff_dim = 8;
  mc.crop_shape = {8, 7, 8};
  const Checkpoint ck{init_model(mc, 5), channel_stats(gv.orientations)};
  EvalSample s{0, {0, 0, 0}, 3, gv.orientations, gv.ids, {}};
  EXPECT_EQ(recover_volume_slice(gv.orientations, gv.ids, 3, Method::Transformer, &ck, 0),
            recover(s, Method::Transformer, &ck, 0));
}
