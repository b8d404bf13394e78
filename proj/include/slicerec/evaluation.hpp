#pragma once

// Segment partitioning, slice accuracy metrics, and the method comparison
// driver with its CSV / JSON reports.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <thread>
#include <vector>

#include <json.hpp>

#include "slicerec/checkpoint.hpp"
#include "slicerec/recovery.hpp"

namespace slicerec {

struct EvalSample {
  std::size_t volume = 0;
  Dims3 origin{};
  std::size_t m = 0;  // masked slice within the segment (dim 2)
  OrientationVolume values;
  GrainMap ids;
  Grid2<std::uint8_t> boundary;  // ground-truth boundary flags of slice m
};

/// splitmix64 finaliser; used to derive independent per-item seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Nonoverlapping segments of `shape`, trailing remainders dropped. Each
/// segment draws its masked slice uniformly from the interior slices (the
/// draw happens for discarded segments too); segments whose masked slice has
/// no ground-truth boundary voxel are dropped.
inline std::vector<EvalSample> partition(const OrientationVolume& values, const GrainMap& ids, const Dims3& shape,
                                         std::uint64_t seed, std::size_t volume_index = 0) {
  require_same_dims(values.dims(), ids.dims(), "partition");
  if (shape[1] < 3) throw PartitionError("segments need at least 3 slices along dim 2");
  for (int a = 0; a < 3; ++a) {
    if (shape[a] == 0 || ids.dim(a) < shape[a]) {
      throw PartitionError("volume " + dims_str(ids.dims()) + " is smaller than one segment " + dims_str(shape));
    }
  }
  const BoundaryMask boundaries = extract_boundaries(ids);
  std::mt19937_64 rng(seed);
  std::vector<EvalSample> out;
  const Dims3 count{ids.dim(0) / shape[0], ids.dim(1) / shape[1], ids.dim(2) / shape[2]};
  for (std::size_t a = 0; a < count[0]; ++a)
    for (std::size_t b = 0; b < count[1]; ++b)
      for (std::size_t c = 0; c < count[2]; ++c) {
        const Dims3 origin{a * shape[0], b * shape[1], c * shape[2]};
        const std::size_t m = std::uniform_int_distribution<std::size_t>(1, shape[1] - 2)(rng);
        Grid2<std::uint8_t> E(shape[0], shape[2], 0);
        bool any = false;
        for (std::size_t i = 0; i < shape[0]; ++i)
          for (std::size_t k = 0; k < shape[2]; ++k) {
            E(i, k) = boundaries(origin[0] + i, origin[1] + m, origin[2] + k);
            any = any || E(i, k);
          }
        if (!any) continue;
        out.push_back({volume_index, origin, m, crop(values, origin, shape), crop(ids, origin, shape), std::move(E)});
      }
  return out;
}

inline double overall_accuracy(const IdSlice& pred, const IdSlice& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) throw DimensionError("accuracy: slice shapes differ");
  if (truth.size() == 0) throw MetricError("accuracy of an empty slice");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

inline double boundary_accuracy(const IdSlice& pred, const IdSlice& truth, const Grid2<std::uint8_t>& boundary) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols() || boundary.rows() != truth.rows() ||
      boundary.cols() != truth.cols()) {
    throw DimensionError("boundary accuracy: slice shapes differ");
  }
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!boundary[i]) continue;
    ++total;
    hit += pred[i] == truth[i];
  }
  if (total == 0) throw MetricError("slice has no boundary voxels");
  return static_cast<double>(hit) / static_cast<double>(total);
}

enum class Method { Transformer, KnnVote, CopyPrevious, CopyNext };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::Transformer: return "transformer";
    case Method::KnnVote: return "knn_vote";
    case Method::CopyPrevious: return "copy_previous";
    case Method::CopyNext: return "copy_next";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::Transformer, Method::KnnVote, Method::CopyPrevious, Method::CopyNext}) {
    if (s == method_name(m)) return m;
  }
  throw UsageError("unknown method '" + s + "'");
}

/// Mean orientation per grain over the observed slices of a volume (all but
/// slice m along dim 2), restricted to IDs seen in slices m-1 and m+1.
/// Uniform grains keep their exact value.
inline GrainDictionary observed_dictionary(const OrientationVolume& values, const GrainMap& ids, std::size_t m) {
  require_same_dims(values.dims(), ids.dims(), "observed_dictionary");
  if (m < 1 || m + 1 >= ids.dim(1)) throw DimensionError("masked slice needs observed slices on both sides");
  struct Acc {
    Vec3 sum{0, 0, 0};
    Vec3 first{0, 0, 0};
    std::size_t n = 0;
    bool uniform = true;
  };
  std::map<GrainId, Acc> acc;
  const Dims3 d = ids.dims();
  for (std::size_t i = 0; i < d[0]; ++i)
    for (std::size_t j = 0; j < d[1]; ++j) {
      if (j == m) continue;
      for (std::size_t k = 0; k < d[2]; ++k) {
        Acc& a = acc[ids(i, j, k)];
        const Vec3& v = values(i, j, k);
        if (a.n == 0) a.first = v;
        a.uniform = a.uniform && v == a.first;
        for (int c = 0; c < 3; ++c) a.sum[c] += v[c];
        ++a.n;
      }
    }
  GrainDictionary full;
  for (const auto& [g, a] : acc) {
    const double n = static_cast<double>(a.n);
    full[g] = a.uniform ? a.first : Vec3{a.sum[0] / n, a.sum[1] / n, a.sum[2] / n};
  }
  return restrict_dictionary(full, slice_dim2(ids, m - 1), slice_dim2(ids, m + 1));
}

inline GrainDictionary observed_dictionary(const EvalSample& s) { return observed_dictionary(s.values, s.ids, s.m); }

/// Model output at slice m of a crop-shaped block: normalize, zero slice m,
/// predict, denormalize.
inline VecSlice predict_slice(const Checkpoint& model, const OrientationVolume& block, std::size_t m) {
  const Dims3 d = block.dims();
  std::vector<double> x;
  x.reserve(block.size() * 3);
  for (const Vec3& v : block.cells()) {
    const Vec3 n = normalize_vec(v, model.stats);
    x.insert(x.end(), n.begin(), n.end());
  }
  const Tensor input = apply_slice_mask(Tensor({d[0], d[1], d[2], 3}, std::move(x)), m);
  const Tensor pred = predict(model.model, input);
  VecSlice out(d[0], d[2]);
  for (std::size_t i = 0; i < d[0]; ++i)
    for (std::size_t k = 0; k < d[2]; ++k) {
      const std::size_t off = ((i * d[1] + m) * d[2] + k) * 3;
      out(i, k) = denormalize_vec({pred[off], pred[off + 1], pred[off + 2]}, model.stats);
    }
  return out;
}

inline RecoveryInput recovery_input(const EvalSample& s, const Checkpoint* model) {
  RecoveryInput in;
  in.prev_ids = slice_dim2(s.ids, s.m - 1);
  in.next_ids = slice_dim2(s.ids, s.m + 1);
  in.dictionary = observed_dictionary(s);
  if (model) in.pred_slice = predict_slice(*model, s.values, s.m);
  return in;
}

inline IdSlice recover_with(const RecoveryInput& in, Method method, std::uint64_t seed) {
  switch (method) {
    case Method::Transformer: return project(in);
    case Method::KnnVote: return knn_vote(in, seed);
    case Method::CopyPrevious: return copy_previous(in);
    case Method::CopyNext: return copy_next(in);
  }
  throw UsageError("unknown method");
}

inline IdSlice recover(const EvalSample& s, Method method, const Checkpoint* model, std::uint64_t seed) {
  if (method == Method::Transformer && !model) throw UsageError("the transformer method needs a checkpoint");
  return recover_with(recovery_input(s, method == Method::Transformer ? model : nullptr), method, seed);
}

/// Recovers slice j (dim 2) of a whole volume. The model sees a window of
/// crop depth around j and crop-sized tiles across dims 1 and 3; trailing
/// tiles are shifted back to fit, so overlaps take the later tile.
inline IdSlice recover_volume_slice(const OrientationVolume& values, const GrainMap& ids, std::size_t j, Method method,
                                    const Checkpoint* model, std::uint64_t seed) {
  require_same_dims(values.dims(), ids.dims(), "recover_volume_slice");
  const Dims3 d = ids.dims();
  if (j < 1 || j + 1 >= d[1]) throw UsageError("slice " + std::to_string(j) + " needs observed slices on both sides");
  RecoveryInput in;
  in.prev_ids = slice_dim2(ids, j - 1);
  in.next_ids = slice_dim2(ids, j + 1);
  in.dictionary = observed_dictionary(values, ids, j);
  if (method == Method::Transformer) {
    if (!model) throw UsageError("the transformer method needs a checkpoint");
    const Dims3 c = model->model.config.crop_shape;
    for (int a = 0; a < 3; ++a) {
      if (d[a] < c[a]) throw DimensionError("volume " + dims_str(d) + " is smaller than the model crop " + dims_str(c));
    }
    const std::size_t start = std::min(j - std::min(j, c[1] / 2), d[1] - c[1]);
    const std::size_t m = j - start;
    auto offsets = [](std::size_t n, std::size_t w) {
      std::vector<std::size_t> o;
      for (std::size_t x = 0; x < n; x += w) o.push_back(std::min(x, n - w));
      return o;
    };
    in.pred_slice = VecSlice(d[0], d[2]);
    for (std::size_t oi : offsets(d[0], c[0]))
      for (std::size_t ok : offsets(d[2], c[2])) {
        const VecSlice tile = predict_slice(*model, crop(values, {oi, start, ok}, c), m);
        for (std::size_t i = 0; i < c[0]; ++i)
          for (std::size_t k = 0; k < c[2]; ++k) in.pred_slice(oi + i, ok + k) = tile(i, k);
      }
  }
  return recover_with(in, method, seed);
}

struct SampleRecord {
  std::size_t sample = 0;
  std::size_t volume = 0;
  Dims3 origin{};
  std::size_t m = 0;
  Method method = Method::CopyPrevious;
  double overall = 0;
  double boundary = 0;
};

struct QuantileSummary {
  std::size_t count = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0, stddev = 0;
};

/// Linear-interpolation quantiles (R type 7) plus mean and sample stddev.
inline QuantileSummary summarize(std::vector<double> xs) {
  if (xs.empty()) throw StatisticsError("cannot summarize an empty distribution");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  auto q = [&](double p) {
    const double h = p * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, n - 1);
    return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
  };
  QuantileSummary s;
  s.count = n;
  s.min = xs.front();
  s.max = xs.back();
  s.q1 = q(0.25);
  s.median = q(0.5);
  s.q3 = q(0.75);
  double sum = 0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(n);
  double ss = 0;
  for (double x : xs) ss += (x - s.mean) * (x - s.mean);
  s.stddev = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  return s;
}

enum class Metric { Overall, Boundary };

inline const char* metric_name(Metric m) { return m == Metric::Overall ? "overall" : "boundary"; }

inline double metric_value(const SampleRecord& r, Metric m) { return m == Metric::Overall ? r.overall : r.boundary; }

/// Per-sample differences metric(method) - metric(baseline).
inline std::vector<double> improvements(const std::vector<SampleRecord>& records, Method method, Method baseline,
                                        Metric metric) {
  std::map<std::size_t, double> a, b;
  for (const auto& r : records) {
    if (r.method == method) a[r.sample] = metric_value(r, metric);
    if (r.method == baseline) b[r.sample] = metric_value(r, metric);
  }
  if (a.size() != b.size() || !std::equal(a.begin(), a.end(), b.begin(), [](auto& x, auto& y) { return x.first == y.first; })) {
    throw UsageError(std::string("improvements: ") + method_name(method) + " and " + method_name(baseline) +
                     " were scored on different samples");
  }
  std::vector<double> out;
  out.reserve(a.size());
  for (const auto& [k, v] : a) out.push_back(v - b.at(k));
  return out;
}

struct MethodSummary {
  Method method;
  QuantileSummary overall, boundary;
};

struct ImprovementSummary {
  Method method, baseline;
  Metric metric;
  QuantileSummary summary;
};

struct EvalReport {
  std::vector<Method> methods;
  std::vector<SampleRecord> records;  // sample-major, methods in the given order
  std::vector<MethodSummary> per_method;
  std::vector<ImprovementSummary> per_baseline;  // methods[0] against each other method

  const MethodSummary& summary(Method m) const {
    for (const auto& s : per_method)
      if (s.method == m) return s;
    throw UsageError(std::string("method not in report: ") + method_name(m));
  }
};

/// Recovers and scores every sample with every method. Workers pull samples
/// by index; each sample's tie-break seed is derived from (seed, index), so
/// the report does not depend on the worker count.
inline EvalReport run_comparison(const std::vector<EvalSample>& samples, const std::vector<Method>& methods,
                                 const Checkpoint* model, std::uint64_t seed, std::size_t threads = 1) {
  if (methods.empty()) throw UsageError("no methods to compare");
  if (samples.empty()) throw UsageError("no samples to evaluate");
  for (Method m : methods) {
    if (m == Method::Transformer && !model) throw UsageError("the transformer method needs a checkpoint");
  }
  const std::size_t nm = methods.size();
  std::vector<SampleRecord> records(samples.size() * nm);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < samples.size(); i = next++) {
      try {
        const EvalSample& s = samples[i];
        const IdSlice truth = slice_dim2(s.ids, s.m);
        for (std::size_t j = 0; j < nm; ++j) {
          const IdSlice pred = recover(s, methods[j], model, mix_seed(seed, i));
          records[i * nm + j] = {i, s.volume, s.origin, s.m, methods[j], overall_accuracy(pred, truth),
                                 boundary_accuracy(pred, truth, s.boundary)};
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = samples.size();
      }
    }
  };
  const std::size_t nthreads = std::max<std::size_t>(1, std::min(threads, samples.size()));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  EvalReport report{methods, std::move(records), {}, {}};
  for (Method m : methods) {
    std::vector<double> o, b;
    for (const auto& r : report.records)
      if (r.method == m) {
        o.push_back(r.overall);
        b.push_back(r.boundary);
      }
    report.per_method.push_back({m, summarize(o), summarize(b)});
  }
  for (std::size_t j = 1; j < nm; ++j)
    for (Metric metric : {Metric::Overall, Metric::Boundary}) {
      report.per_baseline.push_back(
          {methods[0], methods[j], metric, summarize(improvements(report.records, methods[0], methods[j], metric))});
    }
  return report;
}

inline void write_records_csv(std::ostream& os, const EvalReport& report) {
  os.precision(17);
  os << "sample,volume,origin_1,origin_2,origin_3,masked_slice,method,overall_accuracy,boundary_accuracy\n";
  for (const auto& r : report.records) {
    os << r.sample << ',' << r.volume << ',' << r.origin[0] << ',' << r.origin[1] << ',' << r.origin[2] << ',' << r.m
       << ',' << method_name(r.method) << ',' << r.overall << ',' << r.boundary << '\n';
  }
}

inline void write_summary_csv(std::ostream& os, const EvalReport& report) {
  os.precision(17);
  os << "kind,method,baseline,metric,count,min,q1,median,q3,max,mean,std\n";
  auto row = [&](const char* kind, const char* method, const char* baseline, const char* metric,
                 const QuantileSummary& s) {
    os << kind << ',' << method << ',' << baseline << ',' << metric << ',' << s.count << ',' << s.min << ',' << s.q1
       << ',' << s.median << ',' << s.q3 << ',' << s.max << ',' << s.mean << ',' << s.stddev << '\n';
  };
  for (const auto& m : report.per_method) {
    row("accuracy", method_name(m.method), "", "overall", m.overall);
    row("accuracy", method_name(m.method), "", "boundary", m.boundary);
  }
  for (const auto& i : report.per_baseline) {
    row("improvement", method_name(i.method), method_name(i.baseline), metric_name(i.metric), i.summary);
  }
}

inline nlohmann::json summary_json(const QuantileSummary& s) {
  return {{"count", s.count}, {"min", s.min},   {"q1", s.q1},     {"median", s.median},
          {"q3", s.q3},       {"max", s.max},   {"mean", s.mean}, {"std", s.stddev}};
}

inline nlohmann::json report_json(const EvalReport& report) {
  nlohmann::json j;
  j["samples"] = report.records.size() / report.methods.size();
  for (const auto& m : report.per_method) {
    j["methods"][method_name(m.method)] = {{"overall", summary_json(m.overall)},
                                           {"boundary", summary_json(m.boundary)}};
  }
  j["improvements"] = nlohmann::json::array();
  for (const auto& i : report.per_baseline) {
    j["improvements"].push_back({{"method", method_name(i.method)},
                                 {"baseline", method_name(i.baseline)},
                                 {"metric", metric_name(i.metric)},
                                 {"summary", summary_json(i.summary)}});
  }
  return j;
}

}  // namespace slicerec
