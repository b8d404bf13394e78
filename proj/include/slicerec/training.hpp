#pragma once

// Self-supervised masked-slice training: crop sampling with augmentation,
// cosine schedule, SGD with momentum and weight decay.

#include <cmath>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "slicerec/model.hpp"
#include "slicerec/volume.hpp"

namespace slicerec {

struct TrainConfig {
  double lr_peak = 0.01;
  std::size_t warmup_steps = 8000;
  std::size_t total_steps = 160000;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints

  void validate() const {
    if (total_steps > 0 && warmup_steps >= total_steps) throw ParameterError("warmup_steps must be < total_steps");
    if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
    if (!(lr_peak >= 0)) throw ParameterError("lr_peak must be >= 0");
    if (!(momentum >= 0 && momentum < 1)) throw ParameterError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0)) throw ParameterError("weight_decay must be >= 0");
  }
};

/// Half-cosine ramp 0 -> peak on [0, warmup), half-cosine decay peak -> 0 on
/// [warmup, total].
inline double lr_schedule(std::size_t step, const TrainConfig& c) {
  if (step > c.total_steps) throw ParameterError("step beyond total_steps");
  if (step < c.warmup_steps) {
    return c.lr_peak * 0.5 * (1.0 - std::cos(kPi * static_cast<double>(step) / static_cast<double>(c.warmup_steps)));
  }
  const double span = static_cast<double>(c.total_steps - c.warmup_steps);
  if (span == 0) return c.lr_peak;
  return c.lr_peak * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(step - c.warmup_steps) / span));
}

struct AugmentSpec {
  bool permute_axes = true;
  bool flips = true;
  bool rotations = true;  // right-angle turns in the plane of dims 1 and 3
  bool color_shift = true;
  double scale_lo = 0.8, scale_hi = 1.2;
  double shift_lo = -0.2, shift_hi = 0.2;

  void validate() const {
    if (!(scale_lo <= scale_hi) || !(shift_lo <= shift_hi)) throw ParameterError("color shift ranges are inverted");
  }
};

/// Signed axis permutation: output axis a reads input axis src[a], reversed
/// when flip[a]. Closed under composition; covers permutations, flips and
/// right-angle rotations.
struct AxisTransform {
  std::array<std::size_t, 3> src{0, 1, 2};
  std::array<bool, 3> flip{false, false, false};

  Dims3 out_dims(const Dims3& in) const { return {in[src[0]], in[src[1]], in[src[2]]}; }

  Dims3 source(const Dims3& o, const Dims3& in) const {
    Dims3 c{};
    for (int a = 0; a < 3; ++a) c[src[a]] = flip[a] ? in[src[a]] - 1 - o[a] : o[a];
    return c;
  }

  /// `next` applied after *this.
  AxisTransform then(const AxisTransform& next) const {
    AxisTransform r;
    for (int a = 0; a < 3; ++a) {
      r.src[a] = src[next.src[a]];
      r.flip[a] = next.flip[a] != flip[next.src[a]];
    }
    return r;
  }

  /// Quarter turn in the (dim 1, dim 3) plane.
  static AxisTransform quarter_turn() { return {{2, 1, 0}, {false, false, true}}; }
};

template <class T>
Grid3<T> apply_transform(const Grid3<T>& g, const AxisTransform& t) {
  Grid3<T> out(t.out_dims(g.dims()));
  for (std::size_t idx = 0; idx < out.size(); ++idx) {
    const Dims3 c = t.source(out.coords(idx), g.dims());
    out[idx] = g(c[0], c[1], c[2]);
  }
  return out;
}

/// Draws perm index, three flips, rotation count (always, in that order)
/// and keeps the enabled parts.
template <class Rng>
AxisTransform random_axis_transform(const AugmentSpec& aug, Rng& rng) {
  static constexpr std::array<std::array<std::size_t, 3>, 6> perms{
      {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  const std::size_t p = std::uniform_int_distribution<std::size_t>(0, 5)(rng);
  std::array<bool, 3> f{};
  for (auto& b : f) b = std::bernoulli_distribution(0.5)(rng);
  const int turns = std::uniform_int_distribution<int>(0, 3)(rng);
  AxisTransform t;
  if (aug.permute_axes) t.src = perms[p];
  if (aug.flips) {
    AxisTransform fl;
    fl.flip = f;
    t = t.then(fl);
  }
  if (aug.rotations) {
    for (int r = 0; r < turns; ++r) t = t.then(AxisTransform::quarter_turn());
  }
  return t;
}

/// A normalized training volume with its ground-truth boundaries.
struct PoolVolume {
  OrientationVolume values;  // normalized
  BoundaryMask boundaries;
};

struct TrainingPool {
  std::vector<PoolVolume> volumes;
  ChannelStats stats;
};

/// Normalizes all volumes with statistics pooled across them.
inline TrainingPool make_pool(const std::vector<OrientationVolume>& volumes, const std::vector<GrainMap>& ids) {
  if (volumes.empty() || volumes.size() != ids.size()) throw DataError("training pool needs matching volumes and ID maps");
  std::vector<const OrientationVolume*> ptrs;
  for (const auto& v : volumes) ptrs.push_back(&v);
  TrainingPool pool;
  pool.stats = channel_stats(ptrs);
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    require_same_dims(volumes[i].dims(), ids[i].dims(), "make_pool");
    pool.volumes.push_back({normalize_channels(volumes[i], pool.stats).first, extract_boundaries(ids[i])});
  }
  return pool;
}

struct Sample {
  Tensor x_star;  // [N1,N2,N3,3] augmented ground truth
  Tensor input;   // x_star with slice m zeroed
  std::size_t m = 0;
  Grid2<std::uint8_t> E;  // ground-truth boundary flags of slice m, (N1, N3)
};

inline constexpr std::size_t kMaxCropAttempts = 100;

/// Draws a crop: volume, axis transform, origin, masked slice, colour shift
/// (in that order per attempt). Attempts whose masked slice has no boundary
/// voxel, or whose transformed volume is smaller than the crop, are redrawn.
template <class Rng>
Sample sample_crop(const TrainingPool& pool, const Dims3& crop, const AugmentSpec& aug, Rng& rng) {
  if (pool.volumes.empty()) throw DataError("empty training pool");
  if (crop[1] < 3) throw ParameterError("crop needs at least 3 slices along dim 2");
  for (std::size_t attempt = 0; attempt < kMaxCropAttempts; ++attempt) {
    const auto& vol = pool.volumes[std::uniform_int_distribution<std::size_t>(0, pool.volumes.size() - 1)(rng)];
    const AxisTransform t = random_axis_transform(aug, rng);
    const Dims3 in = vol.values.dims();
    const Dims3 td = t.out_dims(in);
    if (td[0] < crop[0] || td[1] < crop[1] || td[2] < crop[2]) continue;
    Dims3 origin{};
    for (int a = 0; a < 3; ++a) origin[a] = std::uniform_int_distribution<std::size_t>(0, td[a] - crop[a])(rng);
    const std::size_t m = std::uniform_int_distribution<std::size_t>(1, crop[1] - 2)(rng);
    std::array<double, 3> scale{1, 1, 1}, shift{0, 0, 0};
    {
      std::uniform_real_distribution<double> su(aug.scale_lo, aug.scale_hi), bu(aug.shift_lo, aug.shift_hi);
      for (int c = 0; c < 3; ++c) {
        const double a = su(rng), b = bu(rng);
        if (aug.color_shift) {
          scale[c] = a;
          shift[c] = b;
        }
      }
    }
    Grid2<std::uint8_t> E(crop[0], crop[2], 0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < crop[0]; ++i)
      for (std::size_t k = 0; k < crop[2]; ++k) {
        const Dims3 c = t.source({origin[0] + i, origin[1] + m, origin[2] + k}, in);
        E(i, k) = vol.boundaries(c[0], c[1], c[2]);
        count += E(i, k);
      }
    if (count == 0) continue;
    std::vector<double> x(crop[0] * crop[1] * crop[2] * 3);
    std::size_t n = 0;
    for (std::size_t i = 0; i < crop[0]; ++i)
      for (std::size_t j = 0; j < crop[1]; ++j)
        for (std::size_t k = 0; k < crop[2]; ++k) {
          const Dims3 c = t.source({origin[0] + i, origin[1] + j, origin[2] + k}, in);
          const Vec3& v = vol.values(c[0], c[1], c[2]);
          for (int ch = 0; ch < 3; ++ch) x[n++] = scale[ch] * v[ch] + shift[ch];
        }
    Sample s;
    s.x_star = Tensor({crop[0], crop[1], crop[2], 3}, std::move(x));
    s.input = apply_slice_mask(s.x_star, m);
    s.m = m;
    s.E = std::move(E);
    return s;
  }
  throw DataError("no crop with boundary voxels in the masked slice after " + std::to_string(kMaxCropAttempts) +
                  " attempts");
}

/// Classic momentum: v <- mu v + (g + wd theta); theta <- theta - lr v.
/// `velocity` is resized on first use.
inline void sgd_update(const std::vector<std::pair<std::string, Tensor>>& params,
                       std::vector<std::vector<double>>& velocity, double lr, double momentum, double weight_decay) {
  if (velocity.empty()) {
    for (const auto& [name, t] : params) velocity.emplace_back(t.numel(), 0.0);
  }
  if (velocity.size() != params.size()) throw TrainingError("optimizer state does not match the parameter list");
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& [name, t] = params[p];
    if (!t.has_grad()) throw TrainingError("parameter '" + name + "' has no gradient");
    const auto g = t.grad();
    for (double x : g) {
      if (!std::isfinite(x)) throw TrainingError("non-finite gradient in parameter '" + name + "'");
    }
    Tensor handle = t;
    auto theta = handle.mutable_data();
    auto& v = velocity[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = momentum * v[i] + (g[i] + weight_decay * theta[i]);
      theta[i] -= lr * v[i];
    }
  }
}

struct SgdState {
  std::vector<std::vector<double>> velocity;
};

inline void sgd_step(ModelState& state, SgdState& opt, std::size_t step, const TrainConfig& config) {
  sgd_update(state.named_parameters(), opt.velocity, lr_schedule(step, config), config.momentum, config.weight_decay);
}

struct LossRecord {
  std::size_t step;
  double lr;
  double loss;
};

struct TrainResult {
  ModelState model;
  std::vector<LossRecord> trace;
};

struct TrainHooks {
  std::function<void(std::size_t step, const ModelState&)> on_checkpoint;
  std::function<void(const LossRecord&)> on_step;
};

/// sample -> forward -> boundary loss -> backward -> SGD, for total_steps.
/// Sampling and dropout use separate streams derived from config.seed.
inline TrainResult train(const TrainingPool& pool, ModelState model, const TrainConfig& config,
                         const AugmentSpec& aug = {}, const TrainHooks& hooks = {}) {
  config.validate();
  aug.validate();
  std::mt19937_64 sample_rng(config.seed);
  std::mt19937_64 dropout_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  SgdState opt;
  TrainResult out{std::move(model), {}};
  const auto params = out.model.named_parameters();
  for (std::size_t step = 0; step < config.total_steps; ++step) {
    double total = 0;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const Sample s = sample_crop(pool, out.model.config.crop_shape, aug, sample_rng);
      const Tensor pred = forward(out.model, s.input, dropout_rng, true);
      const Tensor loss = boundary_masked_loss(pred, s.x_star, s.m, s.E);
      total += loss.item();
      backward(config.batch_size == 1 ? loss : scale(loss, 1.0 / static_cast<double>(config.batch_size)));
    }
    const double lr = lr_schedule(step, config);
    sgd_update(params, opt.velocity, lr, config.momentum, config.weight_decay);
    out.model.zero_grad();
    const LossRecord rec{step, lr, total / static_cast<double>(config.batch_size)};
    out.trace.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    if (hooks.on_checkpoint && config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
      hooks.on_checkpoint(step + 1, out.model);
    }
  }
  return out;
}

inline void write_loss_csv(const std::string& path, const std::vector<LossRecord>& trace) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path + " for writing");
  os.precision(17);
  os << "step,lr,loss\n";
  for (const auto& r : trace) os << r.step << ',' << r.lr << ',' << r.loss << '\n';
}

}  // namespace slicerec
