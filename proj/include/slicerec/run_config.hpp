#pragma once

// JSON run configuration. Every section is optional; unknown keys anywhere
// are rejected before any work starts.
//
// {
//   "seed": 0, "threads": 1, "out": ".",
//   "gen":     {"shape": [64,64,64], "mean_grain_size": 2, "mean_twins_per_grain": 0, "seed": 0,
//               "sigma_ln": 0.4, "voxels_per_size_unit": 4, "min_grain_voxels": 27},
//   "model":   {"layers": 8, "heads": 8, "embed_dim": 128, "ff_dim": 512, "dropout_p": 0.1,
//               "input_channels": 3, "crop_shape": [64,7,64]},
//   "train":   {"lr_peak": 0.01, "warmup_steps": 8000, "total_steps": 160000, "momentum": 0.9,
//               "weight_decay": 1e-5, "batch_size": 1, "seed": 0, "checkpoint_every": 0},
//   "augment": {"permute_axes": true, "flips": true, "rotations": true, "color_shift": true,
//               "scale_lo": 0.8, "scale_hi": 1.2, "shift_lo": -0.2, "shift_hi": 0.2},
//   "eval":    {"segment_shape": [64,7,64], "methods": ["transformer","knn_vote","copy_previous","copy_next"]}
// }

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "slicerec/evaluation.hpp"
#include "slicerec/json_util.hpp"
#include "slicerec/synthgen.hpp"
#include "slicerec/training.hpp"

namespace slicerec {

struct EvalOptions {
  Dims3 segment_shape{64, 7, 64};
  std::vector<Method> methods{Method::Transformer, Method::KnnVote, Method::CopyPrevious, Method::CopyNext};
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string out = ".";
  GenSpec gen;
  ModelConfig model;
  TrainConfig train;
  AugmentSpec augment;
  EvalOptions eval;
};

namespace detail {

template <class T>
void read_unsigned(const jsonutil::json& j, const char* key, T& out, const std::string& ctx) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_number_unsigned()) throw ConfigError(ctx + "." + key + ": expected a non-negative integer");
  out = j.at(key).get<T>();
}

template <class Fn>
void validated(const std::string& ctx, Fn&& fn) {
  try {
    fn();
  } catch (const ParameterError& e) {
    throw ConfigError(ctx + ": " + e.what());
  }
}

}  // namespace detail

inline RunConfig parse_run_config(const jsonutil::json& j) {
  using jsonutil::read;
  using jsonutil::read_dims;
  jsonutil::reject_unknown(j, {"seed", "threads", "out", "gen", "model", "train", "augment", "eval"}, "config");
  RunConfig c;
  detail::read_unsigned(j, "seed", c.seed, "config");
  detail::read_unsigned(j, "threads", c.threads, "config");
  read(j, "out", c.out, "config");

  if (j.contains("gen")) {
    const auto& g = j["gen"];
    jsonutil::reject_unknown(g, {"shape", "mean_grain_size", "mean_twins_per_grain", "seed", "sigma_ln",
                                 "voxels_per_size_unit", "min_grain_voxels"},
                             "gen");
    read_dims(g, "shape", c.gen.shape, "gen");
    read(g, "mean_grain_size", c.gen.mean_grain_size, "gen");
    read(g, "mean_twins_per_grain", c.gen.mean_twins_per_grain, "gen");
    detail::read_unsigned(g, "seed", c.gen.seed, "gen");
    read(g, "sigma_ln", c.gen.sigma_ln, "gen");
    read(g, "voxels_per_size_unit", c.gen.voxels_per_size_unit, "gen");
    detail::read_unsigned(g, "min_grain_voxels", c.gen.min_grain_voxels, "gen");
  }
  detail::validated("gen", [&] { c.gen.validate(); });

  if (j.contains("model")) c.model = jsonutil::model_config_from_json(j["model"]);

  if (j.contains("train")) {
    const auto& t = j["train"];
    jsonutil::reject_unknown(t, {"lr_peak", "warmup_steps", "total_steps", "momentum", "weight_decay", "batch_size",
                                 "seed", "checkpoint_every"},
                             "train");
    read(t, "lr_peak", c.train.lr_peak, "train");
    detail::read_unsigned(t, "warmup_steps", c.train.warmup_steps, "train");
    detail::read_unsigned(t, "total_steps", c.train.total_steps, "train");
    read(t, "momentum", c.train.momentum, "train");
    read(t, "weight_decay", c.train.weight_decay, "train");
    detail::read_unsigned(t, "batch_size", c.train.batch_size, "train");
    detail::read_unsigned(t, "seed", c.train.seed, "train");
    detail::read_unsigned(t, "checkpoint_every", c.train.checkpoint_every, "train");
  }
  detail::validated("train", [&] { c.train.validate(); });

  if (j.contains("augment")) {
    const auto& a = j["augment"];
    jsonutil::reject_unknown(a, {"permute_axes", "flips", "rotations", "color_shift", "scale_lo", "scale_hi",
                                 "shift_lo", "shift_hi"},
                             "augment");
    read(a, "permute_axes", c.augment.permute_axes, "augment");
    read(a, "flips", c.augment.flips, "augment");
    read(a, "rotations", c.augment.rotations, "augment");
    read(a, "color_shift", c.augment.color_shift, "augment");
    read(a, "scale_lo", c.augment.scale_lo, "augment");
    read(a, "scale_hi", c.augment.scale_hi, "augment");
    read(a, "shift_lo", c.augment.shift_lo, "augment");
    read(a, "shift_hi", c.augment.shift_hi, "augment");
  }
  detail::validated("augment", [&] { c.augment.validate(); });

  if (j.contains("eval")) {
    const auto& e = j["eval"];
    jsonutil::reject_unknown(e, {"segment_shape", "methods"}, "eval");
    read_dims(e, "segment_shape", c.eval.segment_shape, "eval");
    if (e.contains("methods")) {
      std::vector<std::string> names;
      read(e, "methods", names, "eval");
      if (names.empty()) throw ConfigError("eval.methods must not be empty");
      c.eval.methods.clear();
      for (const auto& n : names) {
        try {
          c.eval.methods.push_back(parse_method(n));
        } catch (const UsageError& err) {
          throw ConfigError(std::string("eval.methods: ") + err.what());
        }
      }
    }
  }
  if (c.eval.segment_shape[1] < 3 || c.eval.segment_shape[0] == 0 || c.eval.segment_shape[2] == 0) {
    throw ConfigError("eval.segment_shape needs positive sizes and at least 3 slices along dim 2");
  }
  if (c.threads == 0) throw ConfigError("threads must be >= 1");
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  jsonutil::json j;
  try {
    j = jsonutil::json::parse(is);
  } catch (const jsonutil::json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace slicerec
