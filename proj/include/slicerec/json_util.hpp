#pragma once

// Strict JSON <-> struct helpers: every object is checked for unknown keys
// and every field for its type.

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "slicerec/model.hpp"
#include "slicerec/volume.hpp"

namespace slicerec::jsonutil {

using json = nlohmann::json;

inline void require_object(const json& j, const std::string& ctx) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected an object");
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& ctx) {
  require_object(j, ctx);
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(ctx + ": unknown key '" + it.key() + "'");
  }
}

/// Reads j[key] into out when present; type errors become ConfigError.
template <class T>
void read(const json& j, const char* key, T& out, const std::string& ctx) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(ctx + "." + key + ": " + e.what());
  }
}

inline void read_dims(const json& j, const char* key, Dims3& out, const std::string& ctx) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 3) throw ConfigError(ctx + "." + key + ": expected an array of 3 sizes");
  for (int a = 0; a < 3; ++a) {
    if (!v[a].is_number_unsigned()) throw ConfigError(ctx + "." + key + ": sizes must be non-negative integers");
    out[a] = v[a].get<std::size_t>();
  }
}

inline void read_vec3(const json& j, const char* key, Vec3& out, const std::string& ctx) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 3) throw ConfigError(ctx + "." + key + ": expected an array of 3 numbers");
  for (int a = 0; a < 3; ++a) {
    if (!v[a].is_number()) throw ConfigError(ctx + "." + key + ": expected numbers");
    out[a] = v[a].get<double>();
  }
}

inline json model_config_to_json(const ModelConfig& c) {
  return json{{"layers", c.layers},         {"heads", c.heads},
              {"embed_dim", c.embed_dim},   {"ff_dim", c.ff_dim},
              {"dropout_p", c.dropout_p},   {"input_channels", c.input_channels},
              {"crop_shape", c.crop_shape}};
}

inline ModelConfig model_config_from_json(const json& j, const std::string& ctx = "model") {
  reject_unknown(j, {"layers", "heads", "embed_dim", "ff_dim", "dropout_p", "input_channels", "crop_shape"}, ctx);
  ModelConfig c;
  read(j, "layers", c.layers, ctx);
  read(j, "heads", c.heads, ctx);
  read(j, "embed_dim", c.embed_dim, ctx);
  read(j, "ff_dim", c.ff_dim, ctx);
  read(j, "dropout_p", c.dropout_p, ctx);
  read(j, "input_channels", c.input_channels, ctx);
  read_dims(j, "crop_shape", c.crop_shape, ctx);
  try {
    c.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(ctx + ": " + e.what());
  }
  return c;
}

inline json stats_to_json(const ChannelStats& s) { return json{{"mean", s.mean}, {"stddev", s.stddev}}; }

inline ChannelStats stats_from_json(const json& j, const std::string& ctx = "stats") {
  reject_unknown(j, {"mean", "stddev"}, ctx);
  ChannelStats s;
  read_vec3(j, "mean", s.mean, ctx);
  read_vec3(j, "stddev", s.stddev, ctx);
  return s;
}

}  // namespace slicerec::jsonutil
