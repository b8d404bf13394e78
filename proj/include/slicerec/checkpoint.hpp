#pragma once

// Model checkpoint: a flat little-endian container of named tensors.
//
//   "SLRCKPT1"            8-byte magic
//   u16 version           currently 1
//   u32 n, n bytes        JSON header {"model": ModelConfig, "stats": ChannelStats}
//   u32 count             number of tensors
//   per tensor: u16 name length, name, u8 rank, u32 dims[rank], f64 data[numel]

#include <fstream>
#include <string>

#include "slicerec/binary_io.hpp"
#include "slicerec/json_util.hpp"

namespace slicerec {

inline constexpr char kCheckpointMagic[9] = "SLRCKPT1";
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelState model;
  ChannelStats stats;
};

inline void write_checkpoint(std::ostream& os, const ModelState& model, const ChannelStats& stats) {
  binio::put_bytes(os, kCheckpointMagic, 8);
  binio::put<std::uint16_t>(os, kCheckpointVersion);
  const std::string header =
      jsonutil::json{{"model", jsonutil::model_config_to_json(model.config)}, {"stats", jsonutil::stats_to_json(stats)}}
          .dump();
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(header.size()));
  binio::put_bytes(os, header.data(), header.size());
  const auto params = model.named_parameters();
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    binio::put_string16(os, name);
    binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    binio::put_bytes(os, t.values().data(), t.numel() * sizeof(double));
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  binio::expect_magic(is, kCheckpointMagic, "checkpoint");
  const auto version = binio::get<std::uint16_t>(is, "version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto n = binio::get<std::uint32_t>(is, "header length");
  std::string header(n, '\0');
  binio::get_bytes(is, header.data(), n, "header");
  jsonutil::json j;
  try {
    j = jsonutil::json::parse(header);
  } catch (const jsonutil::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  jsonutil::reject_unknown(j, {"model", "stats"}, "checkpoint");
  if (!j.contains("model") || !j.contains("stats")) throw FormatError("checkpoint header lacks model or stats");
  Checkpoint ck{init_model(jsonutil::model_config_from_json(j["model"]), 0), jsonutil::stats_from_json(j["stats"])};

  auto slots = ck.model.mutable_parameters();
  const auto count = binio::get<std::uint32_t>(is, "tensor count");
  if (count != slots.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, config expects " +
                      std::to_string(slots.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = binio::get_string16(is, "tensor name");
    if (name != slots[i].first) throw FormatError("unexpected tensor '" + name + "', expected '" + slots[i].first + "'");
    const auto rank = binio::get<std::uint8_t>(is, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = binio::get<std::uint32_t>(is, "dims");
    Tensor& slot = *slots[i].second;
    if (shape != slot.shape()) {
      throw FormatError("tensor '" + name + "' has shape " + shape_str(shape) + ", config expects " +
                        shape_str(slot.shape()));
    }
    binio::get_bytes(is, slot.mutable_data().data(), slot.numel() * sizeof(double), "tensor data");
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const ModelState& model, const ChannelStats& stats) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_checkpoint(os, model, stats);
  if (!os) throw Error("failed writing " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path);
  return read_checkpoint(is);
}

}  // namespace slicerec
