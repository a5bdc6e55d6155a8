#pragma once

// Checkpoint container:
//
//   decompkan-checkpoint
//   format_version 1
//   config <key> <value>          (one line per ModelConfig field)
//   tensors <count>
//   tensor <name> <rows> <cols>   (manifest, in ModelParams::for_each order)
//   end_header
//   <raw little-endian float64 data for every tensor, manifest order>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "decompkan/error.hpp"
#include "decompkan/model.hpp"
#include "decompkan/textio.hpp"

namespace decompkan {

inline constexpr int kCheckpointVersion = 1;

/// ModelConfig as ordered (key, value) text pairs. Shared by the checkpoint
/// header, run manifests and the config file reader.
inline std::vector<std::pair<std::string, std::string>> model_config_items(const ModelConfig& c) {
  auto n = [](std::size_t v) { return std::to_string(v); };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"lookback", n(c.lookback)},
      {"horizon", n(c.horizon)},
      {"channels", n(c.channels)},
      {"patch_len", n(c.patch_len)},
      {"stride", n(c.stride)},
      {"embed_dim", n(c.embed_dim)},
      {"kan_hidden", n(c.kan_hidden)},
      {"kan_depth", n(c.kan_depth)},
      {"grid_size", n(c.grid_size)},
      {"spline_order", n(c.spline_order)},
      {"grid_lo", format_double(c.grid_lo)},
      {"grid_hi", format_double(c.grid_hi)},
      {"ma_kernel", n(c.ma_kernel)},
      {"stats_dim", n(c.stats_dim)},
      {"mlp_hidden", n(c.mlp_hidden)},
      {"use_decomposition", b(c.use_decomposition)},
      {"use_revin", b(c.use_revin)},
      {"use_adaptive", b(c.use_adaptive)},
      {"use_patching", b(c.use_patching)},
      {"trend_core", std::string(to_string(c.trend_core))},
      {"residual_core", std::string(to_string(c.residual_core))},
  };
}

/// Sets one field by key; returns false if the key is not a ModelConfig field.
inline bool set_model_config_item(ModelConfig& c, std::string_view key, std::string_view value) {
  const std::string what = "model." + std::string(key);
  auto n = [&] { return static_cast<std::size_t>(parse_u64(value, what)); };
  if (key == "lookback") c.lookback = n();
  else if (key == "horizon") c.horizon = n();
  else if (key == "channels") c.channels = n();
  else if (key == "patch_len") c.patch_len = n();
  else if (key == "stride") c.stride = n();
  else if (key == "embed_dim") c.embed_dim = n();
  else if (key == "kan_hidden") c.kan_hidden = n();
  else if (key == "kan_depth") c.kan_depth = n();
  else if (key == "grid_size") c.grid_size = n();
  else if (key == "spline_order") c.spline_order = n();
  else if (key == "grid_lo") c.grid_lo = parse_double(value, what);
  else if (key == "grid_hi") c.grid_hi = parse_double(value, what);
  else if (key == "ma_kernel") c.ma_kernel = n();
  else if (key == "stats_dim") c.stats_dim = n();
  else if (key == "mlp_hidden") c.mlp_hidden = n();
  else if (key == "use_decomposition") c.use_decomposition = parse_bool(value, what);
  else if (key == "use_revin") c.use_revin = parse_bool(value, what);
  else if (key == "use_adaptive") c.use_adaptive = parse_bool(value, what);
  else if (key == "use_patching") c.use_patching = parse_bool(value, what);
  else if (key == "trend_core") c.trend_core = parse_core_kind(trim(value));
  else if (key == "residual_core") c.residual_core = parse_core_kind(trim(value));
  else return false;
  return true;
}

namespace detail {

inline void write_le(std::ostream& os, double v) {
  std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int k = 0; k < 8; ++k) bytes[k] = static_cast<unsigned char>(u >> (8 * k));
  os.write(reinterpret_cast<const char*>(bytes), 8);
}

inline bool read_le(std::istream& is, double& v) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) return false;
  std::uint64_t u = 0;
  for (int k = 0; k < 8; ++k) u |= static_cast<std::uint64_t>(bytes[k]) << (8 * k);
  v = std::bit_cast<double>(u);
  return true;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const ModelParams& p, const ModelConfig& cfg) {
  os << "decompkan-checkpoint\n";
  os << "format_version " << kCheckpointVersion << "\n";
  for (const auto& [k, v] : model_config_items(cfg)) os << "config " << k << " " << v << "\n";
  const auto manifest = p.manifest();
  os << "tensors " << manifest.size() << "\n";
  for (const auto& [name, shape] : manifest) {
    os << "tensor " << name << " " << shape.first << " " << shape.second << "\n";
  }
  os << "end_header\n";
  p.for_each([&](const std::string&, const Tensor2& t) {
    for (double v : t.values()) detail::write_le(os, v);
  });
}

inline void save_checkpoint(const std::string& path, const ModelParams& p, const ModelConfig& cfg) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_checkpoint(os, p, cfg);
  if (!os.flush()) throw IoError("failed writing checkpoint '" + path + "'");
}

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

inline Checkpoint read_checkpoint(std::istream& is, const std::string& origin = "checkpoint") {
  auto fail = [&](const std::string& msg) { return DataError(origin + ": " + msg); };
  std::string line;
  if (!std::getline(is, line) || line != "decompkan-checkpoint") throw fail("not a checkpoint file");
  if (!std::getline(is, line) || line != "format_version " + std::to_string(kCheckpointVersion)) {
    throw fail("unsupported format version line '" + line + "'");
  }
  Checkpoint ck;
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> manifest;
  std::size_t declared = 0;
  bool ended = false;
  while (std::getline(is, line)) {
    if (line == "end_header") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "config") {
      std::string key, value;
      ls >> key >> value;
      try {
        if (!set_model_config_item(ck.config, key, value)) throw fail("unknown config key '" + key + "'");
      } catch (const ConfigError& e) {
        throw fail(e.what());
      }
    } else if (tag == "tensors") {
      ls >> declared;
    } else if (tag == "tensor") {
      std::string name;
      std::size_t r = 0, c = 0;
      if (!(ls >> name >> r >> c)) throw fail("malformed tensor line '" + line + "'");
      manifest.emplace_back(name, std::make_pair(r, c));
    } else {
      throw fail("unexpected header line '" + line + "'");
    }
  }
  if (!ended) throw fail("header is not terminated by end_header");
  if (manifest.size() != declared) throw fail("manifest lists " + std::to_string(manifest.size()) +
                                              " tensors but header declares " + std::to_string(declared));
  try {
    ck.config.validate();
  } catch (const ConfigError& e) {
    throw fail(std::string("invalid config: ") + e.what());
  }

  ck.params = init_model(Rng(0), ck.config);
  if (ck.params.manifest() != manifest) throw fail("tensor manifest does not match the stored config");
  std::size_t total = 0;
  for (const auto& m : manifest) total += m.second.first * m.second.second;
  if (total != count_params(ck.config)) {
    throw fail("manifest holds " + std::to_string(total) + " values, config implies " +
               std::to_string(count_params(ck.config)));
  }
  bool ok = true;
  ck.params.for_each([&](const std::string&, Tensor2& t) {
    for (double& v : t.values()) ok = ok && detail::read_le(is, v);
  });
  if (!ok) throw fail("truncated tensor data");
  if (is.peek() != std::char_traits<char>::eof()) throw fail("trailing bytes after tensor data");
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is, path);
}

}  // namespace decompkan
