#pragma once

// Flat "section.key" settings shared by the command-line tool and run
// manifests. Resolution order, lowest first: built-in defaults, the dataset
// registry, the config file, command-line flags.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "decompkan/checkpoint.hpp"
#include "decompkan/data.hpp"
#include "decompkan/error.hpp"
#include "decompkan/eval.hpp"
#include "decompkan/textio.hpp"
#include "decompkan/train.hpp"

namespace decompkan {

using Settings = std::map<std::string, std::string>;

inline Settings default_settings() {
  Settings s;
  for (const auto& [k, v] : model_config_items(ModelConfig{})) s["model." + k] = v;
  s["model.channels"] = "auto";
  const TrainConfig t;
  s["train.lr"] = format_double(t.lr);
  s["train.batch_size"] = std::to_string(t.batch_size);
  s["train.max_epochs"] = std::to_string(t.max_epochs);
  s["train.patience"] = std::to_string(t.patience);
  s["train.warmup_frac"] = format_double(t.warmup_frac);
  s["train.clip_norm"] = format_double(t.clip_norm);
  s["train.bidirectional"] = t.bidirectional ? "true" : "false";
  s["train.seed"] = std::to_string(t.seed);
  s["train.beta1"] = format_double(t.beta1);
  s["train.beta2"] = format_double(t.beta2);
  s["train.adam_eps"] = format_double(t.adam_eps);
  s["train.max_batches_per_epoch"] = std::to_string(t.max_batches_per_epoch);

  const SyntheticSpec sp;
  s["data.name"] = "";
  s["data.path"] = "";
  s["data.split"] = "auto";
  s["data.kind"] = std::string(to_string(sp.kind));
  s["data.length"] = std::to_string(sp.length);
  s["data.k"] = std::to_string(sp.k);
  s["data.slope"] = format_double(sp.slope);
  s["data.noise_std"] = format_double(sp.noise_std);
  s["data.seed"] = std::to_string(sp.seed);

  s["eval.checkpoint"] = "";
  s["eval.split"] = "test";
  s["seeds.n"] = "10";
  s["seeds.list"] = "";
  s["ablate.variants"] = "all";
  s["synth.step"] = "1";
  s["synth.trials"] = "10";
  s["synth.seed"] = "0";
  const SynthOptions so;
  s["synth.length"] = std::to_string(so.length);
  s["synth.epochs"] = std::to_string(so.epochs);
  s["synth.lr"] = format_double(so.lr);
  s["synth.kan_hidden"] = std::to_string(so.kan_hidden);
  s["synth.kan_depth"] = std::to_string(so.kan_depth);
  s["synth.k_min"] = std::to_string(so.k_min);
  s["synth.k_max"] = std::to_string(so.k_max);
  s["inspect.checkpoint"] = "";
  s["inspect.branch"] = "both";
  s["inspect.layer"] = "0";
  s["inspect.top"] = "8";
  s["inspect.format"] = "both";
  s["gradcheck.configs"] = "10";
  s["gradcheck.seed"] = "0";
  s["gradcheck.corrupt"] = "0";
  return s;
}

inline void check_known_keys(const Settings& s, const std::string& origin) {
  static const Settings known = default_settings();
  for (const auto& [k, v] : s) {
    if (!known.count(k)) throw ConfigError(origin + ": unknown setting '" + k + "'");
  }
}

/// Reads an INI file: `[section]` headers, `key = value` lines, `;` or `#`
/// comments. Every key must sit inside a section.
inline Settings load_ini(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file '" + path + "'");
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config file '" + path + "' line " + std::to_string(e.line()) + ": " + e.message());
  }
  Settings s;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config file '" + path + "': key '" + section + "' outside any section");
    for (const auto& [key, value] : body) s[section + "." + key] = std::string(trim(value.data()));
  }
  check_known_keys(s, "config file '" + path + "'");
  return s;
}

inline std::string file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  const std::string body((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return hex64(fnv1a64(body));
}

/// Parses "key=value" overrides given with --set.
inline Settings parse_assignments(const std::vector<std::string>& items) {
  Settings s;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + item + "'");
    s[std::string(trim(std::string_view(item).substr(0, eq)))] = std::string(trim(std::string_view(item).substr(eq + 1)));
  }
  check_known_keys(s, "--set");
  return s;
}

inline bool is_synthetic_name(const std::string& name) { return lowercase(name) == "synthetic"; }

/// Tuned per-dataset defaults (learning rate, augmentation, lookback, split).
inline Settings registry_settings(const std::string& name) {
  Settings s;
  if (name.empty() || is_synthetic_name(name)) return s;
  const auto& table = dataset_table();
  std::string key = lowercase(name);
  if (key == "electricity") key = "ecl";
  if (key == "ppg" || key == "ppg_dalia" || key == "ppgdalia") key = "ppg-dalia";
  for (const auto& d : table) {
    if (d.name != key) continue;
    s["train.lr"] = format_double(d.lr);
    s["train.bidirectional"] = d.bidirectional ? "true" : "false";
    s["model.lookback"] = std::to_string(d.lookback);
  }
  return s;
}

inline Settings resolve_settings(const Settings& file, const Settings& flags) {
  Settings s = default_settings();
  std::string name;
  if (auto it = file.find("data.name"); it != file.end()) name = it->second;
  if (auto it = flags.find("data.name"); it != flags.end()) name = it->second;
  for (const auto& layer : {registry_settings(name), file, flags})
    for (const auto& [k, v] : layer) s[k] = v;
  return s;
}

// ---- typed views --------------------------------------------------------------------

inline const std::string& setting(const Settings& s, const std::string& key) {
  const auto it = s.find(key);
  if (it == s.end()) throw ConfigError("missing setting '" + key + "'");
  return it->second;
}

inline std::size_t setting_size(const Settings& s, const std::string& key) {
  return static_cast<std::size_t>(parse_u64(setting(s, key), key));
}
inline double setting_double(const Settings& s, const std::string& key) { return parse_double(setting(s, key), key); }
inline bool setting_bool(const Settings& s, const std::string& key) { return parse_bool(setting(s, key), key); }

/// `channels` fills in model.channels = auto.
inline ModelConfig model_from(const Settings& s, std::optional<std::size_t> channels = std::nullopt) {
  ModelConfig c;
  for (const auto& [k, v] : s) {
    if (!k.starts_with("model.")) continue;
    const std::string key = k.substr(6);
    if (key == "channels" && v == "auto") {
      if (!channels) throw ConfigError("model.channels is 'auto' but no dataset fixes it");
      c.channels = *channels;
      continue;
    }
    if (!set_model_config_item(c, key, v)) throw ConfigError("unknown setting '" + k + "'");
  }
  if (channels && c.channels != *channels) {
    throw ConfigError("model.channels = " + std::to_string(c.channels) + " but the dataset has " +
                      std::to_string(*channels) + " channels");
  }
  c.validate();
  return c;
}

inline TrainConfig train_from(const Settings& s) {
  TrainConfig t;
  t.lr = setting_double(s, "train.lr");
  t.batch_size = setting_size(s, "train.batch_size");
  t.max_epochs = setting_size(s, "train.max_epochs");
  t.patience = setting_size(s, "train.patience");
  t.warmup_frac = setting_double(s, "train.warmup_frac");
  t.clip_norm = setting_double(s, "train.clip_norm");
  t.bidirectional = setting_bool(s, "train.bidirectional");
  t.seed = parse_u64(setting(s, "train.seed"), "train.seed");
  t.beta1 = setting_double(s, "train.beta1");
  t.beta2 = setting_double(s, "train.beta2");
  t.adam_eps = setting_double(s, "train.adam_eps");
  t.max_batches_per_epoch = setting_size(s, "train.max_batches_per_epoch");
  t.validate();
  return t;
}

inline SyntheticSpec synthetic_from(const Settings& s) {
  SyntheticSpec sp;
  sp.kind = parse_synthetic_kind(setting(s, "data.kind"));
  sp.length = setting_size(s, "data.length");
  sp.k = setting_size(s, "data.k");
  sp.slope = setting_double(s, "data.slope");
  sp.noise_std = setting_double(s, "data.noise_std");
  sp.seed = parse_u64(setting(s, "data.seed"), "data.seed");
  return sp;
}

/// Loads the dataset the settings describe: a generated series when
/// data.name is "synthetic", otherwise the CSV at data.path.
inline SeriesDataset load_dataset(const Settings& s, std::size_t min_rows = 0) {
  const std::string& name = setting(s, "data.name");
  if (name.empty()) throw ConfigError("no dataset given (set data.name or pass --dataset)");
  if (is_synthetic_name(name)) return gen_synthetic(synthetic_from(s));
  const std::string& split = setting(s, "data.split");
  const DatasetInfo info =
      dataset_registry(name, split == "auto" ? std::nullopt : std::optional(parse_split_convention(split)));
  const std::string& path = setting(s, "data.path");
  if (path.empty()) throw IoError("dataset '" + name + "' needs a CSV path (data.path or --data)");
  return load_csv(path, info.convention, min_rows, info.name);
}

/// Identifies the data a run consumed: the synthetic recipe or the CSV hash.
inline nlohmann::ordered_json dataset_reference(const Settings& s) {
  nlohmann::ordered_json j;
  const std::string& name = setting(s, "data.name");
  j["name"] = name;
  if (is_synthetic_name(name)) {
    j["kind"] = setting(s, "data.kind");
    j["length"] = setting(s, "data.length");
    j["seed"] = setting(s, "data.seed");
  } else if (!name.empty()) {
    j["path"] = setting(s, "data.path");
    j["content_hash"] = file_hash(setting(s, "data.path"));
  }
  return j;
}

inline nlohmann::ordered_json settings_json(const Settings& s) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : s) j[k] = v;
  return j;
}

inline std::string settings_hash(const Settings& s) {
  std::string body;
  for (const auto& [k, v] : s) body += k + "=" + v + "\n";
  return hex64(fnv1a64(body));
}

}  // namespace decompkan
