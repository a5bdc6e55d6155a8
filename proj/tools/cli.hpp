#pragma once

// The decompkan command-line tool. Kept in a header so tests can drive the
// exact code path the binary runs.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "decompkan/checkpoint.hpp"
#include "decompkan/config.hpp"
#include "decompkan/data.hpp"
#include "decompkan/eval.hpp"
#include "decompkan/gradcheck.hpp"
#include "decompkan/inspect.hpp"
#include "decompkan/train.hpp"
#include "json.hpp"

namespace decompkan::cli {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kOutputEnv = "DECOMPKAN_OUTPUT_DIR";

enum ExitCode : int { kOk = 0, kConfig = 1, kData = 2, kNumeric = 3, kInternal = 4 };

struct Invocation {
  std::string command;
  Settings settings;       // fully resolved
  std::string config_file;  // empty when none
  std::string config_hash;
  std::string out_root;
  std::size_t jobs = 1;
  bool quiet = false;
};

/// Output directory for one invocation: <root>/<command>-<UTC time>-<hash>,
/// suffixed -2, -3, ... so nothing is ever overwritten.
inline std::filesystem::path make_run_dir(const Invocation& inv) {
  std::filesystem::path root = inv.out_root;
  if (root.empty()) {
    const char* env = std::getenv(kOutputEnv);
    root = env && *env ? env : "runs";
  }
  const std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &utc);
  const std::string base = inv.command + "-" + stamp + "-" + settings_hash(inv.settings).substr(0, 8);
  std::filesystem::path dir = root / base;
  for (int k = 2; std::filesystem::exists(dir); ++k) dir = root / (base + "-" + std::to_string(k));
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory '" + dir.string() + "': " + ec.message());
  return dir;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  write_text_file(path.string(), j.dump(2) + "\n");
}

inline nlohmann::ordered_json manifest_json(const Invocation& inv, const std::filesystem::path& dir,
                                            const std::vector<std::uint64_t>& seeds) {
  nlohmann::ordered_json m;
  m["tool"] = "decompkan";
  m["version"] = kToolVersion;
  m["command"] = inv.command;
  m["config_file"] = inv.config_file;
  m["config_hash"] = inv.config_hash;
  m["output_dir"] = dir.string();
  m["seeds"] = seeds;
  m["dataset"] = setting(inv.settings, "data.name").empty() ? nlohmann::ordered_json() : dataset_reference(inv.settings);
  m["settings"] = settings_json(inv.settings);
  return m;
}

struct Context {
  Invocation inv;
  std::filesystem::path dir;
  std::ostream& out;

  // Parallel runs log from worker threads.
  void log(const std::string& line) const {
    static std::mutex mu;
    std::lock_guard lock(mu);
    if (!inv.quiet) out << line << "\n" << std::flush;
  }
  void manifest(const std::vector<std::uint64_t>& seeds) const {
    write_json(dir / "manifest.json", manifest_json(inv, dir, seeds));
  }
  void table(const std::string& stem, const Table& t) const {
    write_text_file((dir / (stem + ".md")).string(), t.markdown());
    write_text_file((dir / (stem + ".csv")).string(), t.csv());
  }
};

inline std::vector<std::uint64_t> parse_seed_list(const Settings& s) {
  const std::string& list = setting(s, "seeds.list");
  std::vector<std::uint64_t> seeds;
  if (list.empty()) {
    const std::size_t n = setting_size(s, "seeds.n");
    for (std::size_t k = 0; k < n; ++k) seeds.push_back(k);
  } else {
    for (auto part : split_commas(list)) seeds.push_back(parse_u64(part, "seeds.list"));
  }
  return seeds;
}

inline std::string run_note(const RunOutcome& r) {
  return "test mse " + format_fixed(r.test.mse, 6) + "  mae " + format_fixed(r.test.mae, 6) + "  best epoch " +
         std::to_string(r.record.best_epoch) + "/" + std::to_string(r.record.stop_epoch) + "  (" +
         format_fixed(r.record.wall_seconds, 1) + " s)";
}

inline void write_run(const std::filesystem::path& dir, const RunOutcome& r, const ModelConfig& cfg) {
  save_checkpoint((dir / "model.ckpt").string(), r.params, cfg);
  write_json(dir / "run_record.json", r.record.to_json());
  write_text_file((dir / "epochs.csv").string(), r.record.to_csv());
  write_json(dir / "metrics.json", r.test.to_json());
}

// ---- commands --------------------------------------------------------------------------

inline int cmd_train(const Context& c) {
  const SeriesDataset ds = load_dataset(c.inv.settings);
  const ModelConfig cfg = model_from(c.inv.settings, ds.channels());
  const TrainConfig tc = train_from(c.inv.settings);
  c.manifest({tc.seed});
  c.log("train " + ds.name + "  L=" + std::to_string(cfg.lookback) + " H=" + std::to_string(cfg.horizon) +
        "  params " + std::to_string(count_params(cfg)));
  FitHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& e) {
    c.log("  epoch " + std::to_string(e.epoch) + "  train " + format_fixed(e.train_loss, 6) + "  val " +
          format_fixed(e.val_mse, 6));
  };
  const RunOutcome r = train_and_evaluate(cfg, tc, ds, hooks);
  write_run(c.dir, r, cfg);
  c.log(run_note(r));
  c.log("wrote " + c.dir.string());
  return kOk;
}

inline int cmd_eval(const Context& c) {
  const std::string& path = setting(c.inv.settings, "eval.checkpoint");
  if (path.empty()) throw ConfigError("eval needs a checkpoint (--checkpoint)");
  const Checkpoint ck = load_checkpoint(path);
  const SeriesDataset ds = load_dataset(c.inv.settings);
  if (ck.config.channels != ds.channels()) {
    throw ConfigError("checkpoint has " + std::to_string(ck.config.channels) + " channels, dataset " +
                      std::to_string(ds.channels()));
  }
  const std::string& which = setting(c.inv.settings, "eval.split");
  SplitKind split = SplitKind::test;
  if (which == "val") split = SplitKind::val;
  else if (which == "train") split = SplitKind::train;
  else if (which != "test") throw ConfigError("eval.split must be train, val or test");
  c.manifest({});
  MetricReport r = evaluate(ck.params, ck.config, ds, split, 0, file_hash(path));
  write_json(c.dir / "metrics.json", r.to_json());
  c.log(ds.name + " " + which + "  mse " + format_fixed(r.mse, 6) + "  mae " + format_fixed(r.mae, 6) + "  windows " +
        std::to_string(r.windows));
  return kOk;
}

inline int cmd_seeds(const Context& c) {
  const SeriesDataset ds = load_dataset(c.inv.settings);
  const ModelConfig cfg = model_from(c.inv.settings, ds.channels());
  const TrainConfig base = train_from(c.inv.settings);
  const auto seeds = parse_seed_list(c.inv.settings);
  c.manifest(seeds);
  std::vector<std::string> errors;
  const SeedSummary s = multi_seed(
      [&](std::size_t k, std::uint64_t seed) {
        TrainConfig tc = base;
        tc.seed = seed;
        const auto sub = c.dir / ("run-" + std::to_string(k) + "-seed-" + std::to_string(seed));
        std::filesystem::create_directories(sub);
        const RunOutcome r = train_and_evaluate(cfg, tc, ds);
        write_run(sub, r, cfg);
        c.log("seed " + std::to_string(seed) + ": " + run_note(r));
        return r.test.mse;
      },
      seeds, c.inv.jobs, &errors);
  for (const auto& e : errors) c.log("FAILED " + e);
  const Table t = seed_table(ds.name, cfg.horizon, s);
  c.table("seeds", t);
  nlohmann::ordered_json j{{"dataset", ds.name}, {"horizon", cfg.horizon},  {"seeds", s.seeds},
                           {"values", s.values}, {"failed", s.failed},      {"mean", s.mean},
                           {"std", s.std},       {"flagged", s.flagged()}};
  write_json(c.dir / "seeds.json", j);
  c.out << t.markdown();
  return kOk;
}

inline int cmd_grid(const Context& c) {
  const SeriesDataset ds = load_dataset(c.inv.settings);
  ModelConfig base = model_from(c.inv.settings, ds.channels());
  base.horizon = 96;
  const TrainConfig tbase = train_from(c.inv.settings);
  c.manifest({tbase.seed});
  const GridResult g = tuning_grid(
      [&](const GridPoint& p) {
        ModelConfig cfg = base;
        cfg.lookback = p.lookback;
        TrainConfig tc = tbase;
        tc.lr = p.lr;
        tc.bidirectional = p.bidirectional;
        ModelParams params = init_model(Rng(tc.seed), cfg);
        const RunRecord rec = fit(params, cfg, ds, tc);
        c.log("lr " + format_double(p.lr) + " bidir " + (p.bidirectional ? "on " : "off") + " L " +
              std::to_string(p.lookback) + ": val mse " + format_fixed(rec.best_val_mse, 6));
        return rec.best_val_mse;
      },
      c.inv.jobs);
  const Table t = grid_table(g);
  c.table("grid", t);
  nlohmann::ordered_json j;
  auto& pts = j["points"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < g.points.size(); ++k) {
    pts.push_back({{"lr", g.points[k].lr}, {"bidirectional", g.points[k].bidirectional},
                   {"lookback", g.points[k].lookback}, {"val_mse", g.val_mse[k]}});
  }
  j["best"] = g.best;
  write_json(c.dir / "grid.json", j);
  c.out << t.markdown();
  return kOk;
}

inline int cmd_ablate(const Context& c) {
  const SeriesDataset ds = load_dataset(c.inv.settings);
  const ModelConfig cfg = model_from(c.inv.settings, ds.channels());
  const TrainConfig tc = train_from(c.inv.settings);
  std::vector<std::string> variants;
  const std::string& list = setting(c.inv.settings, "ablate.variants");
  if (list == "all") {
    variants = sweep_variants();
  } else {
    variants.push_back("full");
    for (auto v : split_commas(list))
      if (trim(v) != "full") variants.emplace_back(trim(v));
  }
  c.manifest({tc.seed});
  const auto rows = ablation_sweep(
      [&](const std::string& v) {
        const auto [m, t] = apply_variant(cfg, tc, v);
        const RunOutcome r = train_and_evaluate(m, t, ds);
        c.log(v + ": " + run_note(r));
        return r.test.mse;
      },
      variants, c.inv.jobs);
  const Table t = ablation_table(rows);
  c.table("ablation", t);
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) j.push_back({{"variant", r.variant}, {"mse", r.mse}, {"delta_pct", r.delta_pct}});
  write_json(c.dir / "ablation.json", j);
  c.out << t.markdown();
  return kOk;
}

inline SynthOptions synth_options(const Settings& s, std::size_t jobs) {
  SynthOptions o;
  o.trials = setting_size(s, "synth.trials");
  o.seed = parse_u64(setting(s, "synth.seed"), "synth.seed");
  o.length = setting_size(s, "synth.length");
  o.epochs = setting_size(s, "synth.epochs");
  o.lr = setting_double(s, "synth.lr");
  o.kan_hidden = setting_size(s, "synth.kan_hidden");
  o.kan_depth = setting_size(s, "synth.kan_depth");
  o.k_min = setting_size(s, "synth.k_min");
  o.k_max = setting_size(s, "synth.k_max");
  o.jobs = jobs;
  return o;
}

inline int cmd_synth(const Context& c) {
  const int step = static_cast<int>(setting_size(c.inv.settings, "synth.step"));
  const SynthOptions o = synth_options(c.inv.settings, c.inv.jobs);
  c.manifest({o.seed});
  const auto results = synth_experiment(step, o);
  const Table t = win_rate_table(results);
  c.table("synth", t);
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : results) j.push_back(r.to_json());
  write_json(c.dir / "synth.json", j);
  c.out << t.markdown();
  return kOk;
}

inline int cmd_inspect(const Context& c) {
  const std::string& path = setting(c.inv.settings, "inspect.checkpoint");
  if (path.empty()) throw ConfigError("inspect needs a checkpoint (--checkpoint)");
  const Checkpoint ck = load_checkpoint(path);
  const std::string& which = setting(c.inv.settings, "inspect.branch");
  std::vector<std::string> branches;
  if (which == "both") {
    if (ck.params.trend) branches.push_back("trend");
    branches.push_back("residual");
  } else {
    branches.push_back(which);
  }
  const std::size_t layer = setting_size(c.inv.settings, "inspect.layer");
  const std::size_t top = setting_size(c.inv.settings, "inspect.top");
  const std::string& fmt = setting(c.inv.settings, "inspect.format");
  if (fmt != "svg" && fmt != "csv" && fmt != "both") throw ConfigError("inspect.format must be svg, csv or both");
  c.manifest({});
  std::vector<EdgeCurve> curves;
  for (const auto& b : branches) {
    const KanLayerParams& kl = kan_layer(ck.params, b, layer);
    const auto edges = top_edges(ck.params, b, layer, std::min(top, kl.in_dim() * kl.out_dim()));
    curves.insert(curves.end(), edges.begin(), edges.end());
  }
  if (fmt != "csv") export_curves(curves, CurveFormat::svg, (c.dir / "curves.svg").string());
  if (fmt != "svg") export_curves(curves, CurveFormat::csv, (c.dir / "curves.csv").string());
  Table t{{"branch", "layer", "in", "out", "edges", "mean_range", "std_range"}, {}};
  for (const auto& a : layer_activity(ck.params)) {
    t.rows.push_back({a.branch, std::to_string(a.layer), std::to_string(a.in_dim), std::to_string(a.out_dim),
                      std::to_string(a.edges), format_double17(a.mean_range), format_double17(a.std_range)});
  }
  c.table("activity", t);
  for (const auto& e : curves) {
    c.log(e.branch + " layer " + std::to_string(e.layer) + " edge " + std::to_string(e.i) + "->" +
          std::to_string(e.j) + "  range " + format_fixed(e.activation_range, 4));
  }
  return kOk;
}

inline int cmd_gradcheck(const Context& c) {
  GradcheckOptions o;
  o.configs = setting_size(c.inv.settings, "gradcheck.configs");
  o.seed = parse_u64(setting(c.inv.settings, "gradcheck.seed"), "gradcheck.seed");
  o.corrupt = setting_double(c.inv.settings, "gradcheck.corrupt");
  c.manifest({o.seed});
  const GradcheckReport r = run_gradcheck(o);
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& e : r.entries) {
    c.out << e.component << "/" << e.block << "  max rel err " << format_double(e.max_rel_err) << "  (" << e.checked
          << " checked)\n";
    j.push_back({{"component", e.component}, {"block", e.block}, {"max_rel_err", e.max_rel_err}, {"checked", e.checked}});
  }
  write_json(c.dir / "gradcheck.json", {{"tolerance", r.tolerance}, {"passed", r.passed()}, {"entries", j}});
  for (const char* comp : {"dense", "kan", "adaptive", "composite"}) {
    c.out << comp << ": max rel err " << format_double(r.component_max(comp)) << "\n";
  }
  if (!r.passed()) {
    const auto* w = r.worst();
    c.out << "FAIL: worst " << w->component << "/" << w->block << " rel err " << format_double(w->max_rel_err)
          << " >= " << format_double(r.tolerance) << "\n";
    return kNumeric;
  }
  c.out << "PASS: all blocks below " << format_double(r.tolerance) << "\n";
  return kOk;
}

/// Prints the closed-form and enumerated parameter counts; no files.
inline int cmd_params(const Invocation& inv, std::ostream& out) {
  ModelConfig cfg = model_from(inv.settings, std::size_t{1});
  const std::size_t closed = count_params(cfg);
  std::size_t enumerated = 0;
  for (const auto& [name, shape] : init_model(Rng(0), cfg).manifest()) enumerated += shape.first * shape.second;
  out << "L=" << cfg.lookback << " H=" << cfg.horizon << "  count_params " << closed << "  enumerated " << enumerated
      << "  (" << format_fixed(static_cast<double>(closed) / 1e6, 2) << "M)\n";
  if (closed != enumerated) {
    out << "MISMATCH\n";
    return kNumeric;
  }
  return kOk;
}

// ---- argument handling ---------------------------------------------------------------------

struct FlagSpec {
  const char* flag;
  const char* key;
  const char* help;
};

inline const std::vector<FlagSpec>& data_flags() {
  static const std::vector<FlagSpec> f{
      {"--dataset", "data.name", "registered dataset name, or 'synthetic'"},
      {"--data", "data.path", "CSV file (date column first, then one column per channel)"},
      {"--split", "data.split", "split convention: auto|hourly_ett|minute_ett|ratio"},
      {"--kind", "data.kind", "synthetic signal kind"},
      {"--length", "data.length", "synthetic series length"},
      {"--noise", "data.noise_std", "synthetic noise standard deviation"},
      {"--data-seed", "data.seed", "synthetic signal seed"},
  };
  return f;
}

inline const std::vector<FlagSpec>& model_train_flags() {
  static const std::vector<FlagSpec> f{
      {"--horizon,--H", "model.horizon", "forecast horizon"},
      {"--lookback,--L", "model.lookback", "lookback length"},
      {"--lr", "train.lr", "peak learning rate"},
      {"--epochs", "train.max_epochs", "maximum epochs"},
      {"--patience", "train.patience", "early-stopping patience"},
      {"--batch-size", "train.batch_size", "mini-batch size"},
      {"--bidirectional", "train.bidirectional", "bidirectional augmentation: on|off"},
      {"--seed", "train.seed", "training seed"},
      {"--max-batches", "train.max_batches_per_epoch", "cap on batches per epoch (0 = all)"},
  };
  return f;
}

class Cli {
 public:
  explicit Cli(std::ostream& out = std::cout, std::ostream& err = std::cerr) : out_(out), err_(err) {
    app_.require_subcommand(1);
    app_.set_version_flag("--version", kToolVersion);
    add("train", "train a model and write checkpoint, run record and metrics", {data_flags(), model_train_flags()});
    add("eval", "evaluate a checkpoint on a dataset split",
        {data_flags(), std::vector<FlagSpec>{{"--checkpoint", "eval.checkpoint", "checkpoint file"},
                                                  {"--on", "eval.split", "split: train|val|test"}}});
    add("seeds", "train and test once per seed; mean ± sample std",
        {data_flags(), model_train_flags(),
         std::vector<FlagSpec>{{"--n", "seeds.n", "seeds 0..n-1"}, {"--seeds", "seeds.list", "comma-separated seeds"}}});
    add("grid", "12-point tuning grid at H=96 on validation MSE", {data_flags(), model_train_flags()});
    add("ablate", "ablation sweep with deltas against the full model",
        {data_flags(), model_train_flags(),
         std::vector<FlagSpec>{{"--variants", "ablate.variants", "comma-separated variants or 'all'"}}});
    add("synth", "synthetic win-rate experiment",
        {std::vector<FlagSpec>{{"--step", "synth.step", "1, 2 or 3"},
                                   {"--trials", "synth.trials", "trials per experiment"},
                                   {"--seed", "synth.seed", "root seed"},
                                   {"--epochs", "synth.epochs", "epochs per contender"},
                                   {"--k-min", "synth.k_min", "step 3: smallest k"},
                                   {"--k-max", "synth.k_max", "step 3: largest k"}}});
    add("inspect", "export the most active edge functions of a checkpoint",
        {std::vector<FlagSpec>{{"--checkpoint", "inspect.checkpoint", "checkpoint file"},
                                   {"--branch", "inspect.branch", "trend|residual|both"},
                                   {"--layer", "inspect.layer", "KAN layer index"},
                                   {"--top", "inspect.top", "edges per branch"},
                                   {"--format", "inspect.format", "svg|csv|both"}}});
    add("gradcheck", "finite-difference check of every backward pass",
        {std::vector<FlagSpec>{{"--configs", "gradcheck.configs", "random configurations per component"},
                                   {"--seed", "gradcheck.seed", "root seed"},
                                   {"--corrupt", "gradcheck.corrupt", "fault injection for negative controls"}}});
    add("params", "closed-form and enumerated parameter counts", {std::vector<FlagSpec>{
        {"--L,--lookback", "model.lookback", "lookback length"}, {"--H,--horizon", "model.horizon", "horizon"}}});
    auto* replay = app_.add_subcommand("replay", "re-run the command recorded in a manifest");
    replay->add_option("manifest", replay_path_, "manifest.json of an earlier run")->required();
    replay->add_option("--out", out_root_, "output root (default $" + std::string(kOutputEnv) + " or ./runs)");
    replay->add_option("--jobs", jobs_, "parallel runs")->check(CLI::PositiveNumber);
    replay->add_flag("--quiet", quiet_, "only print tables and errors");
  }

  int run(int argc, const char* const* argv) {
    try {
      app_.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app_.exit(e, out_, err_);
      return code == 0 ? kOk : kConfig;
    }
    return guarded([&] { return dispatch(); });
  }

  int guarded(const std::function<int()>& body) {
    try {
      return body();
    } catch (const ConfigError& e) {
      err_ << "config error: " << e.what() << "\n";
      return kConfig;
    } catch (const ShapeError& e) {
      err_ << "config error: " << e.what() << "\n";
      return kConfig;
    } catch (const DataError& e) {
      err_ << "data error: " << e.what() << "\n";
      return kData;
    } catch (const NumericError& e) {
      err_ << "numerical error: " << e.what() << "\n";
      return kNumeric;
    } catch (const std::exception& e) {
      err_ << "internal error: " << e.what() << "\n";
      return kInternal;
    }
  }

 private:
  struct Sub {
    CLI::App* app = nullptr;
    std::map<std::string, std::string> flags;
    std::vector<std::string> sets;
    std::string config;
  };

  void add(const std::string& name, const std::string& help, const std::vector<std::vector<FlagSpec>>& groups) {
    Sub& s = subs_[name];
    s.app = app_.add_subcommand(name, help);
    s.app->add_option("--config", s.config, "INI config file (flags override it)");
    s.app->add_option("--set", s.sets, "override any setting: section.key=value");
    s.app->add_option("--out", out_root_, "output root (default $" + std::string(kOutputEnv) + " or ./runs)");
    s.app->add_option("--jobs", jobs_, "parallel runs")->check(CLI::PositiveNumber);
    s.app->add_flag("--quiet", quiet_, "only print tables and errors");
    for (const auto& g : groups) {
      for (const auto& f : g) {
        const std::string key = f.key;
        s.app->add_option_function<std::string>(f.flag, [&s, key](const std::string& v) { s.flags[key] = v; }, f.help);
      }
    }
  }

  int dispatch() {
    Invocation inv;
    inv.out_root = out_root_;
    inv.jobs = jobs_;
    inv.quiet = quiet_;
    if (app_.got_subcommand("replay")) {
      std::ifstream is(replay_path_);
      if (!is) throw IoError("cannot open manifest '" + replay_path_ + "'");
      nlohmann::ordered_json m;
      try {
        m = nlohmann::ordered_json::parse(is);
      } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest '" + replay_path_ + "': " + e.what());
      }
      inv.command = m.at("command").get<std::string>();
      inv.config_file = m.value("config_file", "");
      inv.config_hash = m.value("config_hash", "");
      for (const auto& [k, v] : m.at("settings").items()) inv.settings[k] = v.get<std::string>();
      check_known_keys(inv.settings, "manifest");
    } else {
      for (auto& [name, s] : subs_) {
        if (!s.app->parsed()) continue;
        inv.command = name;
        Settings file;
        if (!s.config.empty()) {
          file = load_ini(s.config);
          inv.config_file = s.config;
          inv.config_hash = file_hash(s.config);
        }
        Settings flags = parse_assignments(s.sets);
        for (const auto& [k, v] : s.flags) flags[k] = v;
        if (flags.count("data.kind") && !flags.count("data.name")) flags["data.name"] = "synthetic";
        inv.settings = resolve_settings(file, flags);
      }
    }
    return execute(inv);
  }

 public:
  int execute(const Invocation& inv) {
    if (inv.command == "params") return cmd_params(inv, out_);
    static const std::map<std::string, std::function<int(const Context&)>> commands{
        {"train", cmd_train},   {"eval", cmd_eval},       {"seeds", cmd_seeds},
        {"grid", cmd_grid},     {"ablate", cmd_ablate},   {"synth", cmd_synth},
        {"inspect", cmd_inspect}, {"gradcheck", cmd_gradcheck}};
    const auto it = commands.find(inv.command);
    if (it == commands.end()) throw ConfigError("unknown command '" + inv.command + "'");
    const Context ctx{inv, make_run_dir(inv), out_};
    last_run_dir_ = ctx.dir;
    try {
      return it->second(ctx);
    } catch (...) {
      // A run that failed before writing anything leaves no directory behind.
      std::error_code ec;
      if (std::filesystem::is_empty(ctx.dir, ec)) std::filesystem::remove(ctx.dir, ec);
      throw;
    }
  }

  const std::filesystem::path& last_run_dir() const { return last_run_dir_; }

 private:
  CLI::App app_{"decompkan: decomposed Patch-KAN forecasting"};
  std::map<std::string, Sub> subs_;
  std::string out_root_;
  std::size_t jobs_ = 1;
  bool quiet_ = false;
  std::string replay_path_;
  std::filesystem::path last_run_dir_;
  std::ostream& out_;
  std::ostream& err_;
};

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Cli cli(out, err);
  return cli.run(argc, argv);
}

}  // namespace decompkan::cli
