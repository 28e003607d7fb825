#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "amplifier/checkpoint.hpp"
#include "amplifier/experiments.hpp"

namespace amp::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const KeyValues& default_config() {
  static const KeyValues d = {
      {"data.protocol", "auto"},
      {"data.train_ratio", "0.7"},
      {"data.val_ratio", "0.1"},
      {"data.test_ratio", "0.2"},
      {"model.variant", "full"},
      {"model.lookback", "96"},
      {"model.horizon", "96"},
      {"model.leaky_slope", "0.01"},
      {"model.norm_eps", "1e-05"},
      {"train.lr", "0.001"},
      {"train.batch_size", "32"},
      {"train.max_epochs", "30"},
      {"train.patience", "5"},
      {"train.beta1", "0.9"},
      {"train.beta2", "0.999"},
      {"train.eps", "1e-08"},
      {"experiment.variants", "full,wo-eat,wo-sci,baseline,baseline+eat"},
      {"experiment.keep_fractions", "1,0.9,0.75,0.5,0.25"},
      {"experiment.band_fraction", "0.99"},
      {"experiment.probe_windows", "256"},
  };
  return d;
}

// Keys without defaults: required or derived from the data.
const std::set<std::string>& optional_keys() {
  static const std::set<std::string> k = {"data.path", "model.ffn_hidden", "model.sci_channel_hidden",
                                          "model.ma_kernel"};
  return k;
}

void check_known(const std::string& key) {
  if (default_config().count(key) || optional_keys().count(key)) return;
  throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 2021;
  std::string out = "run";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Flat key=value config file (data.*, model.*, train.*, experiment.*)");
  cmd->add_option("--set", c.sets, "Override one config entry, e.g. --set train.lr=0.01 (repeatable)");
  cmd->add_option("--seed", c.seed, "Root seed for initialisation, shuffling and synthesis")->capture_default_str();
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

// defaults <- config file <- --set <- command flags
KeyValues resolve(const Common& c, const KeyValues& flags = {}) {
  KeyValues kv = default_config();
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    if (!in) throw ConfigError("cannot read config file '" + c.config + "'");
    std::stringstream text;
    text << in.rdbuf();
    for (const auto& [k, v] : parse_key_values(text.str())) {
      check_known(k);
      kv[k] = v;
    }
  }
  for (const auto& s : c.sets) {
    auto [k, v] = split_assignment(s);
    check_known(k);
    kv[k] = v;
  }
  for (const auto& [k, v] : flags) kv[k] = v;
  return kv;
}

TrainConfig train_config(const KeyValues& kv, std::uint64_t seed) {
  TrainConfig tc = TrainConfig::from_key_values(with_prefix_stripped(kv, "train."));
  tc.seed = seed;
  return tc;
}

SplitRatios split_ratios(const KeyValues& kv) {
  return {get_double(kv, "data.train_ratio", 0.7), get_double(kv, "data.val_ratio", 0.1),
          get_double(kv, "data.test_ratio", 0.2)};
}

std::size_t kv_size(const KeyValues& kv, const std::string& key) {
  const std::int64_t v = parse_int(key, require(kv, key));
  if (v <= 0) throw ConfigError("'" + key + "' must be positive");
  return static_cast<std::size_t>(v);
}

AmplifierConfig model_config(const KeyValues& kv, std::size_t channels) {
  KeyValues m = with_prefix_stripped(kv, "model.");
  m.erase("variant");
  m["channels"] = std::to_string(channels);
  return AmplifierConfig::from_key_values(m);
}

// Throws ConfigError listing the valid names.
void require_variant(const std::string& name) {
  if (is_variant(name)) return;
  Rng scratch(0);
  build_variant(name, AmplifierConfig{}, scratch);
}

std::string variant_of(const KeyValues& kv) {
  const std::string v = require(kv, "model.variant");
  require_variant(v);
  return v;
}

struct Dataset {
  SeriesFrame raw;
  PreparedData data;
  std::string path;
};

Dataset load_dataset(const KeyValues& kv, std::size_t lookback, std::size_t horizon) {
  const std::string path = require(kv, "data.path");
  SeriesFrame raw = load_csv(path);
  PreparedData data = prepare_data(raw, require(kv, "data.protocol"), fs::path(path).filename().string(),
                                   split_ratios(kv), lookback, horizon);
  return {std::move(raw), std::move(data), path};
}

const WindowSet& split_windows(const PreparedData& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "val") return d.val;
  if (split == "test") return d.test;
  throw ConfigError("unknown split '" + split + "' (valid: train, val, test)");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write '" + path.string() + "'");
}

fs::path prepare_out(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create output directory '" + dir + "': " + ec.message());
  return p;
}

// manifest.json holds only reproducible content; wall time goes to timing.txt.
void write_manifest(const fs::path& dir, const std::string& command, std::uint64_t seed,
                    const KeyValues& config, const KeyValues& model,
                    const std::vector<std::pair<std::string, std::string>>& inputs,
                    const std::vector<std::string>& outputs, double wall_seconds) {
  json m;
  m["command"] = command;
  m["seed"] = seed;
  m["config"] = config;
  if (!model.empty()) m["model"] = model;
  json in = json::array();
  for (const auto& [role, path] : inputs) in.push_back({{"role", role}, {"path", path}, {"hash", content_hash(path)}});
  m["inputs"] = in;
  std::vector<std::string> files = outputs;
  files.push_back("manifest.json");
  m["outputs"] = files;
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  write_text(dir / "timing.txt", "wall_seconds=" + format_double(wall_seconds) + "\n");
}

std::string history_csv(const TrainResult& r) {
  std::string out = "epoch,train_mse,val_mse,val_mae\n";
  for (const auto& e : r.history) {
    out += std::to_string(e.epoch) + "," + format_double(e.train_mse) + "," + format_double(e.val_mse) + "," +
           format_double(e.val_mae) + "\n";
  }
  return out;
}

json metrics_json(const Metrics& m) { return {{"mse", m.mse}, {"mae", m.mae}, {"n_windows", m.n_windows}}; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Commands

int cmd_train(const Common& c, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const KeyValues kv = resolve(c);
  const TrainConfig tc = train_config(kv, c.seed);
  const std::string variant = variant_of(kv);
  const std::size_t lookback = kv_size(kv, "model.lookback");
  const std::size_t horizon = kv_size(kv, "model.horizon");
  Dataset ds = load_dataset(kv, lookback, horizon);
  const AmplifierConfig acfg = model_config(kv, ds.raw.channels());

  VariantRun run = run_variant(variant, acfg, tc, ds.data);
  const fs::path dir = prepare_out(c.out);
  save_checkpoint(*run.model, {run.training.best_val, run.training.best_epoch}, dir / "checkpoint.bin");
  write_text(dir / "metrics.csv", history_csv(run.training));
  write_manifest(dir, "train", c.seed, kv, run.model->config(), {{"data", ds.path}},
                 {"checkpoint.bin", "metrics.csv"}, seconds_since(t0));
  json summary = {{"best_epoch", run.training.best_epoch},
                  {"best_val_mse", run.training.best_val},
                  {"test", metrics_json(run.test)}};
  out << summary.dump() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::size_t horizon = 0;
  std::string predictions;
};

int cmd_eval(const Common& c, const EvalArgs& a, std::ostream& out) {
  KeyValues flags;
  if (!a.data.empty()) flags["data.path"] = a.data;
  const KeyValues kv = resolve(c, flags);
  LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  Forecaster& model = *ck.model;
  if (a.horizon != 0 && a.horizon != model.horizon()) {
    throw ConfigError("checkpoint horizon is " + std::to_string(model.horizon()) + ", requested " +
                      std::to_string(a.horizon));
  }
  Dataset ds = load_dataset(kv, model.lookback(), model.horizon());
  if (ds.raw.channels() != model.channels()) {
    throw ConfigError("checkpoint expects " + std::to_string(model.channels()) + " channels, dataset has " +
                      std::to_string(ds.raw.channels()));
  }
  const WindowSet& windows = split_windows(ds.data, a.split);
  const Metrics m = evaluate(model, windows);

  if (!a.predictions.empty()) {
    std::ofstream pred(a.predictions, std::ios::binary | std::ios::trunc);
    if (!pred) throw DataError("cannot write '" + a.predictions + "'");
    pred << "window,channel,step,prediction,target\n";
    for (const auto& starts : windows.batches(256)) {
      const WindowBatch b = windows.batch(starts);
      const Tensor p = model.forward(b.inputs).detach();
      const std::size_t ch = model.channels(), tau = model.horizon();
      for (std::size_t i = 0; i < starts.size(); ++i) {
        for (std::size_t cc = 0; cc < ch; ++cc) {
          for (std::size_t j = 0; j < tau; ++j) {
            const std::size_t idx = (i * ch + cc) * tau + j;
            pred << starts[i] << ',' << cc << ',' << j << ',' << format_double(p.data()[idx]) << ','
                 << format_double(b.targets.data()[idx]) << '\n';
          }
        }
      }
    }
  }
  out << metrics_json(m).dump() << "\n";
  return kExitOk;
}

int cmd_ablate(const Common& c, const std::string& variants_flag, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  KeyValues flags;
  if (!variants_flag.empty()) flags["experiment.variants"] = variants_flag;
  const KeyValues kv = resolve(c, flags);
  const auto variants = split_list(require(kv, "experiment.variants"));
  if (variants.empty()) throw ConfigError("no variants given");
  for (const auto& v : variants) require_variant(v);
  const TrainConfig tc = train_config(kv, c.seed);
  Dataset ds = load_dataset(kv, kv_size(kv, "model.lookback"), kv_size(kv, "model.horizon"));
  const AmplifierConfig acfg = model_config(kv, ds.raw.channels());

  const AblationTable table = ablation_run(ds.data, variants, acfg, tc);
  const fs::path dir = prepare_out(c.out);
  write_text(dir / "ablation.csv", table.rows_csv());
  write_text(dir / "boosts.csv", table.boosts_csv());
  write_manifest(dir, "ablate", c.seed, kv, acfg.to_key_values(), {{"data", ds.path}},
                 {"ablation.csv", "boosts.csv"}, seconds_since(t0));
  out << table.rows_csv();
  return kExitOk;
}

struct SynthArgs {
  std::string tones = "3:10,40:0.5";
  std::size_t length = 2048;
  double noise = 0.0;
  std::string preset;
};

int cmd_synth(const Common& c, const SynthArgs& a, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const KeyValues kv = resolve(c);
  SyntheticSpec spec;
  if (a.preset.empty()) {
    spec.length = a.length;
    spec.tones = SyntheticSpec::parse_tones(a.tones);
    spec.seed = c.seed;
  } else if (a.preset == "two-tone" || a.preset == "two-tone-swapped") {
    spec = two_tone_spec(a.preset == "two-tone-swapped", c.seed);
  } else {
    throw ConfigError("unknown preset '" + a.preset + "' (valid: two-tone, two-tone-swapped)");
  }
  spec.noise_std = a.noise;
  const SeriesFrame frame = gen_synthetic(spec);
  const fs::path dir = prepare_out(c.out);
  write_csv(frame, dir / "synthetic.csv");

  KeyValues synth = {{"length", std::to_string(spec.length)}, {"noise_std", format_double(spec.noise_std)}};
  for (std::size_t i = 0; i < spec.tones.size(); ++i) {
    const Tone& t = spec.tones[i];
    synth["tone" + std::to_string(i)] =
        format_double(t.frequency) + ":" + format_double(t.amplitude) + ":" + format_double(t.phase);
  }
  write_manifest(dir, "synth", c.seed, kv, synth, {}, {"synthetic.csv"}, seconds_since(t0));
  out << (dir / "synthetic.csv").string() << "\n";
  return kExitOk;
}

int cmd_probe(const Common& c, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const KeyValues kv = resolve(c);
  const TrainConfig tc = train_config(kv, c.seed);
  const std::string variant = variant_of(kv);
  Dataset ds = load_dataset(kv, kv_size(kv, "model.lookback"), kv_size(kv, "model.horizon"));
  const AmplifierConfig acfg = model_config(kv, ds.raw.channels());

  Rng init = SeedTree(tc.seed).stream("init");
  auto model = build_variant(variant, acfg, init);
  const auto bands = target_bands(ds.data.train, get_double(kv, "experiment.band_fraction", 0.99));
  const ProbeReport report =
      theorem_probes(*model, ds.data, bands, tc, kv_size(kv, "experiment.probe_windows"));

  std::string band_csv = "bin,band\n";
  for (std::size_t k = 0; k < bands.length(); ++k) {
    band_csv += std::to_string(k) + (bands.is_high(k) ? ",high\n" : ",low\n");
  }
  const fs::path dir = prepare_out(c.out);
  write_text(dir / "probe.csv", report.csv());
  write_text(dir / "bands.csv", band_csv);
  write_manifest(dir, "probe", c.seed, kv, model->config(), {{"data", ds.path}}, {"probe.csv", "bands.csv"},
                 seconds_since(t0));
  out << report.csv();
  return kExitOk;
}

struct SpectrumArgs {
  std::string checkpoint;
  std::string split = "test";
  std::string window = "all";
};

int cmd_spectrum(const Common& c, const SpectrumArgs& a, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const KeyValues kv = resolve(c);
  LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  Dataset ds = load_dataset(kv, ck.model->lookback(), ck.model->horizon());
  if (ds.raw.channels() != ck.model->channels()) throw ConfigError("checkpoint channel count differs from dataset");
  const WindowSet& windows = split_windows(ds.data, a.split);
  std::vector<std::size_t> starts;
  if (a.window != "all") {
    const std::int64_t w = parse_int("--window", a.window);
    if (w < 0 || static_cast<std::size_t>(w) >= windows.size()) {
      throw ConfigError("--window " + a.window + " outside [0, " + std::to_string(windows.size()) + ")");
    }
    starts.push_back(static_cast<std::size_t>(w));
  }
  const auto rows = spectrum_report(*ck.model, windows, starts);
  const fs::path dir = prepare_out(c.out);
  write_text(dir / "spectrum.csv", spectrum_csv(rows));
  write_manifest(dir, "spectrum", c.seed, kv, ck.config, {{"data", ds.path}, {"checkpoint", a.checkpoint}},
                 {"spectrum.csv"}, seconds_since(t0));
  out << spectrum_csv(rows);
  return kExitOk;
}

int cmd_lowpass(const Common& c, const std::string& checkpoint, const std::string& keep, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  KeyValues flags;
  if (!keep.empty()) flags["experiment.keep_fractions"] = keep;
  const KeyValues kv = resolve(c, flags);
  std::vector<double> fractions;
  for (const auto& f : split_list(require(kv, "experiment.keep_fractions"))) {
    fractions.push_back(parse_double("experiment.keep_fractions", f));
  }

  std::unique_ptr<Forecaster> model;
  std::vector<std::pair<std::string, std::string>> inputs;
  std::optional<Dataset> ds;
  if (!checkpoint.empty()) {
    LoadedCheckpoint ck = load_checkpoint(checkpoint);
    model = std::move(ck.model);
    ds = load_dataset(kv, model->lookback(), model->horizon());
    if (ds->raw.channels() != model->channels()) throw ConfigError("checkpoint channel count differs from dataset");
    inputs.emplace_back("checkpoint", checkpoint);
  } else {
    const TrainConfig tc = train_config(kv, c.seed);
    const std::string variant = variant_of(kv);
    ds = load_dataset(kv, kv_size(kv, "model.lookback"), kv_size(kv, "model.horizon"));
    model = run_variant(variant, model_config(kv, ds->raw.channels()), tc, ds->data).model;
  }
  inputs.insert(inputs.begin(), {"data", ds->path});

  const auto rows = lowpass_ablation(*model, ds->data.test, fractions);
  const fs::path dir = prepare_out(c.out);
  write_text(dir / "lowpass.csv", lowpass_csv(rows));
  write_manifest(dir, "lowpass", c.seed, kv, model->config(), inputs, {"lowpass.csv"}, seconds_since(t0));
  out << lowpass_csv(rows);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Amplifier forecasting toolkit: training, evaluation and spectral experiments"};
  app.require_subcommand(1);

  Common train_c, eval_c, ablate_c, synth_c, probe_c, spectrum_c, lowpass_c;
  EvalArgs eval_a;
  SynthArgs synth_a;
  SpectrumArgs spectrum_a;
  std::string ablate_variants, lowpass_checkpoint, lowpass_keep;

  auto* train = app.add_subcommand("train", "Train one model variant; writes checkpoint.bin, metrics.csv, manifest.json");
  add_common(train, train_c);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint; prints {mse, mae, n_windows} as JSON");
  add_common(eval, eval_c);
  eval->add_option("--checkpoint", eval_a.checkpoint, "Checkpoint file written by train")->required();
  eval->add_option("--data", eval_a.data, "Dataset CSV (overrides data.path)");
  eval->add_option("--split", eval_a.split, "Split to evaluate: train, val or test")->capture_default_str();
  eval->add_option("--horizon", eval_a.horizon, "Expected forecast horizon; 0 accepts the checkpoint's");
  eval->add_option("--predictions", eval_a.predictions, "Also write per-element predictions to this CSV");

  auto* ablate = app.add_subcommand("ablate", "Train several variants under one seed; writes ablation.csv, boosts.csv");
  add_common(ablate, ablate_c);
  ablate->add_option("--variants", ablate_variants,
                     "Comma-separated variants: full, wo-eat, wo-sci, baseline, baseline+eat, dlinear, dlinear+eat");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic tone series; writes synthetic.csv");
  add_common(synth, synth_c);
  synth->add_option("--tones", synth_a.tones, "Tones as frequency:amplitude[:phase], comma-separated")->capture_default_str();
  synth->add_option("--len", synth_a.length, "Series length")->capture_default_str();
  synth->add_option("--noise", synth_a.noise, "Gaussian noise standard deviation")->capture_default_str();
  synth->add_option("--preset", synth_a.preset, "two-tone or two-tone-swapped (replaces --tones and --len)");

  auto* probe = app.add_subcommand("probe", "Train while recording per-band loss shares and gradient proxies; writes probe.csv");
  add_common(probe, probe_c);

  auto* spectrum = app.add_subcommand("spectrum", "Per-bin |DFT| of truth vs forecast; writes spectrum.csv");
  add_common(spectrum, spectrum_c);
  spectrum->add_option("--checkpoint", spectrum_a.checkpoint, "Checkpoint file written by train")->required();
  spectrum->add_option("--split", spectrum_a.split, "Split to report: train, val or test")->capture_default_str();
  spectrum->add_option("--window", spectrum_a.window, "Window index within the split, or 'all'")->capture_default_str();

  auto* lowpass = app.add_subcommand("lowpass", "Test metrics with band-filtered inputs; writes lowpass.csv");
  add_common(lowpass, lowpass_c);
  lowpass->add_option("--checkpoint", lowpass_checkpoint, "Checkpoint to evaluate; trains model.variant when omitted");
  lowpass->add_option("--keep", lowpass_keep, "Comma-separated keep fractions in (0, 1]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_c, out);
    if (*eval) return cmd_eval(eval_c, eval_a, out);
    if (*ablate) return cmd_ablate(ablate_c, ablate_variants, out);
    if (*synth) return cmd_synth(synth_c, synth_a, out);
    if (*probe) return cmd_probe(probe_c, out);
    if (*spectrum) return cmd_spectrum(spectrum_c, spectrum_a, out);
    if (*lowpass) return cmd_lowpass(lowpass_c, lowpass_checkpoint, lowpass_keep, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitConfig;
}

}  // namespace amp::cli
