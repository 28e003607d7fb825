#include "amplifier/experiments.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace amp {

namespace {

constexpr std::size_t kTwoToneLength = 3072;
constexpr double kTwoToneWindow = 96.0;
constexpr double kLowWindowFreq = 3.3;
constexpr double kHighWindowFreq = 20.4;
constexpr double kStrongAmplitude = 10.0;
constexpr double kWeakAmplitude = 0.5;

std::string join_row(std::initializer_list<std::string> cells) {
  std::string out;
  for (const auto& c : cells) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out + "\n";
}

// Metrics of `model` on `windows`, with `transform` applied to each input batch.
template <typename Transform>
Metrics evaluate_transformed(const Forecaster& model, const WindowSet& windows, Transform transform) {
  double se = 0.0;
  double ae = 0.0;
  std::size_t elements = 0;
  for (const auto& starts : windows.batches(256)) {
    const WindowBatch b = windows.batch(starts);
    const Tensor pred = model.forward(transform(b.inputs)).detach();
    const auto p = pred.data();
    const auto t = b.targets.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = p[i] - t[i];
      se += d * d;
      ae += std::abs(d);
    }
    elements += p.size();
  }
  Metrics m;
  m.n_windows = windows.size();
  if (elements) {
    m.mse = se / static_cast<double>(elements);
    m.mae = ae / static_cast<double>(elements);
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Synthetic series

void SyntheticSpec::validate() const {
  if (length == 0) throw ConfigError("synthetic length must be positive");
  if (!(noise_std >= 0.0)) throw ConfigError("synthetic noise std must be >= 0");
  for (const Tone& t : tones) {
    if (!(t.frequency >= 0.0) || t.frequency >= static_cast<double>(length) / 2.0) {
      throw ConfigError("tone frequency " + format_double(t.frequency) + " outside [0, " +
                        format_double(static_cast<double>(length) / 2.0) + ")");
    }
    if (!(t.amplitude >= 0.0)) throw ConfigError("tone amplitude must be >= 0");
  }
}

std::vector<Tone> SyntheticSpec::parse_tones(const std::string& text) {
  std::vector<Tone> tones;
  std::stringstream items(text);
  std::string item;
  while (std::getline(items, item, ',')) {
    if (item.empty()) continue;
    std::vector<std::string> parts;
    std::stringstream fields(item);
    std::string field;
    while (std::getline(fields, field, ':')) parts.push_back(field);
    if (parts.size() < 2 || parts.size() > 3) {
      throw ConfigError("tone '" + item + "' must be frequency:amplitude[:phase]");
    }
    Tone t;
    t.frequency = parse_double("tones", parts[0]);
    t.amplitude = parse_double("tones", parts[1]);
    if (parts.size() == 3) t.phase = parse_double("tones", parts[2]);
    tones.push_back(t);
  }
  if (tones.empty()) throw ConfigError("no tones given");
  return tones;
}

SeriesFrame gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng noise = SeedTree(spec.seed).stream("noise");
  SeriesFrame frame;
  frame.channel_names = {"value"};
  frame.timestamps.reserve(spec.length);
  frame.values.assign(spec.length, 0.0);
  const double n_total = static_cast<double>(spec.length);
  for (std::size_t n = 0; n < spec.length; ++n) {
    frame.timestamps.push_back(std::to_string(n));
    double v = 0.0;
    for (const Tone& t : spec.tones) {
      v += t.amplitude *
           std::sin(2.0 * std::numbers::pi * t.frequency * static_cast<double>(n) / n_total + t.phase);
    }
    if (spec.noise_std > 0.0) v += spec.noise_std * noise.normal();
    frame.values[n] = v;
  }
  return frame;
}

SyntheticSpec two_tone_spec(bool swapped, std::uint64_t seed) {
  Rng phases = SeedTree(seed).stream("two-tone");
  const double scale = static_cast<double>(kTwoToneLength) / kTwoToneWindow;
  SyntheticSpec spec;
  spec.length = kTwoToneLength;
  spec.seed = seed;
  const double strong = swapped ? kHighWindowFreq : kLowWindowFreq;
  const double weak = swapped ? kLowWindowFreq : kHighWindowFreq;
  spec.tones.push_back({strong * scale, kStrongAmplitude, phases.uniform(0.0, 2.0 * std::numbers::pi)});
  spec.tones.push_back({weak * scale, kWeakAmplitude, phases.uniform(0.0, 2.0 * std::numbers::pi)});
  return spec;
}

double two_tone_window_frequency(bool swapped, bool strong) {
  return (swapped == strong) ? kHighWindowFreq : kLowWindowFreq;
}

// ---------------------------------------------------------------------------
// Data and variants

PreparedData prepare_data(const SeriesFrame& raw, const std::string& protocol,
                          const std::string& dataset_name, SplitRatios ratios,
                          std::size_t lookback, std::size_t horizon) {
  const SplitRanges ranges = named_split(protocol, dataset_name, raw.length(), ratios, lookback, horizon);
  ScalerStats scaler = ScalerStats::fit(raw.rows(ranges.train.begin, ranges.train.end));
  const SeriesFrame scaled = scaler.apply(raw);
  return PreparedData{std::move(scaler), ranges,
                      WindowSet(scaled.rows(ranges.train.begin, ranges.train.end), lookback, horizon),
                      WindowSet(scaled.rows(ranges.val.begin, ranges.val.end), lookback, horizon),
                      WindowSet(scaled.rows(ranges.test.begin, ranges.test.end), lookback, horizon)};
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {"full",     "wo-eat",  "wo-sci",     "baseline",
                                                 "baseline+eat", "dlinear", "dlinear+eat"};
  return names;
}

bool is_variant(const std::string& name) {
  const auto& v = variant_names();
  return std::find(v.begin(), v.end(), name) != v.end();
}

std::unique_ptr<Forecaster> build_variant(const std::string& name, const AmplifierConfig& config, Rng& rng) {
  const LinearShape shape{config.channels, config.lookback, config.horizon};
  if (name == "full" || name == "wo-eat" || name == "wo-sci") {
    AmplifierConfig c = config;
    if (name == "wo-eat") c.eat_enabled = false;
    if (name == "wo-sci") c.sci_enabled = false;
    return std::make_unique<AmplifierModel>(c, rng);
  }
  if (name == "baseline") return std::make_unique<LinearForecaster>(shape, rng, true, config.norm_eps);
  if (name == "baseline+eat") {
    auto inner = std::make_unique<LinearForecaster>(shape, rng, true, config.norm_eps);
    return std::make_unique<EatWrapper>(std::move(inner), rng, config.norm_eps);
  }
  if (name == "dlinear") {
    return std::make_unique<DLinearForecaster>(shape, config.ma_kernel, rng, false, config.norm_eps);
  }
  if (name == "dlinear+eat") {
    auto inner = std::make_unique<DLinearForecaster>(shape, config.ma_kernel, rng, false, config.norm_eps);
    return std::make_unique<EatWrapper>(std::move(inner), rng, config.norm_eps);
  }
  std::string valid;
  for (const auto& v : variant_names()) valid += (valid.empty() ? "" : ", ") + v;
  throw ConfigError("unknown variant '" + name + "' (valid: " + valid + ")");
}

VariantRun run_variant(const std::string& variant, const AmplifierConfig& config,
                       const TrainConfig& train_cfg, const PreparedData& data, const TrainHooks& hooks) {
  Rng init = SeedTree(train_cfg.seed).stream("init");
  VariantRun run;
  run.variant = variant;
  run.model = build_variant(variant, config, init);
  run.training = train(*run.model, data.train, data.val, train_cfg, hooks);
  run.test = evaluate(*run.model, data.test);
  return run;
}

// ---------------------------------------------------------------------------
// Ablation

double boost_percent(double before, double after) { return (before - after) / before * 100.0; }

std::string AblationTable::rows_csv() const {
  std::string out = "variant,test_mse,test_mae,n_windows,best_val_mse,best_epoch,parameters\n";
  for (const auto& r : rows) {
    out += join_row({r.variant, format_double(r.test.mse), format_double(r.test.mae),
                     std::to_string(r.test.n_windows), format_double(r.best_val),
                     std::to_string(r.best_epoch), std::to_string(r.parameters)});
  }
  return out;
}

std::string AblationTable::boosts_csv() const {
  std::string out = "comparison,mse_before,mse_after,mse_boost_pct,mae_before,mae_after,mae_boost_pct\n";
  for (const auto& b : boosts) {
    out += join_row({b.comparison, format_double(b.mse_before), format_double(b.mse_after),
                     format_double(b.mse_boost_pct), format_double(b.mae_before),
                     format_double(b.mae_after), format_double(b.mae_boost_pct)});
  }
  return out;
}

AblationTable ablation_run(const PreparedData& data, const std::vector<std::string>& variants,
                           const AmplifierConfig& config, const TrainConfig& train_cfg) {
  Rng scratch(0);
  for (const auto& v : variants) build_variant(v, config, scratch);
  AblationTable table;
  for (const auto& v : variants) {
    VariantRun run = run_variant(v, config, train_cfg, data);
    table.rows.push_back({v, run.test, run.training.best_val, run.training.best_epoch,
                          run.model->parameter_count()});
  }
  static const std::pair<const char*, const char*> pairs[] = {
      {"wo-eat", "full"}, {"wo-sci", "full"}, {"baseline", "baseline+eat"}, {"dlinear", "dlinear+eat"}};
  auto find = [&](const std::string& name) -> const AblationRow* {
    for (const auto& r : table.rows) {
      if (r.variant == name) return &r;
    }
    return nullptr;
  };
  for (const auto& [without, with] : pairs) {
    const AblationRow* before = find(without);
    const AblationRow* after = find(with);
    if (!before || !after) continue;
    table.boosts.push_back({std::string(without) + " -> " + with, before->test.mse, after->test.mse,
                            boost_percent(before->test.mse, after->test.mse), before->test.mae,
                            after->test.mae, boost_percent(before->test.mae, after->test.mae)});
  }
  return table;
}

// ---------------------------------------------------------------------------
// Low-pass filtering

std::vector<LowpassRow> lowpass_ablation(const Forecaster& model, const WindowSet& test,
                                         const std::vector<double>& keep_fractions) {
  std::vector<LowpassRow> rows;
  for (double p : keep_fractions) {
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("keep fraction " + format_double(p) + " outside (0, 1]");
    const Metrics m = evaluate_transformed(model, test, [&](const Tensor& x) {
      return p == 1.0 ? x : spectral::band_filter(x, p);
    });
    rows.push_back({p, m});
  }
  return rows;
}

std::string lowpass_csv(const std::vector<LowpassRow>& rows) {
  std::string out = "keep_fraction,test_mse,test_mae,n_windows\n";
  for (const auto& r : rows) {
    out += join_row({format_double(r.keep_fraction), format_double(r.test.mse),
                     format_double(r.test.mae), std::to_string(r.test.n_windows)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Probes

spectral::BandPartition target_bands(const WindowSet& train, double fraction) {
  std::vector<double> acc(train.horizon(), 0.0);
  std::size_t batches = 0;
  for (const auto& starts : train.batches(256)) {
    const WindowBatch b = train.batch(starts);
    const auto e = spectral::mean_bin_energy(b.targets);
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += e[k] * static_cast<double>(starts.size());
    batches += starts.size();
  }
  for (double& v : acc) v /= static_cast<double>(batches);
  return spectral::BandPartition::by_energy(acc, fraction);
}

spectral::LossSplit windowed_loss_split(const Forecaster& model, const WindowSet& windows,
                                        const spectral::BandPartition& bands) {
  spectral::LossSplit total;
  for (const auto& starts : windows.batches(256)) {
    const WindowBatch b = windows.batch(starts);
    const Tensor err = sub(b.targets, model.forward(b.inputs).detach());
    const spectral::LossSplit s = spectral::parseval_loss_split(err, bands);
    total.loss_high += s.loss_high;
    total.loss_low += s.loss_low;
  }
  const double sum = total.total();
  total.share_high = sum > 0.0 ? total.loss_high / sum : std::nan("");
  total.share_low = sum > 0.0 ? total.loss_low / sum : std::nan("");
  return total;
}

std::string ProbeReport::csv() const {
  std::string out = "epoch,loss_high,loss_low,share_high,share_low,grad_high_proxy,grad_low_proxy\n";
  for (const auto& r : epochs) {
    out += join_row({std::to_string(r.epoch), format_double(r.split.loss_high),
                     format_double(r.split.loss_low), format_double(r.split.share_high),
                     format_double(r.split.share_low), format_double(r.grad_high),
                     format_double(r.grad_low)});
  }
  return out;
}

ProbeReport theorem_probes(Forecaster& model, const PreparedData& data,
                           const spectral::BandPartition& bands, const TrainConfig& train_cfg,
                           std::size_t probe_windows) {
  if (bands.length() != model.horizon()) {
    throw std::invalid_argument("probe bands cover " + std::to_string(bands.length()) +
                                " bins, model horizon is " + std::to_string(model.horizon()));
  }
  std::vector<std::size_t> probe(std::min(probe_windows, data.train.size()));
  for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = i;
  const WindowBatch probe_batch = data.train.batch(probe);

  ProbeReport report;
  report.bands = bands;
  auto record = [&](std::size_t epoch, Forecaster& m) {
    ProbeRecord r;
    r.epoch = epoch;
    r.split = windowed_loss_split(m, data.val, bands);
    r.grad_high = r.grad_low = std::nan("");

    std::vector<Parameter*> w;
    for (Parameter* p : m.parameters()) {
      if (p->name == "restoration.W.re" || p->name == "restoration.W.im") w.push_back(p);
    }
    if (!w.empty()) {
      m.zero_grad();
      backward(mse_loss(m.forward(probe_batch.inputs), probe_batch.targets));
      const std::size_t tau = m.horizon();
      double high = 0.0, low = 0.0;
      std::size_t n_high = 0, n_low = 0;
      for (const Parameter* p : w) {
        const auto g = p->gradient();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (bands.is_high(i % tau)) {
            high += std::abs(g[i]);
            ++n_high;
          } else {
            low += std::abs(g[i]);
            ++n_low;
          }
        }
      }
      m.zero_grad();
      if (n_high) r.grad_high = high / static_cast<double>(n_high);
      if (n_low) r.grad_low = low / static_cast<double>(n_low);
    }
    report.epochs.push_back(r);
  };

  TrainHooks hooks;
  hooks.on_epoch = record;
  train(model, data.train, data.val, train_cfg, hooks);
  return report;
}

// ---------------------------------------------------------------------------
// Spectrum report

std::vector<SpectrumRow> spectrum_report(const Forecaster& model, const WindowSet& windows,
                                         const std::vector<std::size_t>& starts) {
  std::vector<std::size_t> chosen = starts;
  if (chosen.empty()) {
    chosen.resize(windows.size());
    for (std::size_t i = 0; i < chosen.size(); ++i) chosen[i] = i;
  }
  const std::size_t tau = windows.horizon();
  std::vector<double> truth(tau, 0.0), pred(tau, 0.0);
  std::size_t rows = 0;
  for (std::size_t i = 0; i < chosen.size(); i += 256) {
    const std::span<const std::size_t> part(chosen.data() + i, std::min<std::size_t>(256, chosen.size() - i));
    const WindowBatch b = windows.batch(part);
    const spectral::Spectrum t = spectral::dft(b.targets);
    const spectral::Spectrum p = spectral::dft(model.forward(b.inputs).detach());
    const std::size_t n_rows = b.targets.numel() / tau;
    const auto tr = t.re.data(), ti = t.im.data(), pr = p.re.data(), pi = p.im.data();
    for (std::size_t r = 0; r < n_rows; ++r) {
      for (std::size_t k = 0; k < tau; ++k) {
        const std::size_t j = r * tau + k;
        truth[k] += std::hypot(tr[j], ti[j]);
        pred[k] += std::hypot(pr[j], pi[j]);
      }
    }
    rows += n_rows;
  }
  std::vector<SpectrumRow> out;
  for (std::size_t k = 0; k < tau; ++k) {
    SpectrumRow r;
    r.bin = k;
    r.truth = truth[k] / static_cast<double>(rows);
    r.prediction = pred[k] / static_cast<double>(rows);
    r.relative_error = r.truth > 0.0 ? std::abs(r.prediction - r.truth) / r.truth : std::nan("");
    out.push_back(r);
  }
  return out;
}

std::string spectrum_csv(const std::vector<SpectrumRow>& rows) {
  std::string out = "bin,truth_magnitude,prediction_magnitude,relative_error\n";
  for (const auto& r : rows) {
    out += join_row({std::to_string(r.bin), format_double(r.truth), format_double(r.prediction),
                     format_double(r.relative_error)});
  }
  return out;
}

double amplitude_ratio(const std::vector<SpectrumRow>& rows, std::size_t bin) {
  const SpectrumRow& r = rows.at(bin);
  return r.prediction / r.truth;
}

// ---------------------------------------------------------------------------
// Hashing

std::string content_hash_bytes(std::string_view bytes) {
  const std::string head = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, head.data(), head.size()) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("SHA-1 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

std::string content_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "' for hashing");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return content_hash_bytes(bytes);
}

}  // namespace amp
