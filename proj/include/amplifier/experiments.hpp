#pragma once

// Desk-scale experiment runners: synthetic tones, low-pass degradation,
// band probes, variant ablations and spectrum reports.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "amplifier/baselines.hpp"
#include "amplifier/data.hpp"
#include "amplifier/spectral.hpp"
#include "amplifier/train.hpp"

namespace amp {

struct Tone {
  double frequency = 1.0;  // cycles over the whole series
  double amplitude = 1.0;
  double phase = 0.0;
};

struct SyntheticSpec {
  std::size_t length = 2048;
  std::vector<Tone> tones;
  double noise_std = 0.0;
  std::uint64_t seed = 2021;

  // Throws ConfigError for frequencies outside [0, length/2) or negative amplitudes.
  void validate() const;
  // "f:a[:phase],f:a[:phase],..."
  static std::vector<Tone> parse_tones(const std::string& text);
};

// x[n] = sum a sin(2 pi f n / N + phase) + noise; one channel named "value".
SeriesFrame gen_synthetic(const SyntheticSpec& spec);

// Two tones, amplitudes 10 and 0.5, placed off the bin grid of a 96-sample
// window. `swapped` puts the strong tone at the high frequency. Phases are
// drawn from the seed.
SyntheticSpec two_tone_spec(bool swapped, std::uint64_t seed);
// Window-relative frequency (cycles per 96-sample window) of the strong and
// weak tones of two_tone_spec.
double two_tone_window_frequency(bool swapped, bool strong);

// Standardised train/val/test windows of one dataset.
struct PreparedData {
  ScalerStats scaler;
  SplitRanges ranges;
  WindowSet train;
  WindowSet val;
  WindowSet test;
};

PreparedData prepare_data(const SeriesFrame& raw, const std::string& protocol,
                          const std::string& dataset_name, SplitRatios ratios,
                          std::size_t lookback, std::size_t horizon);

// Variants:
//   full          Amplifier
//   wo-eat        Amplifier without amplification/restoration
//   wo-sci        Amplifier without the SCI block
//   baseline      normalised linear model
//   baseline+eat  baseline inside the EAT wrapper
//   dlinear       decomposition linear model
//   dlinear+eat   dlinear inside the EAT wrapper
const std::vector<std::string>& variant_names();
bool is_variant(const std::string& name);
std::unique_ptr<Forecaster> build_variant(const std::string& name, const AmplifierConfig& config, Rng& rng);

struct VariantRun {
  std::string variant;
  std::unique_ptr<Forecaster> model;
  TrainResult training;
  Metrics test;
};

// Initialises from the "init" substream of train_cfg.seed, trains, evaluates
// the best state on the test split.
VariantRun run_variant(const std::string& variant, const AmplifierConfig& config,
                       const TrainConfig& train_cfg, const PreparedData& data,
                       const TrainHooks& hooks = {});

struct BoostRow {
  std::string comparison;  // "<before> -> <after>"
  double mse_before = 0.0;
  double mse_after = 0.0;
  double mse_boost_pct = 0.0;
  double mae_before = 0.0;
  double mae_after = 0.0;
  double mae_boost_pct = 0.0;
};

// (before - after) / before * 100
double boost_percent(double before, double after);

struct AblationRow {
  std::string variant;
  Metrics test;
  double best_val = 0.0;
  std::size_t best_epoch = 0;
  std::size_t parameters = 0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::vector<BoostRow> boosts;  // for every known (without, with) pair present

  std::string rows_csv() const;
  std::string boosts_csv() const;
};

AblationTable ablation_run(const PreparedData& data, const std::vector<std::string>& variants,
                           const AmplifierConfig& config, const TrainConfig& train_cfg);

struct LowpassRow {
  double keep_fraction = 1.0;
  Metrics test;
};

// Test metrics with inputs band-filtered at inference time; keep 1 leaves
// inputs untouched.
std::vector<LowpassRow> lowpass_ablation(const Forecaster& model, const WindowSet& test,
                                         const std::vector<double>& keep_fractions);
std::string lowpass_csv(const std::vector<LowpassRow>& rows);

// Band partition over horizon bins from the training targets' mean spectrum.
spectral::BandPartition target_bands(const WindowSet& train, double fraction = 0.99);

// Parseval split of the summed squared error over all windows.
spectral::LossSplit windowed_loss_split(const Forecaster& model, const WindowSet& windows,
                                        const spectral::BandPartition& bands);

struct ProbeRecord {
  std::size_t epoch = 0;
  spectral::LossSplit split;
  // Mean |dL/dW| over restoration-map columns whose output bin is in each
  // band; NaN for models without a restoration map.
  double grad_high = 0.0;
  double grad_low = 0.0;
};

struct ProbeReport {
  spectral::BandPartition bands;
  std::vector<ProbeRecord> epochs;

  std::string csv() const;
};

// Trains `model` and records the validation loss split and the restoration
// gradient proxy at initialisation and after every epoch. The gradient is
// taken on a fixed batch of the first training windows.
ProbeReport theorem_probes(Forecaster& model, const PreparedData& data,
                           const spectral::BandPartition& bands, const TrainConfig& train_cfg,
                           std::size_t probe_windows = 256);

struct SpectrumRow {
  std::size_t bin = 0;
  double truth = 0.0;       // mean |DFT| of the target
  double prediction = 0.0;  // mean |DFT| of the forecast
  double relative_error = 0.0;  // |prediction - truth| / truth, NaN where truth is 0
};

// Magnitudes averaged over the listed windows and all channels; an empty
// list means every window.
std::vector<SpectrumRow> spectrum_report(const Forecaster& model, const WindowSet& windows,
                                         const std::vector<std::size_t>& starts = {});
std::string spectrum_csv(const std::vector<SpectrumRow>& rows);

// Amplitude of the forecast relative to the truth at horizon bin `bin`.
double amplitude_ratio(const std::vector<SpectrumRow>& rows, std::size_t bin);

// Git blob id ("blob <size>\0" + bytes, SHA-1) of a file, hex encoded.
std::string content_hash(const std::filesystem::path& path);
std::string content_hash_bytes(std::string_view bytes);

}  // namespace amp
