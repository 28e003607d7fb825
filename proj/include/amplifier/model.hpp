#pragma once

// The Amplifier forecaster: instance norm -> energy amplification -> SCI block
// -> seasonal-trend forecaster -> energy restoration -> inverse instance norm.

#include <optional>

#include "amplifier/forecaster.hpp"
#include "amplifier/layers.hpp"
#include "amplifier/spectral.hpp"

namespace amp {

struct InstanceNormState {
  Tensor mean;   // [..., C, 1]
  Tensor sigma;  // [..., C, 1], >= eps
};

struct Normalized {
  Tensor values;
  InstanceNormState state;
};

// Per-channel standardisation over the time axis. sigma = max(std, eps), so a
// constant channel maps to zeros.
Normalized instance_norm(const Tensor& x, double eps = 1e-5);
// y * sigma + mean, broadcast over y's time axis.
Tensor inverse_instance_norm(const Tensor& y, const InstanceNormState& state);

// [L, L] matrix M with (x M)[i] the centred moving average of x with
// replicate padding of (kernel-1)/2 on both sides.
Tensor moving_average_matrix(std::size_t length, std::size_t kernel);

struct Decomposition {
  Tensor trend;
  Tensor season;
};

// Throws std::invalid_argument for an even kernel or one longer than L.
Decomposition std_decompose(const Tensor& x, std::size_t kernel);

// Learned complex map Y' = X' W + B from flipped input bins to horizon bins,
// subtracted from the spectrum of the amplified forecast. Shared across channels.
class Restoration {
 public:
  Restoration(std::size_t lookback, std::size_t horizon, Rng& rng);

  spectral::InverseResult apply(const Tensor& y_amp, const spectral::Spectrum& flipped) const;
  // Y' only: the spectrum that gets removed.
  spectral::Spectrum removed_spectrum(const spectral::Spectrum& flipped) const;

  void collect(std::vector<Parameter*>& out);
  // W = identity (requires L == tau), B = 0.
  void set_identity();
  void set_zero();

  Parameter& w_re() { return w_re_; }
  Parameter& w_im() { return w_im_; }
  Parameter& b_re() { return b_re_; }
  Parameter& b_im() { return b_im_; }

  static std::size_t parameter_count(std::size_t lookback, std::size_t horizon) {
    return 2 * lookback * horizon + 2 * horizon;
  }

 private:
  Parameter w_re_;
  Parameter w_im_;
  Parameter b_re_;
  Parameter b_im_;
};

struct AmplifierConfig {
  std::size_t channels = 1;
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  bool sci_enabled = true;
  bool eat_enabled = true;
  std::size_t sci_channel_hidden = 1;
  std::size_t ffn_hidden = 192;
  std::size_t ma_kernel = 25;
  double leaky_slope = 0.01;
  double norm_eps = 1e-5;

  // ffn_hidden = 2L, sci_channel_hidden = ceil(C/2), ma_kernel = 25 (or the
  // largest odd value <= L for shorter windows).
  static AmplifierConfig defaults(std::size_t channels, std::size_t lookback, std::size_t horizon);

  // Throws ConfigError on violated invariants.
  void validate() const;
  std::size_t expected_parameter_count() const;

  KeyValues to_key_values() const;
  static AmplifierConfig from_key_values(const KeyValues& kv);
};

struct ForwardDiagnostics {
  Tensor forecast;
  double imag_residue = 0.0;  // discarded by the restoration inverse transform
};

class AmplifierModel final : public Forecaster {
 public:
  AmplifierModel(AmplifierConfig config, Rng& rng);

  Tensor forward(const Tensor& x) const override;
  ForwardDiagnostics forward_diagnostics(const Tensor& x) const;

  // Stages, exposed for tests and probes. All act on [..., C, L].
  Tensor sci_forward(const Tensor& x) const;
  Tensor forecaster_forward(const Tensor& x_sci) const;

  std::vector<Parameter*> parameters() override;
  std::string kind() const override { return "amplifier"; }
  std::size_t channels() const override { return config_.channels; }
  std::size_t lookback() const override { return config_.lookback; }
  std::size_t horizon() const override { return config_.horizon; }
  KeyValues config() const override;

  const AmplifierConfig& settings() const { return config_; }
  Restoration* restoration() { return restoration_ ? &*restoration_ : nullptr; }

 private:
  AmplifierConfig config_;
  Linear compress_in_;
  Linear compress_out_;
  FeedForward common_;
  FeedForward specific_;
  FeedForward trend_;
  FeedForward season_;
  std::optional<Restoration> restoration_;
  Tensor moving_average_;
};

}  // namespace amp
