#include "amplifier/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "amplifier/baselines.hpp"

namespace amp {

void Forecaster::check_input(const Tensor& x) const {
  const bool ok = (x.rank() == 2 || x.rank() == 3) && x.dim(x.rank() - 2) == channels() &&
                  x.dim(x.rank() - 1) == lookback();
  if (!ok) {
    std::ostringstream os;
    os << kind() << ".forward: expected [B," << channels() << "," << lookback() << "] or ["
       << channels() << "," << lookback() << "], got " << shape_str(x.shape());
    throw std::invalid_argument(os.str());
  }
}

// ---------------------------------------------------------------------------
// Instance normalisation

Normalized instance_norm(const Tensor& x, double eps) {
  if (x.rank() < 1) throw std::invalid_argument("instance_norm: need a time axis");
  const std::size_t axis = x.rank() - 1;
  const std::size_t len = x.dim(axis);
  Tensor mu = mean(x, axis);
  Tensor sigma = sqrt(clamp_min(variance(x, axis), eps * eps));
  Tensor centered = sub(x, broadcast_axis(mu, axis, len));
  return {div(centered, broadcast_axis(sigma, axis, len)), {mu, sigma}};
}

Tensor inverse_instance_norm(const Tensor& y, const InstanceNormState& state) {
  const std::size_t axis = y.rank() - 1;
  const std::size_t len = y.dim(axis);
  if (state.mean.rank() != y.rank() || state.mean.dim(axis) != 1) {
    throw std::invalid_argument("inverse_instance_norm: state " + shape_str(state.mean.shape()) +
                                " does not match " + shape_str(y.shape()));
  }
  return add(mul(y, broadcast_axis(state.sigma, axis, len)), broadcast_axis(state.mean, axis, len));
}

// ---------------------------------------------------------------------------
// Seasonal-trend decomposition

Tensor moving_average_matrix(std::size_t length, std::size_t kernel) {
  if (kernel % 2 == 0) {
    throw std::invalid_argument("std_decompose: kernel must be odd, got " + std::to_string(kernel));
  }
  if (kernel > length) {
    throw std::invalid_argument("std_decompose: kernel " + std::to_string(kernel) +
                                " exceeds length " + std::to_string(length));
  }
  const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
  const auto last = static_cast<std::ptrdiff_t>(length) - 1;
  const double w = 1.0 / static_cast<double>(kernel);
  std::vector<double> m(length * length, 0.0);
  for (std::ptrdiff_t dst = 0; dst <= last; ++dst) {
    for (std::ptrdiff_t off = -half; off <= half; ++off) {
      const std::ptrdiff_t src = std::clamp(dst + off, std::ptrdiff_t{0}, last);
      m[static_cast<std::size_t>(src) * length + static_cast<std::size_t>(dst)] += w;
    }
  }
  return Tensor::from({length, length}, std::move(m));
}

Decomposition std_decompose(const Tensor& x, std::size_t kernel) {
  Tensor trend = matmul(x, moving_average_matrix(x.shape().back(), kernel));
  return {trend, sub(x, trend)};
}

// ---------------------------------------------------------------------------
// Restoration

Restoration::Restoration(std::size_t lookback, std::size_t horizon, Rng& rng) {
  const double bound = 1.0 / std::sqrt(2.0 * static_cast<double>(lookback));
  auto init = [&](const char* name) {
    std::vector<double> v(lookback * horizon);
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Parameter{name, Tensor::from({lookback, horizon}, std::move(v), true)};
  };
  w_re_ = init("restoration.W.re");
  w_im_ = init("restoration.W.im");
  b_re_ = {"restoration.B.re", Tensor::zeros({horizon}, true)};
  b_im_ = {"restoration.B.im", Tensor::zeros({horizon}, true)};
}

spectral::Spectrum Restoration::removed_spectrum(const spectral::Spectrum& flipped) const {
  const Tensor& xr = flipped.re;
  const Tensor& xi = flipped.im;
  Tensor re = add_bias(sub(matmul(xr, w_re_.value), matmul(xi, w_im_.value)), b_re_.value);
  Tensor im = add_bias(add(matmul(xr, w_im_.value), matmul(xi, w_re_.value)), b_im_.value);
  return {re, im, b_re_.value.dim(0)};
}

spectral::InverseResult Restoration::apply(const Tensor& y_amp,
                                           const spectral::Spectrum& flipped) const {
  spectral::Spectrum removed = removed_spectrum(flipped);
  spectral::Spectrum y = spectral::dft(y_amp);
  return spectral::idft({sub(y.re, removed.re), sub(y.im, removed.im), y.length});
}

void Restoration::collect(std::vector<Parameter*>& out) {
  out.push_back(&w_re_);
  out.push_back(&w_im_);
  out.push_back(&b_re_);
  out.push_back(&b_im_);
}

void Restoration::set_identity() {
  const std::size_t l = w_re_.value.dim(0);
  const std::size_t t = w_re_.value.dim(1);
  if (l != t) throw std::logic_error("Restoration::set_identity: needs lookback == horizon");
  set_zero();
  auto w = w_re_.value.mutable_data();
  for (std::size_t i = 0; i < l; ++i) w[i * t + i] = 1.0;
}

void Restoration::set_zero() {
  for (Parameter* p : {&w_re_, &w_im_, &b_re_, &b_im_}) {
    auto v = p->value.mutable_data();
    std::fill(v.begin(), v.end(), 0.0);
  }
}

// ---------------------------------------------------------------------------
// Config

AmplifierConfig AmplifierConfig::defaults(std::size_t channels, std::size_t lookback,
                                          std::size_t horizon) {
  AmplifierConfig c;
  c.channels = channels;
  c.lookback = lookback;
  c.horizon = horizon;
  c.ffn_hidden = std::max<std::size_t>(1, 2 * lookback);
  c.sci_channel_hidden = std::max<std::size_t>(1, (channels + 1) / 2);
  std::size_t kernel = std::min<std::size_t>(25, lookback);
  if (kernel % 2 == 0 && kernel > 0) --kernel;
  c.ma_kernel = std::max<std::size_t>(1, kernel);
  return c;
}

void AmplifierConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("amplifier config: " + what); };
  if (channels == 0) fail("channels must be >= 1");
  if (lookback == 0) fail("lookback must be >= 1");
  if (horizon == 0) fail("horizon must be >= 1");
  if (sci_channel_hidden == 0 || ffn_hidden == 0) fail("hidden sizes must be >= 1");
  if (ma_kernel % 2 == 0) fail("ma_kernel must be odd");
  if (ma_kernel > lookback) fail("ma_kernel must not exceed lookback");
  if (!std::isfinite(leaky_slope)) fail("leaky_slope must be finite");
  if (!(norm_eps > 0.0)) fail("norm_eps must be positive");
}

std::size_t AmplifierConfig::expected_parameter_count() const {
  std::size_t n = Linear::parameter_count(channels, sci_channel_hidden) +
                  Linear::parameter_count(sci_channel_hidden, 1) +
                  2 * FeedForward::parameter_count(lookback, ffn_hidden, lookback) +
                  2 * FeedForward::parameter_count(lookback, ffn_hidden, horizon);
  if (eat_enabled) n += Restoration::parameter_count(lookback, horizon);
  return n;
}

KeyValues AmplifierConfig::to_key_values() const {
  return {
      {"kind", "amplifier"},
      {"channels", std::to_string(channels)},
      {"lookback", std::to_string(lookback)},
      {"horizon", std::to_string(horizon)},
      {"sci_enabled", sci_enabled ? "true" : "false"},
      {"eat_enabled", eat_enabled ? "true" : "false"},
      {"sci_channel_hidden", std::to_string(sci_channel_hidden)},
      {"ffn_hidden", std::to_string(ffn_hidden)},
      {"ma_kernel", std::to_string(ma_kernel)},
      {"leaky_slope", format_double(leaky_slope)},
      {"norm_eps", format_double(norm_eps)},
  };
}

namespace {

std::size_t get_size(const KeyValues& kv, const std::string& key, std::size_t fallback) {
  const auto v = get_int(kv, key, static_cast<std::int64_t>(fallback));
  if (v < 0) throw ConfigError("'" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

}  // namespace

AmplifierConfig AmplifierConfig::from_key_values(const KeyValues& kv) {
  const auto c = get_size(kv, "channels", 0);
  const auto l = get_size(kv, "lookback", 0);
  const auto t = get_size(kv, "horizon", 0);
  AmplifierConfig cfg = defaults(c, l, t);
  cfg.sci_enabled = get_bool(kv, "sci_enabled", cfg.sci_enabled);
  cfg.eat_enabled = get_bool(kv, "eat_enabled", cfg.eat_enabled);
  cfg.sci_channel_hidden = get_size(kv, "sci_channel_hidden", cfg.sci_channel_hidden);
  cfg.ffn_hidden = get_size(kv, "ffn_hidden", cfg.ffn_hidden);
  cfg.ma_kernel = get_size(kv, "ma_kernel", cfg.ma_kernel);
  cfg.leaky_slope = get_double(kv, "leaky_slope", cfg.leaky_slope);
  cfg.norm_eps = get_double(kv, "norm_eps", cfg.norm_eps);
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Model

namespace {

const AmplifierConfig& validated(const AmplifierConfig& c) {
  c.validate();
  return c;
}

}  // namespace

AmplifierModel::AmplifierModel(AmplifierConfig config, Rng& rng)
    : config_(validated(config)),
      compress_in_("sci.compress.fc1", config_.channels, config_.sci_channel_hidden, rng),
      compress_out_("sci.compress.fc2", config_.sci_channel_hidden, 1, rng),
      common_("sci.common", config_.lookback, config_.ffn_hidden, config_.lookback,
              config_.leaky_slope, rng),
      specific_("sci.specific", config_.lookback, config_.ffn_hidden, config_.lookback,
                config_.leaky_slope, rng),
      trend_("trend", config_.lookback, config_.ffn_hidden, config_.horizon, config_.leaky_slope,
             rng),
      season_("season", config_.lookback, config_.ffn_hidden, config_.horizon, config_.leaky_slope,
              rng),
      moving_average_(moving_average_matrix(config_.lookback, config_.ma_kernel)) {
  if (config_.eat_enabled) restoration_.emplace(config_.lookback, config_.horizon, rng);
  if (parameter_count() != config_.expected_parameter_count()) {
    throw std::logic_error("AmplifierModel: parameter count does not match configuration");
  }
}

Tensor AmplifierModel::sci_forward(const Tensor& x) const {
  const std::size_t channel_axis = x.rank() - 2;
  const std::size_t c = x.dim(channel_axis);
  // Channel compression acts position-wise: [..., L, C] -> [..., L, 1].
  Tensor commonality =
      transpose_last2(compress_out_(leaky_relu(compress_in_(transpose_last2(x)), config_.leaky_slope)));
  Tensor common_pattern = broadcast_axis(common_(commonality), channel_axis, c);
  Tensor specific_pattern = specific_(sub(x, common_pattern));
  return add(common_pattern, specific_pattern);
}

Tensor AmplifierModel::forecaster_forward(const Tensor& x_sci) const {
  Tensor trend = matmul(x_sci, moving_average_);
  Tensor season = sub(x_sci, trend);
  return add(trend_(trend), season_(season));
}

ForwardDiagnostics AmplifierModel::forward_diagnostics(const Tensor& x) const {
  check_input(x);
  Normalized norm = instance_norm(x, config_.norm_eps);
  Tensor h = norm.values;
  std::optional<spectral::Amplified> amplified;
  if (restoration_) {
    amplified = spectral::amplify(h);
    h = amplified->x_amp;
  }
  if (config_.sci_enabled) h = sci_forward(h);
  Tensor y = forecaster_forward(h);
  double residue = 0.0;
  if (restoration_) {
    auto restored = restoration_->apply(y, amplified->flipped);
    y = restored.real;
    residue = restored.max_imag_residue;
  }
  return {inverse_instance_norm(y, norm.state), residue};
}

Tensor AmplifierModel::forward(const Tensor& x) const { return forward_diagnostics(x).forecast; }

std::vector<Parameter*> AmplifierModel::parameters() {
  std::vector<Parameter*> out;
  compress_in_.collect(out);
  compress_out_.collect(out);
  common_.collect(out);
  specific_.collect(out);
  trend_.collect(out);
  season_.collect(out);
  if (restoration_) restoration_->collect(out);
  return out;
}

KeyValues AmplifierModel::config() const { return config_.to_key_values(); }

// ---------------------------------------------------------------------------

std::unique_ptr<Forecaster> make_forecaster(const KeyValues& config, Rng& rng) {
  const std::string kind = require(config, "kind");
  if (kind == "amplifier") {
    return std::make_unique<AmplifierModel>(AmplifierConfig::from_key_values(config), rng);
  }
  auto shape = [&] {
    LinearShape s;
    s.channels = get_size(config, "channels", 0);
    s.lookback = get_size(config, "lookback", 0);
    s.horizon = get_size(config, "horizon", 0);
    if (s.channels == 0 || s.lookback == 0 || s.horizon == 0) {
      throw ConfigError(kind + " config: channels, lookback and horizon must be >= 1");
    }
    return s;
  };
  if (kind == "linear") {
    return std::make_unique<LinearForecaster>(shape(), rng, get_bool(config, "normalize", true),
                                              get_double(config, "norm_eps", 1e-5));
  }
  if (kind == "dlinear") {
    const auto s = shape();
    const auto kernel =
        get_size(config, "ma_kernel", AmplifierConfig::defaults(1, s.lookback, 1).ma_kernel);
    if (kernel % 2 == 0 || kernel > s.lookback) {
      throw ConfigError("dlinear config: ma_kernel must be odd and <= lookback");
    }
    return std::make_unique<DLinearForecaster>(s, kernel, rng, get_bool(config, "normalize", false),
                                               get_double(config, "norm_eps", 1e-5));
  }
  if (kind == "copy") return std::make_unique<CopyForecaster>(shape());
  if (kind == "eat") {
    auto inner = make_forecaster(with_prefix_stripped(config, "inner."), rng);
    return std::make_unique<EatWrapper>(std::move(inner), rng, get_double(config, "norm_eps", 1e-5));
  }
  throw ConfigError("unknown model kind '" + kind +
                    "' (expected amplifier, linear, dlinear, copy or eat)");
}

}  // namespace amp
