#include "amplifier/baselines.hpp"

#include <set>
#include <stdexcept>

namespace amp {

namespace {

KeyValues shape_config(const std::string& kind, const LinearShape& s) {
  return {{"kind", kind},
          {"channels", std::to_string(s.channels)},
          {"lookback", std::to_string(s.lookback)},
          {"horizon", std::to_string(s.horizon)}};
}

}  // namespace

// ---------------------------------------------------------------------------

LinearForecaster::LinearForecaster(LinearShape shape, Rng& rng, bool normalize, double norm_eps)
    : shape_(shape),
      normalize_(normalize),
      norm_eps_(norm_eps),
      linear_("linear", shape.lookback, shape.horizon, rng) {}

Tensor LinearForecaster::forward(const Tensor& x) const {
  check_input(x);
  if (!normalize_) return linear_(x);
  Normalized n = instance_norm(x, norm_eps_);
  return inverse_instance_norm(linear_(n.values), n.state);
}

std::vector<Parameter*> LinearForecaster::parameters() {
  std::vector<Parameter*> out;
  linear_.collect(out);
  return out;
}

KeyValues LinearForecaster::config() const {
  KeyValues kv = shape_config(kind(), shape_);
  kv["normalize"] = normalize_ ? "true" : "false";
  kv["norm_eps"] = format_double(norm_eps_);
  return kv;
}

bool LinearForecaster::set_internal_norm(bool enabled) {
  normalize_ = enabled;
  return true;
}

// ---------------------------------------------------------------------------

DLinearForecaster::DLinearForecaster(LinearShape shape, std::size_t kernel, Rng& rng,
                                     bool normalize, double norm_eps)
    : shape_(shape),
      kernel_(kernel),
      normalize_(normalize),
      norm_eps_(norm_eps),
      trend_("trend", shape.lookback, shape.horizon, rng),
      season_("season", shape.lookback, shape.horizon, rng),
      moving_average_(moving_average_matrix(shape.lookback, kernel)) {}

Tensor DLinearForecaster::forward(const Tensor& x) const {
  check_input(x);
  auto body = [&](const Tensor& h) {
    Tensor trend = matmul(h, moving_average_);
    return add(trend_(trend), season_(sub(h, trend)));
  };
  if (!normalize_) return body(x);
  Normalized n = instance_norm(x, norm_eps_);
  return inverse_instance_norm(body(n.values), n.state);
}

std::vector<Parameter*> DLinearForecaster::parameters() {
  std::vector<Parameter*> out;
  trend_.collect(out);
  season_.collect(out);
  return out;
}

KeyValues DLinearForecaster::config() const {
  KeyValues kv = shape_config(kind(), shape_);
  kv["ma_kernel"] = std::to_string(kernel_);
  kv["normalize"] = normalize_ ? "true" : "false";
  kv["norm_eps"] = format_double(norm_eps_);
  return kv;
}

bool DLinearForecaster::set_internal_norm(bool enabled) {
  normalize_ = enabled;
  return true;
}

// ---------------------------------------------------------------------------

Tensor CopyForecaster::forward(const Tensor& x) const {
  check_input(x);
  std::vector<std::size_t> index(shape_.horizon);
  for (std::size_t j = 0; j < index.size(); ++j) index[j] = j % shape_.lookback;
  return gather_last(x, index);
}

KeyValues CopyForecaster::config() const { return shape_config(kind(), shape_); }

// ---------------------------------------------------------------------------

EatWrapper::EatWrapper(std::unique_ptr<Forecaster> inner, Rng& rng, double norm_eps)
    : inner_(std::move(inner)),
      restoration_(inner_->lookback(), inner_->horizon(), rng),
      norm_eps_(norm_eps) {
  inner_->set_internal_norm(false);
  std::set<std::string> names;
  for (const Parameter* p : parameters()) {
    if (!names.insert(p->name).second) {
      throw std::invalid_argument("EatWrapper: duplicate parameter name '" + p->name + "'");
    }
  }
}

Tensor EatWrapper::forward(const Tensor& x) const {
  check_input(x);
  Normalized n = instance_norm(x, norm_eps_);
  spectral::Amplified amplified = spectral::amplify(n.values);
  Tensor y_amp = inner_->forward(amplified.x_amp);
  return inverse_instance_norm(restoration_.apply(y_amp, amplified.flipped).real, n.state);
}

std::vector<Parameter*> EatWrapper::parameters() {
  std::vector<Parameter*> out = inner_->parameters();
  restoration_.collect(out);
  return out;
}

KeyValues EatWrapper::config() const {
  KeyValues kv{{"kind", kind()}, {"norm_eps", format_double(norm_eps_)}};
  for (const auto& [k, v] : inner_->config()) kv["inner." + k] = v;
  return kv;
}

}  // namespace amp
