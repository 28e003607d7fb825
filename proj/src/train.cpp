#include "amplifier/train.hpp"

#include <cmath>
#include <limits>

namespace amp {

namespace {

void require_same_shape(const char* what, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

}  // namespace

double mse(const Tensor& pred, const Tensor& target) {
  require_same_shape("mse", pred, target);
  const auto p = pred.data();
  const auto t = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
  return p.empty() ? 0.0 : acc / static_cast<double>(p.size());
}

double mae(const Tensor& pred, const Tensor& target) {
  require_same_shape("mae", pred, target);
  const auto p = pred.data();
  const auto t = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - t[i]);
  return p.empty() ? 0.0 : acc / static_cast<double>(p.size());
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape("mse_loss", pred, target);
  return mean(square(sub(pred, target)));
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be > 0");
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (max_epochs == 0) throw ConfigError("train.max_epochs must be >= 1");
  if (patience == 0) throw ConfigError("train.patience must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2 must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train.eps must be > 0");
}

KeyValues TrainConfig::to_key_values() const {
  return {{"lr", format_double(lr)},
          {"batch_size", std::to_string(batch_size)},
          {"max_epochs", std::to_string(max_epochs)},
          {"patience", std::to_string(patience)},
          {"seed", std::to_string(seed)},
          {"beta1", format_double(beta1)},
          {"beta2", format_double(beta2)},
          {"eps", format_double(eps)}};
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  TrainConfig c;
  auto size = [&](const char* key, std::size_t fallback) {
    const std::int64_t v = get_int(kv, key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError(std::string("train.") + key + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.lr = get_double(kv, "lr", c.lr);
  c.batch_size = size("batch_size", c.batch_size);
  c.max_epochs = size("max_epochs", c.max_epochs);
  c.patience = size("patience", c.patience);
  c.seed = static_cast<std::uint64_t>(size("seed", c.seed));
  c.beta1 = get_double(kv, "beta1", c.beta1);
  c.beta2 = get_double(kv, "beta2", c.beta2);
  c.eps = get_double(kv, "eps", c.eps);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

void adam_update(std::span<double> value, std::span<const double> grad, AdamMoments& moments,
                 std::size_t step, const TrainConfig& cfg) {
  if (moments.m.size() != value.size()) {
    moments.m.assign(value.size(), 0.0);
    moments.v.assign(value.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    moments.m[i] = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g;
    moments.v[i] = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = moments.m[i] / c1;
    const double v_hat = moments.v[i] / c2;
    value[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

Adam::Adam(std::vector<Parameter*> params, TrainConfig cfg)
    : params_(std::move(params)), moments_(params_.size()), cfg_(cfg) {
  cfg_.validate();
}

void Adam::step() {
  ++steps_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    adam_update(p.value.mutable_data(), p.value.grad(), moments_[i], steps_, cfg_);
  }
}

NumericalError::NumericalError(std::size_t epoch_, std::size_t batch_, double value)
    : std::runtime_error("non-finite training loss (" + format_double(value) + ") at epoch " +
                         std::to_string(epoch_) + ", batch " + std::to_string(batch_)),
      epoch(epoch_),
      batch(batch_) {}

// ---------------------------------------------------------------------------

Metrics evaluate(const Forecaster& model, const WindowSet& windows, std::size_t batch_size) {
  double se = 0.0;
  double ae = 0.0;
  std::size_t elements = 0;
  for (const auto& starts : windows.batches(batch_size)) {
    const WindowBatch b = windows.batch(starts);
    const Tensor pred = model.forward(b.inputs).detach();
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
  if (elements > 0) {
    m.mse = se / static_cast<double>(elements);
    m.mae = ae / static_cast<double>(elements);
  }
  return m;
}

ParameterState snapshot(const Module& model) {
  ParameterState state;
  for (const Parameter* p : model.parameters()) state.push_back(p->value.to_vector());
  return state;
}

void restore(Module& model, const ParameterState& state) {
  const auto params = model.parameters();
  if (params.size() != state.size()) throw std::invalid_argument("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i]->value.mutable_data();
    if (dst.size() != state[i].size()) {
      throw std::invalid_argument("restore: size mismatch for '" + params[i]->name + "'");
    }
    std::copy(state[i].begin(), state[i].end(), dst.begin());
  }
}

TrainResult train(Forecaster& model, const WindowSet& train_set, const WindowSet& val_set,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  Rng shuffle = SeedTree(cfg.seed).stream("shuffle");
  Adam adam(model.parameters(), cfg);
  auto validate = [&](const Forecaster& m) -> std::pair<double, Metrics> {
    const Metrics metrics = evaluate(m, val_set);
    return {hooks.validator ? hooks.validator(m) : metrics.mse, metrics};
  };

  TrainResult result;
  result.best_val = std::numeric_limits<double>::infinity();
  ParameterState best = snapshot(model);
  if (hooks.on_epoch) hooks.on_epoch(0, model);

  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t seen = 0;
    const auto batches = train_set.batches(cfg.batch_size, &shuffle);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const WindowBatch b = train_set.batch(batches[bi]);
      model.zero_grad();
      const Tensor loss = mse_loss(model.forward(b.inputs), b.targets);
      const double value = loss.item();
      if (!std::isfinite(value)) throw NumericalError(epoch, bi, value);
      backward(loss);
      adam.step();
      loss_sum += value * static_cast<double>(b.starts.size());
      seen += b.starts.size();
    }

    const auto [score, metrics] = validate(model);
    ++result.validations;
    if (!std::isfinite(score)) throw NumericalError(epoch, batches.size(), score);
    result.history.push_back({epoch, loss_sum / static_cast<double>(seen), metrics.mse, metrics.mae});
    if (hooks.on_epoch) hooks.on_epoch(epoch, model);

    if (score < result.best_val) {
      result.best_val = score;
      result.best_epoch = epoch;
      best = snapshot(model);
      stale = 0;
    } else if (++stale > cfg.patience) {
      break;
    }
  }
  restore(model, best);
  return result;
}

}  // namespace amp
