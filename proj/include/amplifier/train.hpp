#pragma once

// Metrics, Adam, and the early-stopping training loop.

#include <functional>
#include <stdexcept>
#include <vector>

#include "amplifier/data.hpp"
#include "amplifier/forecaster.hpp"
#include "amplifier/keyvalues.hpp"

namespace amp {

// Mean squared / absolute error over all elements. Throws on shape mismatch.
double mse(const Tensor& pred, const Tensor& target);
double mae(const Tensor& pred, const Tensor& target);
// Differentiable mean squared error.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  std::uint64_t seed = 2021;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  // Keys without the "train." prefix.
  KeyValues to_key_values() const;
  static TrainConfig from_key_values(const KeyValues& kv);
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

// One bias-corrected Adam update of `value` in place. `step` is the 1-based
// index of this update.
void adam_update(std::span<double> value, std::span<const double> grad, AdamMoments& moments,
                 std::size_t step, const TrainConfig& cfg);

class Adam {
 public:
  Adam(std::vector<Parameter*> params, TrainConfig cfg);

  // Applies the gradients currently stored on the parameters. A parameter
  // that was never reached by backward counts as a zero gradient.
  void step();
  std::size_t steps() const { return steps_; }
  const AdamMoments& moments(std::size_t i) const { return moments_.at(i); }

 private:
  std::vector<Parameter*> params_;
  std::vector<AdamMoments> moments_;
  TrainConfig cfg_;
  std::size_t steps_ = 0;
};

class NumericalError : public std::runtime_error {
 public:
  NumericalError(std::size_t epoch, std::size_t batch, double value);
  std::size_t epoch;
  std::size_t batch;
};

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t n_windows = 0;
};

// Ascending window order, fixed chunking: the result depends only on the
// parameters and the data.
Metrics evaluate(const Forecaster& model, const WindowSet& windows, std::size_t batch_size = 256);

using ParameterState = std::vector<std::vector<double>>;
ParameterState snapshot(const Module& model);
void restore(Module& model, const ParameterState& state);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
};

struct TrainHooks {
  // Replaces the default validation MSE as the early-stopping metric.
  std::function<double(const Forecaster&)> validator;
  // Called with epoch 0 before the first update and after every epoch.
  std::function<void(std::size_t epoch, Forecaster&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  std::size_t validations = 0;
};

// Trains with Adam on shuffled mini-batches, stops after more than `patience`
// consecutive epochs without improvement, and leaves the model at its best
// validation state.
TrainResult train(Forecaster& model, const WindowSet& train_set, const WindowSet& val_set,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});

}  // namespace amp
