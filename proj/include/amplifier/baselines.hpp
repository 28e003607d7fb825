#pragma once

// Linear baselines and the energy amplification wrapper that lifts any
// Forecaster into an amplified one.

#include <memory>

#include "amplifier/model.hpp"

namespace amp {

struct LinearShape {
  std::size_t channels = 1;
  std::size_t lookback = 96;
  std::size_t horizon = 96;
};

// Instance norm -> one linear map L -> tau shared across channels -> inverse norm.
class LinearForecaster final : public Forecaster {
 public:
  LinearForecaster(LinearShape shape, Rng& rng, bool normalize = true, double norm_eps = 1e-5);

  Tensor forward(const Tensor& x) const override;
  std::vector<Parameter*> parameters() override;
  std::string kind() const override { return "linear"; }
  std::size_t channels() const override { return shape_.channels; }
  std::size_t lookback() const override { return shape_.lookback; }
  std::size_t horizon() const override { return shape_.horizon; }
  KeyValues config() const override;
  bool set_internal_norm(bool enabled) override;

  Linear& layer() { return linear_; }

 private:
  LinearShape shape_;
  bool normalize_;
  double norm_eps_;
  Linear linear_;
};

// Moving-average decomposition, one linear map per component, summed.
class DLinearForecaster final : public Forecaster {
 public:
  DLinearForecaster(LinearShape shape, std::size_t kernel, Rng& rng, bool normalize = false,
                    double norm_eps = 1e-5);

  Tensor forward(const Tensor& x) const override;
  std::vector<Parameter*> parameters() override;
  std::string kind() const override { return "dlinear"; }
  std::size_t channels() const override { return shape_.channels; }
  std::size_t lookback() const override { return shape_.lookback; }
  std::size_t horizon() const override { return shape_.horizon; }
  KeyValues config() const override;
  bool set_internal_norm(bool enabled) override;

  Linear& trend() { return trend_; }
  Linear& season() { return season_; }

 private:
  LinearShape shape_;
  std::size_t kernel_;
  bool normalize_;
  double norm_eps_;
  Linear trend_;
  Linear season_;
  Tensor moving_average_;
};

// Seasonal-naive copy: forecast[j] = x[j mod L]. No parameters; an exact
// oracle for signals whose period divides L.
class CopyForecaster final : public Forecaster {
 public:
  explicit CopyForecaster(LinearShape shape) : shape_(shape) {}

  Tensor forward(const Tensor& x) const override;
  std::vector<Parameter*> parameters() override { return {}; }
  std::string kind() const override { return "copy"; }
  std::size_t channels() const override { return shape_.channels; }
  std::size_t lookback() const override { return shape_.lookback; }
  std::size_t horizon() const override { return shape_.horizon; }
  KeyValues config() const override;

 private:
  LinearShape shape_;
};

// norm -> amplify -> inner -> restore -> inverse norm. The wrapper owns
// normalisation; a norm-bearing inner model is switched to raw mode.
class EatWrapper final : public Forecaster {
 public:
  EatWrapper(std::unique_ptr<Forecaster> inner, Rng& rng, double norm_eps = 1e-5);

  Tensor forward(const Tensor& x) const override;
  std::vector<Parameter*> parameters() override;
  std::string kind() const override { return "eat"; }
  std::size_t channels() const override { return inner_->channels(); }
  std::size_t lookback() const override { return inner_->lookback(); }
  std::size_t horizon() const override { return inner_->horizon(); }
  KeyValues config() const override;

  Forecaster& inner() { return *inner_; }
  Restoration& restoration() { return restoration_; }

 private:
  std::unique_ptr<Forecaster> inner_;
  Restoration restoration_;
  double norm_eps_;
};

}  // namespace amp
