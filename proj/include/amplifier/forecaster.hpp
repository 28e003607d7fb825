#pragma once

#include <memory>
#include <string>

#include "amplifier/keyvalues.hpp"
#include "amplifier/random.hpp"
#include "amplifier/tensor.hpp"

namespace amp {

// Maps input windows [B, C, L] (or a single [C, L]) to forecasts [B, C, tau].
class Forecaster : public Module {
 public:
  virtual Tensor forward(const Tensor& x) const = 0;

  virtual std::string kind() const = 0;
  virtual std::size_t channels() const = 0;
  virtual std::size_t lookback() const = 0;
  virtual std::size_t horizon() const = 0;

  // Everything needed to rebuild the architecture; always contains "kind".
  virtual KeyValues config() const = 0;

  // Models that normalise their own input skip it when something upstream
  // (the EAT wrapper) already does. Returns whether the model had any.
  virtual bool set_internal_norm(bool /*enabled*/) { return false; }

 protected:
  // Throws std::invalid_argument unless x is [C, L] or [B, C, L] for this model.
  void check_input(const Tensor& x) const;
};

// Builds an architecture from Forecaster::config() output. Parameters are
// freshly initialised from `rng`.
std::unique_ptr<Forecaster> make_forecaster(const KeyValues& config, Rng& rng);

}  // namespace amp
