#pragma once

#include <string>
#include <vector>

#include "amplifier/random.hpp"
#include "amplifier/tensor.hpp"

namespace amp {

// y = x W + b over the trailing axis; W is [in, out]. Weights and bias start
// uniform in +-1/sqrt(in).
class Linear {
 public:
  Linear(std::string name, std::size_t in, std::size_t out, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(std::vector<Parameter*>& out);

  std::size_t in_features() const { return weight_.value.dim(0); }
  std::size_t out_features() const { return weight_.value.dim(1); }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

  static std::size_t parameter_count(std::size_t in, std::size_t out) { return in * out + out; }

 private:
  Parameter weight_;
  Parameter bias_;
};

// Two linear layers with a LeakyReLU between them.
class FeedForward {
 public:
  FeedForward(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
              double slope, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(std::vector<Parameter*>& out);

  static std::size_t parameter_count(std::size_t in, std::size_t hidden, std::size_t out) {
    return Linear::parameter_count(in, hidden) + Linear::parameter_count(hidden, out);
  }

 private:
  Linear fc1_;
  Linear fc2_;
  double slope_;
};

}  // namespace amp
