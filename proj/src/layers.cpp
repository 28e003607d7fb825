#include "amplifier/layers.hpp"

#include <cmath>

namespace amp {

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

Linear::Linear(std::string name, std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = {name + ".weight", uniform_tensor({in, out}, bound, rng)};
  bias_ = {name + ".bias", uniform_tensor({out}, bound, rng)};
}

Tensor Linear::operator()(const Tensor& x) const {
  return add_bias(matmul(x, weight_.value), bias_.value);
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

FeedForward::FeedForward(const std::string& name, std::size_t in, std::size_t hidden,
                         std::size_t out, double slope, Rng& rng)
    : fc1_(name + ".fc1", in, hidden, rng), fc2_(name + ".fc2", hidden, out, rng), slope_(slope) {}

Tensor FeedForward::operator()(const Tensor& x) const {
  return fc2_(leaky_relu(fc1_(x), slope_));
}

void FeedForward::collect(std::vector<Parameter*>& out) {
  fc1_.collect(out);
  fc2_.collect(out);
}

}  // namespace amp
