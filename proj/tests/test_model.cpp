#include <doctest.h>

#include <cmath>
#include <complex>
#include <set>

#include "amplifier/model.hpp"
#include "oracles.hpp"

using namespace amp;

namespace {

Tensor weighted(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, oracle::random_tensor(y.shape(), rng)));
}

void fill_params(AmplifierModel& model, std::string_view prefix, double value) {
  for (Parameter* p : model.parameters()) {
    if (p->name.starts_with(prefix)) {
      auto v = p->value.mutable_data();
      std::fill(v.begin(), v.end(), value);
    }
  }
}

AmplifierConfig small_config(std::size_t c, std::size_t l, std::size_t tau) {
  AmplifierConfig cfg = AmplifierConfig::defaults(c, l, tau);
  cfg.ffn_hidden = 6;
  return cfg;
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double pop_std(std::span<const double> v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

TEST_CASE("instance norm examples") {
  const auto constant = instance_norm(Tensor::from({1, 4}, {5, 5, 5, 5}));
  CHECK(constant.values.to_vector() == std::vector<double>{0, 0, 0, 0});
  CHECK(constant.state.sigma.item() == doctest::Approx(1e-5));

  const auto simple = instance_norm(Tensor::from({1, 3}, {1, 2, 3}));
  const auto v = simple.values.to_vector();
  const double s = std::sqrt(2.0 / 3.0);
  CHECK(std::abs(v[0] + 1 / s) < 1e-12);
  CHECK(std::abs(v[1]) < 1e-12);
  CHECK(std::abs(v[2] - 1 / s) < 1e-12);
  CHECK(std::abs(mean_of(v)) < 1e-9);
  CHECK(std::abs(pop_std(v) - 1.0) < 1e-9);
}

TEST_CASE("instance norm is affine invariant and sigma is floored") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const Tensor x = oracle::random_tensor({2, 3, 16}, rng);
    const double a = rng.uniform(0.1, 10.0), b = rng.uniform(-5, 5);
    const auto base = instance_norm(x);
    const auto moved = instance_norm(add_scalar(scale(x, a), b));
    CHECK(oracle::max_abs_diff(base.values.data(), moved.values.data()) < 1e-9);
    for (double sig : base.state.sigma.data()) CHECK(sig >= 1e-5);
  }
}

TEST_CASE("inverse instance norm") {
  Rng rng(3);
  const Tensor x = oracle::random_tensor({3, 10}, rng);
  const auto norm = instance_norm(x);
  CHECK(oracle::max_abs_diff(inverse_instance_norm(norm.values, norm.state).data(), x.data()) < 1e-9);

  const Tensor zero_out = inverse_instance_norm(Tensor::zeros({3, 4}), norm.state);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(zero_out.at({c, j}) == norm.state.mean.at({c, 0}));
  }

  const Tensor y = oracle::random_tensor({3, 4}, rng);
  const Tensor out = inverse_instance_norm(y, norm.state);
  const auto xv = x.to_vector();
  for (std::size_t c = 0; c < 3; ++c) {
    const std::span<const double> channel(xv.data() + c * 10, 10);
    const double mu = mean_of(channel), sigma = std::max(pop_std(channel), 1e-5);
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(out.at({c, j}) - (y.at({c, j}) * sigma + mu)) < 1e-9);
  }

  CHECK_THROWS_AS(inverse_instance_norm(Tensor::zeros({2, 4}), norm.state), std::invalid_argument);
}

TEST_CASE("seasonal-trend decomposition") {
  const auto d = std_decompose(Tensor::from({5}, {1, 2, 3, 4, 5}), 3);
  const std::vector<double> trend = {4.0 / 3, 2, 3, 4, 14.0 / 3};
  CHECK(oracle::max_abs_diff(d.trend.data(), trend) < 1e-12);
  for (std::size_t i = 0; i < 5; ++i) CHECK(d.season.data()[i] == static_cast<double>(i + 1) - d.trend.data()[i]);

  const auto flat = std_decompose(Tensor::full({2, 9}, 3.5), 5);
  CHECK(oracle::max_abs_diff(flat.trend.data(), std::vector<double>(18, 3.5)) < 1e-12);
  CHECK(oracle::max_abs_diff(flat.season.data(), std::vector<double>(18, 0.0)) < 1e-12);

  for (std::size_t kernel : {1u, 3u, 7u, 25u}) {
    Rng rng(kernel);
    const auto v = oracle::random_values(40, rng);
    const auto dec = std_decompose(Tensor::from({40}, v), kernel);
    CHECK(oracle::max_abs_diff(dec.trend.data(), oracle::moving_average(v, kernel)) < 1e-12);
    // season is x - trend by construction; adding back recovers x to the last ulp.
    for (std::size_t i = 0; i < 40; ++i) {
      CHECK(std::abs(dec.trend.data()[i] + dec.season.data()[i] - v[i]) <= 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(v[i])));
    }
  }

  CHECK_THROWS_AS(std_decompose(Tensor::zeros({6}), 2), std::invalid_argument);
  CHECK_THROWS_AS(std_decompose(Tensor::zeros({6}), 7), std::invalid_argument);
}

TEST_CASE("restoration complex product matches a scalar oracle") {
  Rng rng(17);
  Restoration restore(4, 2, rng);
  for (Parameter* p : {&restore.b_re(), &restore.b_im()}) {
    for (double& v : p->value.mutable_data()) v = rng.uniform(-1, 1);
  }
  const Tensor xr = oracle::random_tensor({3, 4}, rng);
  const Tensor xi = oracle::random_tensor({3, 4}, rng);
  const auto removed = restore.removed_spectrum({xr, xi, 4});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t j = 0; j < 2; ++j) {
      std::complex<double> acc(restore.b_re().value.at({j}), restore.b_im().value.at({j}));
      for (std::size_t k = 0; k < 4; ++k) {
        acc += std::complex<double>(xr.at({c, k}), xi.at({c, k})) *
               std::complex<double>(restore.w_re().value.at({k, j}), restore.w_im().value.at({k, j}));
      }
      CHECK(std::abs(removed.re.at({c, j}) - acc.real()) < 1e-12);
      CHECK(std::abs(removed.im.at({c, j}) - acc.imag()) < 1e-12);
    }
  }
}

TEST_CASE("identity restoration undoes amplification") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const std::size_t len = seed % 2 ? 16 : 12;
    Restoration restore(len, len, rng);
    restore.set_identity();
    const Tensor x = oracle::random_tensor({3, len}, rng);
    const auto amp = spectral::amplify(x);
    const auto back = restore.apply(amp.x_amp, amp.flipped);
    CHECK(oracle::max_abs_diff(back.real.data(), x.data()) < 1e-9);
  }
  Rng rng(0);
  Restoration rect(8, 4, rng);
  CHECK_THROWS_AS(rect.set_identity(), std::logic_error);
}

TEST_CASE("zero restoration passes the forecast through") {
  Rng rng(8);
  Restoration restore(8, 4, rng);
  restore.set_zero();
  const auto amp = spectral::amplify(oracle::random_tensor({2, 8}, rng));
  const Tensor y = oracle::random_tensor({2, 4}, rng);
  CHECK(oracle::max_abs_diff(restore.apply(y, amp.flipped).real.data(), y.data()) < 1e-9);
}

TEST_CASE("amplified normalised windows have mirror-symmetric energy") {
  Rng rng(31);
  const auto amp = spectral::amplify(instance_norm(oracle::random_tensor({4, 20}, rng)).values);
  const auto e = spectral::energy(spectral::dft(amp.x_amp));
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t k = 0; k < 20; ++k) CHECK(std::abs(e.per_bin[c * 20 + k] - e.per_bin[c * 20 + (20 - k) % 20]) < 1e-9);
  }
}

TEST_CASE("config invariants and defaults") {
  const auto d = AmplifierConfig::defaults(7, 96, 24);
  CHECK(d.ffn_hidden == 192);
  CHECK(d.sci_channel_hidden == 4);
  CHECK(d.ma_kernel == 25);
  CHECK(AmplifierConfig::defaults(1, 8, 4).ma_kernel == 7);
  CHECK(AmplifierConfig::defaults(1, 12, 4).ma_kernel == 11);

  AmplifierConfig bad = d;
  bad.ma_kernel = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.ma_kernel = 97;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = d;
  bad.ffn_hidden = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  AmplifierConfig custom = d;
  custom.sci_enabled = false;
  custom.leaky_slope = 0.2;
  const auto back = AmplifierConfig::from_key_values(custom.to_key_values());
  CHECK(back.to_key_values() == custom.to_key_values());
}

TEST_CASE("parameters are unique and match the closed-form count") {
  for (bool sci : {true, false}) {
    for (bool eat : {true, false}) {
      AmplifierConfig cfg = small_config(3, 8, 4);
      cfg.sci_enabled = sci;
      cfg.eat_enabled = eat;
      Rng rng(1);
      AmplifierModel model(cfg, rng);
      std::set<std::string> names;
      std::set<const void*> ids;
      for (Parameter* p : model.parameters()) {
        names.insert(p->name);
        ids.insert(p->value.id());
      }
      CHECK(names.size() == model.parameters().size());
      CHECK(ids.size() == model.parameters().size());
      CHECK(model.parameter_count() == cfg.expected_parameter_count());
      CHECK((model.restoration() != nullptr) == eat);
    }
  }
}

TEST_CASE("stage shapes") {
  Rng rng(2);
  AmplifierModel wide(AmplifierConfig::defaults(7, 96, 96), rng);
  const Tensor x = oracle::random_tensor({7, 96}, rng);
  CHECK(wide.sci_forward(x).shape() == Shape{7, 96});
  CHECK(wide.forecaster_forward(x).shape() == Shape{7, 96});

  AmplifierModel big(AmplifierConfig::defaults(21, 96, 96), rng);
  CHECK(big.forward(oracle::random_tensor({21, 96}, rng)).shape() == Shape{21, 96});
  CHECK(big.forward(oracle::random_tensor({2, 21, 96}, rng)).shape() == Shape{2, 21, 96});

  CHECK_THROWS_AS(big.forward(Tensor::zeros({20, 96})), std::invalid_argument);
  CHECK_THROWS_AS(big.forward(Tensor::zeros({21, 95})), std::invalid_argument);
}

TEST_CASE("zeroed blocks give zero output") {
  Rng rng(4);
  AmplifierModel model(small_config(3, 8, 4), rng);
  fill_params(model, "sci.", 0.0);
  CHECK(model.sci_forward(oracle::random_tensor({3, 8}, rng)).to_vector() == std::vector<double>(24, 0.0));


  Rng rng2(5);
  AmplifierModel fresh(small_config(3, 8, 4), rng2);
  for (Parameter* p : fresh.parameters()) {
    if (p->name.ends_with(".bias")) std::fill(p->value.mutable_data().begin(), p->value.mutable_data().end(), 0.0);
  }
  CHECK(fresh.forecaster_forward(Tensor::zeros({3, 8})).to_vector() == std::vector<double>(12, 0.0));
}

TEST_CASE("SCI block gradients") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    AmplifierModel model(small_config(3, 8, 4), rng);
    const Tensor x = oracle::random_tensor({3, 8}, rng);
    CHECK(grad_check([&](const Tensor& v) { return weighted(model.sci_forward(v), seed); }, x).passed);
    std::vector<Parameter*> sci;
    for (Parameter* p : model.parameters()) {
      if (p->name.starts_with("sci.")) sci.push_back(p);
    }
    CHECK(grad_check_parameters([&] { return weighted(model.sci_forward(x), seed); }, sci).passed);
  }
}

TEST_CASE("forecaster gradients") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    AmplifierModel model(small_config(2, 8, 4), rng);
    const Tensor x = oracle::random_tensor({2, 8}, rng);
    CHECK(grad_check([&](const Tensor& v) { return weighted(model.forecaster_forward(v), seed); }, x).passed);
  }
}

TEST_CASE("end-to-end gradients") {
  for (bool sci : {true, false}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      AmplifierConfig cfg = small_config(2, 8, 4);
      cfg.sci_enabled = sci;
      Rng rng(seed);
      AmplifierModel model(cfg, rng);
      const Tensor x = oracle::random_tensor({3, 2, 8}, rng);
      const Tensor target = oracle::random_tensor({3, 2, 4}, rng);
      auto loss = [&] { return mean(square(sub(model.forward(x), target))); };
      const auto report = grad_check_parameters(loss, model.parameters());
      INFO("sci " << sci << " seed " << seed << " rel " << report.max_rel_error);
      CHECK(report.max_rel_error < 1e-4);
      CHECK(grad_check([&](const Tensor& v) { return weighted(model.forward(v), seed); }, x).passed);
    }
  }
}

TEST_CASE("forward is deterministic") {
  Rng rng(9);
  AmplifierModel model(small_config(2, 8, 4), rng);
  const Tensor w = oracle::random_tensor({2, 8}, rng);
  const Tensor batch = concat({reshape(w, {1, 2, 8}), reshape(w, {1, 2, 8})}, 0);
  const auto out = model.forward(batch).to_vector();
  CHECK(std::vector<double>(out.begin(), out.begin() + 8) == std::vector<double>(out.begin() + 8, out.end()));
  CHECK(model.forward(w).to_vector() == model.forward(w).to_vector());
}

TEST_CASE("disabled SCI parameters do not affect the forecast") {
  AmplifierConfig cfg = small_config(3, 8, 4);
  cfg.sci_enabled = false;
  Rng rng(10);
  AmplifierModel model(cfg, rng);
  const Tensor x = oracle::random_tensor({2, 3, 8}, rng);
  const auto before = model.forward(x).to_vector();
  for (Parameter* p : model.parameters()) {
    if (p->name.starts_with("sci.")) {
      for (double& v : p->value.mutable_data()) v += rng.uniform(-1, 1);
    }
  }
  CHECK(model.forward(x).to_vector() == before);
}

TEST_CASE("every live parameter receives gradient") {
  for (bool sci : {true, false}) {
    AmplifierConfig cfg = small_config(3, 8, 4);
    cfg.sci_enabled = sci;
    Rng rng(11);
    AmplifierModel model(cfg, rng);
    const Tensor x = oracle::random_tensor({4, 3, 8}, rng);
    const Tensor target = oracle::random_tensor({4, 3, 4}, rng);
    backward(mean(square(sub(model.forward(x), target))));
    for (Parameter* p : model.parameters()) {
      double peak = 0.0;
      for (double g : p->gradient()) peak = std::max(peak, std::abs(g));
      INFO(p->name);
      if (!sci && p->name.starts_with("sci.")) {
        CHECK(peak == 0.0);
      } else {
        CHECK(peak > 0.0);
      }
    }
  }
}

TEST_CASE("forward without restoration has no imaginary residue") {
  AmplifierConfig cfg = small_config(2, 8, 4);
  cfg.eat_enabled = false;
  Rng rng(12);
  AmplifierModel model(cfg, rng);
  CHECK(model.forward_diagnostics(oracle::random_tensor({2, 8}, rng)).imag_residue == 0.0);
}
