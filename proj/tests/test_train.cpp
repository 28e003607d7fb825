#include <doctest.h>

#include <cmath>
#include <numbers>

#include "amplifier/baselines.hpp"
#include "amplifier/train.hpp"
#include "oracles.hpp"

using namespace amp;

namespace {

SeriesFrame series(std::vector<double> values) {
  SeriesFrame f;
  f.channel_names = {"x"};
  for (std::size_t n = 0; n < values.size(); ++n) f.timestamps.push_back(std::to_string(n));
  f.values = std::move(values);
  return f;
}

// Sum of two sinusoids: every future value is an exact linear function of the past.
SeriesFrame tones(std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double x = static_cast<double>(t);
    v[t] = std::sin(2 * std::numbers::pi * x / 16.0) + 0.5 * std::cos(2 * std::numbers::pi * x / 5.0 + 0.3);
  }
  return series(std::move(v));
}

std::vector<std::unique_ptr<Forecaster>> zoo(std::size_t c, std::size_t l, std::size_t tau, Rng& rng) {
  std::vector<std::unique_ptr<Forecaster>> out;
  out.push_back(std::make_unique<LinearForecaster>(LinearShape{c, l, tau}, rng));
  out.push_back(std::make_unique<DLinearForecaster>(LinearShape{c, l, tau}, 5, rng));
  out.push_back(std::make_unique<EatWrapper>(std::make_unique<LinearForecaster>(LinearShape{c, l, tau}, rng), rng));
  for (bool sci : {true, false}) {
    for (bool eat : {true, false}) {
      AmplifierConfig cfg = AmplifierConfig::defaults(c, l, tau);
      cfg.sci_enabled = sci;
      cfg.eat_enabled = eat;
      out.push_back(std::make_unique<AmplifierModel>(cfg, rng));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("metric examples") {
  Rng rng(1);
  const Tensor a = oracle::random_tensor({2, 3, 4}, rng);
  CHECK(mse(a, a) == 0.0);
  CHECK(mae(a, a) == 0.0);
  const Tensor b = add_scalar(a, -2.0);
  CHECK(mse(a, b) == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(mae(a, b) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(mse_loss(a, b).item() == doctest::Approx(4.0).epsilon(1e-14));

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng r(seed);
    const auto p = oracle::random_values(37, r), t = oracle::random_values(37, r);
    double sq = 0.0, ab = 0.0;
    for (std::size_t i = 0; i < 37; ++i) {
      sq += (p[i] - t[i]) * (p[i] - t[i]);
      ab += std::abs(p[i] - t[i]);
    }
    CHECK(std::abs(mse(Tensor::from({37}, p), Tensor::from({37}, t)) - sq / 37) < 1e-12);
    CHECK(std::abs(mae(Tensor::from({37}, p), Tensor::from({37}, t)) - ab / 37) < 1e-12);
  }
  CHECK_THROWS_AS(mse(Tensor::zeros({3}), Tensor::zeros({4})), std::invalid_argument);
  CHECK_THROWS_AS(mae(Tensor::zeros({3}), Tensor::zeros({1, 3})), std::invalid_argument);
}

TEST_CASE("adam first step matches the closed form") {
  TrainConfig cfg;
  cfg.lr = 0.1;
  std::vector<double> value = {0.0};
  const std::vector<double> grad = {1.0};
  AdamMoments moments;
  adam_update(value, grad, moments, 1, cfg);
  // m_hat = v_hat = 1 after bias correction.
  CHECK(value[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(moments.m[0] == doctest::Approx(0.1));
  CHECK(moments.v[0] == doctest::Approx(0.001));
}

TEST_CASE("adam leaves zero-gradient parameters alone") {
  TrainConfig cfg;
  Parameter touched{"a", Tensor::from({3}, {1, 2, 3}, true)};
  Parameter untouched{"b", Tensor::from({2}, {4, 5}, true)};
  Parameter zeroed{"c", Tensor::from({2}, {6, 7}, true)};
  backward(add(sum(square(touched.value)), scale(sum(zeroed.value), 0.0)));
  Adam adam({&touched, &untouched, &zeroed}, cfg);
  adam.step();
  CHECK(adam.steps() == 1);
  for (std::size_t i = 0; i < 3; ++i) CHECK(touched.value.data()[i] != static_cast<double>(i + 1));
  CHECK(untouched.value.to_vector() == std::vector<double>{4, 5});
  CHECK(zeroed.value.to_vector() == std::vector<double>{6, 7});
}

TEST_CASE("adam groups with identical gradients move identically") {
  TrainConfig cfg;
  Parameter a{"a", Tensor::from({2}, {0.5, -1}, true)};
  Parameter b{"b", Tensor::from({2}, {0.5, -1}, true)};
  Adam adam({&a, &b}, cfg);
  for (int step = 0; step < 3; ++step) {
    a.value.zero_grad();
    b.value.zero_grad();
    backward(add(sum(square(a.value)), sum(square(b.value))));
    adam.step();
    CHECK(a.value.to_vector() == b.value.to_vector());
  }
}

TEST_CASE("train config validation and round trip") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.patience = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  TrainConfig custom;
  custom.lr = 3e-4;
  custom.batch_size = 7;
  custom.seed = 99;
  const TrainConfig back = TrainConfig::from_key_values(custom.to_key_values());
  CHECK(back.to_key_values() == custom.to_key_values());
}

TEST_CASE("one optimiser step changes exactly the parameters with gradient") {
  AmplifierConfig cfg = AmplifierConfig::defaults(2, 16, 8);
  cfg.sci_enabled = false;
  Rng rng(3);
  AmplifierModel model(cfg, rng);
  const Tensor x = oracle::random_tensor({4, 2, 16}, rng);
  const Tensor y = oracle::random_tensor({4, 2, 8}, rng);
  const ParameterState before = snapshot(model);
  Adam adam(model.parameters(), TrainConfig{});
  backward(mse_loss(model.forward(x), y));
  adam.step();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = params[i]->gradient();
    const auto now = params[i]->value.data();
    for (std::size_t j = 0; j < now.size(); ++j) {
      const bool has_grad = !g.empty() && g[j] != 0.0;
      INFO(params[i]->name << "[" << j << "]");
      CHECK((now[j] != before[i][j]) == has_grad);
    }
  }
}

TEST_CASE("fixed-batch loss decreases over the first five steps") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const Tensor x = oracle::random_tensor({8, 2, 16}, rng);
    const Tensor y = oracle::random_tensor({8, 2, 8}, rng);
    for (auto& model : zoo(2, 16, 8, rng)) {
      TrainConfig cfg;
      Adam adam(model->parameters(), cfg);
      double previous = INFINITY;
      for (int step = 0; step <= 5; ++step) {
        model->zero_grad();
        const Tensor loss = mse_loss(model->forward(x), y);
        INFO(model->config().at("kind") << " seed " << seed << " step " << step);
        CHECK(loss.item() < previous);
        previous = loss.item();
        backward(loss);
        adam.step();
      }
    }
  }
}

TEST_CASE("linear baseline fits a linear-synthesizable series") {
  const SeriesFrame f = tones(400);
  const WindowSet train_set(f.rows(0, 300), 16, 4);
  const WindowSet val_set(f.rows(280, 400), 16, 4);
  Rng rng(4);
  LinearForecaster model({1, 16, 4}, rng, false);
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.batch_size = 16;
  cfg.max_epochs = 80;
  cfg.patience = 80;
  const TrainResult r = train(model, train_set, val_set, cfg);
  CHECK(r.history.back().train_mse < 1e-3);
  CHECK(evaluate(model, train_set).mse < 1e-3);
}

TEST_CASE("early stopping with patience 1") {
  const SeriesFrame f = tones(200);
  const WindowSet train_set(f.rows(0, 150), 16, 4);
  const WindowSet val_set(f.rows(130, 200), 16, 4);
  TrainConfig cfg;
  cfg.patience = 1;
  cfg.max_epochs = 20;

  Rng rng(5);
  LinearForecaster flat({1, 16, 4}, rng);
  TrainHooks constant;
  constant.validator = [](const Forecaster&) { return 1.0; };
  const TrainResult r = train(flat, train_set, val_set, cfg, constant);
  CHECK(r.best_epoch == 1);
  CHECK(r.validations - r.best_epoch == 2);

  LinearForecaster dips({1, 16, 4}, rng);
  TrainHooks scripted;
  std::size_t calls = 0;
  const std::vector<double> scores = {5, 4, 3, 3.5, 3.2, 0.1};
  scripted.validator = [&](const Forecaster&) { return scores.at(calls++); };
  const TrainResult s = train(dips, train_set, val_set, cfg, scripted);
  CHECK(s.best_epoch == 3);
  CHECK(s.best_val == 3.0);
  CHECK(s.validations == 5);
  CHECK(s.history.size() == 5);
}

TEST_CASE("training returns the best state, not the last") {
  const SeriesFrame f = tones(200);
  const WindowSet train_set(f.rows(0, 150), 16, 4);
  const WindowSet val_set(f.rows(130, 200), 16, 4);
  TrainConfig cfg;
  cfg.patience = 2;
  cfg.max_epochs = 6;
  Rng rng(6);
  LinearForecaster model({1, 16, 4}, rng);
  ParameterState at_best;
  std::size_t calls = 0;
  const std::vector<double> scores = {3, 1, 2, 2, 2, 2};
  TrainHooks hooks;
  hooks.validator = [&](const Forecaster&) { return scores.at(calls++); };
  hooks.on_epoch = [&](std::size_t epoch, Forecaster& m) {
    if (epoch == 2) at_best = snapshot(m);
  };
  const TrainResult r = train(model, train_set, val_set, cfg, hooks);
  CHECK(r.best_epoch == 2);
  CHECK(r.history.size() == 5);
  CHECK(snapshot(model) == at_best);
}

TEST_CASE("training is deterministic under a seed") {
  const SeriesFrame f = tones(300);
  const WindowSet train_set(f.rows(0, 200), 16, 8);
  const WindowSet val_set(f.rows(184, 300), 16, 8);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  auto run = [&] {
    Rng rng(7);
    AmplifierModel model(AmplifierConfig::defaults(1, 16, 8), rng);
    const TrainResult r = train(model, train_set, val_set, cfg);
    std::vector<double> h;
    for (const auto& e : r.history) h.insert(h.end(), {e.train_mse, e.val_mse, e.val_mae});
    return h;
  };
  CHECK(run() == run());
}

TEST_CASE("evaluation does not mutate parameters") {
  const SeriesFrame f = tones(120);
  const WindowSet w(f, 16, 8);
  Rng rng(8);
  AmplifierModel model(AmplifierConfig::defaults(1, 16, 8), rng);
  const ParameterState before = snapshot(model);
  const Metrics m = evaluate(model, w, 7);
  CHECK(snapshot(model) == before);
  CHECK(m.n_windows == w.size());
  const Metrics big = evaluate(model, w, 1000);
  CHECK(std::abs(m.mse - big.mse) < 1e-12);
  CHECK(std::abs(m.mae - big.mae) < 1e-12);
}

TEST_CASE("non-finite loss aborts with coordinates") {
  std::vector<double> v = tones(100).values;
  v[40] = std::numeric_limits<double>::quiet_NaN();
  const SeriesFrame f = series(v);
  const WindowSet w(f, 16, 4);
  Rng rng(9);
  LinearForecaster model({1, 16, 4}, rng);
  TrainConfig cfg;
  cfg.batch_size = 200;
  try {
    train(model, w, w, cfg);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(e.epoch == 1);
    CHECK(e.batch == 0);
  }
}

TEST_CASE("snapshot and restore") {
  Rng rng(10);
  DLinearForecaster model({1, 8, 4}, 3, rng);
  const ParameterState s = snapshot(model);
  for (Parameter* p : model.parameters()) {
    for (double& x : p->value.mutable_data()) x = 0.0;
  }
  restore(model, s);
  CHECK(snapshot(model) == s);
  CHECK_THROWS(restore(model, ParameterState{{1.0}}));
}
