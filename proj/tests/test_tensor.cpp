#include <doctest.h>

#include <functional>

#include "amplifier/tensor.hpp"
#include "oracles.hpp"

using namespace amp;

namespace {

std::vector<double> values(const Tensor& t) { return t.to_vector(); }

// Weighted sum so every output entry gets a distinct upstream gradient.
Tensor weighted(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed * 7919 + 1);
  return sum(mul(y, oracle::random_tensor(y.shape(), rng)));
}

}  // namespace

TEST_CASE("elementwise and matrix examples") {
  CHECK(values(add(Tensor::from({2}, {1, 2}), Tensor::from({2}, {3, 4}))) == std::vector<double>{4, 6});
  CHECK(values(leaky_relu(Tensor::from({2}, {-1, 2}), 0.1)) == std::vector<double>{-0.1, 2});

  Rng rng(3);
  const Tensor a = oracle::random_tensor({3, 5}, rng);
  const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(values(matmul(eye, a)) == values(a));
}

TEST_CASE("default leaky slope is 0.01") {
  CHECK(leaky_relu(Tensor::from({1}, {-2.0})).item() == doctest::Approx(-0.02).epsilon(1e-15));
}

TEST_CASE("shape mismatch names the operation and shapes") {
  try {
    add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}));
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), std::invalid_argument);
  CHECK_THROWS_AS(concat({Tensor::zeros({2, 3}), Tensor::zeros({3, 3})}, 1), std::invalid_argument);
}

TEST_CASE("gradient of a linear form is the fixed operand") {
  const Tensor x = Tensor::from({3}, {0.5, -2.0, 4.0});
  const Tensor w = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
  backward(sum(mul(w, x)));
  CHECK(std::vector<double>(w.grad().begin(), w.grad().end()) == values(x));
}

TEST_CASE("scalar chain rule") {
  const double x = 1.5, y = 0.25, w0 = -0.75;
  const Tensor w = Tensor::from({1}, {w0}, true);
  const Tensor loss = mean(square(sub(scale(w, x), Tensor::from({1}, {y}))));
  backward(loss);
  CHECK(w.grad()[0] == doctest::Approx(2 * x * (w0 * x - y)).epsilon(1e-15));
}

TEST_CASE("non-scalar loss is rejected") {
  const Tensor w = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(scale(w, 2.0)), std::invalid_argument);
}

TEST_CASE("tape order is topological and backward replays it reversed") {
  const Tensor x = Tensor::from({2}, {1, 2}, true);
  const Tensor y = square(x);
  const Tensor loss = sum(add(y, scale(x, 3.0)));
  Tape tape(loss);
  const auto order = tape.op_order();
  REQUIRE(order.size() == 5);
  CHECK(order.front() == "leaf");
  CHECK(order.back() == "sum");
  auto pos = [&](std::string_view op) { return std::find(order.begin(), order.end(), op) - order.begin(); };
  CHECK(pos("add") > pos("square"));
  CHECK(pos("add") > pos("scale"));
  tape.backward();
  CHECK(x.grad()[0] == doctest::Approx(2 * 1 + 3));
  CHECK(x.grad()[1] == doctest::Approx(2 * 2 + 3));
}

TEST_CASE("a tensor used k times receives k contributions") {
  const Tensor x = Tensor::from({1}, {2.0}, true);
  backward(sum(add(add(x, x), mul(x, x))));
  CHECK(x.grad()[0] == doctest::Approx(2 + 2 * 2.0));
}

TEST_CASE("grad_check examples") {
  const auto sq = grad_check([](const Tensor& x) { return sum(square(x)); }, Tensor::from({3}, {1, 2, 3}));
  CHECK(sq.analytic == std::vector<double>{2, 4, 6});
  CHECK(sq.max_rel_error < 1e-8);
  CHECK(sq.passed);

  const auto constant = grad_check([](const Tensor&) { return Tensor::scalar(4.0); }, Tensor::from({2}, {1, 2}));
  CHECK(constant.analytic == std::vector<double>{0, 0});
  CHECK(constant.numeric == std::vector<double>{0, 0});

  CHECK_THROWS_AS(grad_check([](const Tensor& x) { return sum(div(x, Tensor::zeros({1}))); },
                             Tensor::from({1}, {1.0})),
                  std::domain_error);
  CHECK_THROWS_AS(grad_check([](const Tensor& x) { return sum(x); }, Tensor::from({1}, {1.0}), {.eps = 0.0}),
                  std::invalid_argument);
}

TEST_CASE("every primitive matches central differences on 20 seeds") {
  using Fn = std::function<Tensor(const Tensor&)>;
  struct Case {
    const char* name;
    Shape shape;
    Fn f;
    double lo = -1.0, hi = 1.0;
  };
  Rng wrng(99);
  const Tensor other = oracle::random_tensor({3, 4}, wrng);
  const Tensor w = oracle::random_tensor({4, 5}, wrng);
  const Tensor bias = oracle::random_tensor({4}, wrng);
  const Tensor positive = Tensor::from({3, 4}, oracle::random_values(12, wrng, 0.5, 2.0));
  const std::vector<std::size_t> index = {3, 0, 0, 2, 1};
  const std::vector<Case> cases = {
      {"add", {3, 4}, [&](const Tensor& x) { return add(x, other); }},
      {"sub", {3, 4}, [&](const Tensor& x) { return sub(other, x); }},
      {"mul", {3, 4}, [&](const Tensor& x) { return mul(x, x); }},
      {"div", {3, 4}, [&](const Tensor& x) { return div(x, positive); }},
      {"div_denominator", {3, 4}, [&](const Tensor& x) { return div(other, x); }, 0.5, 2.0},
      {"scale", {3, 4}, [](const Tensor& x) { return scale(x, -1.7); }},
      {"add_scalar", {3, 4}, [](const Tensor& x) { return add_scalar(x, 0.3); }},
      {"square", {3, 4}, [](const Tensor& x) { return square(x); }},
      {"sqrt", {3, 4}, [](const Tensor& x) { return sqrt(x); }, 0.5, 2.0},
      {"clamp_min", {3, 4}, [](const Tensor& x) { return clamp_min(x, 0.0); }, 0.1, 1.0},
      {"leaky_relu", {3, 4}, [](const Tensor& x) { return leaky_relu(x, 0.1); }},
      {"matmul", {2, 3, 4}, [&](const Tensor& x) { return matmul(x, w); }},
      {"matmul_weight", {4, 5}, [&](const Tensor& x) { return matmul(other, x); }},
      {"add_bias", {3, 4}, [&](const Tensor& x) { return add_bias(x, bias); }},
      {"add_bias_vector", {4}, [&](const Tensor& x) { return add_bias(other, x); }},
      {"sum", {3, 4}, [](const Tensor& x) { return sum(x); }},
      {"mean", {3, 4}, [](const Tensor& x) { return mean(x); }},
      {"mean_axis0", {3, 4}, [](const Tensor& x) { return mean(x, 0); }},
      {"mean_axis1", {2, 3, 4}, [](const Tensor& x) { return mean(x, 2); }},
      {"variance_axis", {2, 3, 4}, [](const Tensor& x) { return variance(x, 2); }},
      {"broadcast_axis", {3, 1}, [](const Tensor& x) { return broadcast_axis(x, 1, 5); }},
      {"slice", {3, 4}, [](const Tensor& x) { return slice(x, 1, 1, 3); }},
      {"concat", {3, 4}, [&](const Tensor& x) { return concat({x, other, x}, 1); }},
      {"transpose_last2", {2, 3, 4}, [](const Tensor& x) { return transpose_last2(x); }},
      {"reshape", {3, 4}, [](const Tensor& x) { return reshape(x, {2, 6}); }},
      {"gather_last", {3, 4}, [&](const Tensor& x) { return gather_last(x, index); }},
  };
  for (const Case& c : cases) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      Rng rng(seed);
      // Inputs for leaky_relu are kept away from the kink.
      std::vector<double> v = oracle::random_values(shape_numel(c.shape), rng, c.lo, c.hi);
      if (std::string(c.name) == "leaky_relu") {
        for (double& x : v) x += (x >= 0 ? 0.05 : -0.05);
      }
      const auto report = grad_check([&](const Tensor& x) { return weighted(c.f(x), seed); },
                                     Tensor::from(c.shape, v));
      INFO(c.name << " seed " << seed << " rel " << report.max_rel_error);
      CHECK(report.passed);
    }
  }
}

TEST_CASE("backward is deterministic") {
  Rng rng(5);
  const Tensor x0 = oracle::random_tensor({4, 6}, rng);
  const Tensor w0 = oracle::random_tensor({6, 3}, rng);
  auto grads = [&]() {
    const Tensor w = Tensor::from(w0.shape(), w0.to_vector(), true);
    backward(mean(square(leaky_relu(matmul(x0, w)))));
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  CHECK(grads() == grads());
}

// Exact when x has one consumer inside f; with several consumers the two
// copies' contributions interleave and only agree to rounding.
TEST_CASE("gradient of f(x) + f(x) is exactly twice that of f(x)") {
  Rng rng(8);
  const std::vector<double> v = oracle::random_values(10, rng);
  const Tensor c = oracle::random_tensor({10}, rng);
  auto f = [&](const Tensor& x) { return mean(square(mul(leaky_relu(x, 0.2), c))); };
  const Tensor a = Tensor::from({10}, v, true);
  backward(f(a));
  const Tensor b = Tensor::from({10}, v, true);
  backward(add(f(b), f(b)));
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(b.grad()[i] == 2.0 * a.grad()[i]);
}

TEST_CASE("leaf gradients accumulate across backward calls until zeroed") {
  Parameter p{"p", Tensor::from({2}, {1, 2}, true)};
  backward(sum(p.value));
  backward(sum(p.value));
  CHECK(p.gradient()[0] == 2.0);
  p.value.zero_grad();
  CHECK(p.gradient()[0] == 0.0);
}
