#pragma once

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Operations whose inputs
// require gradients produce nodes that remember their inputs and a backward
// rule; Tape linearises that graph from a scalar loss and replays it in
// reverse. Nothing here is thread-safe: a graph belongs to one thread.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace amp {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t numel() const;
  bool defined() const { return static_cast<bool>(node_); }

  std::span<const double> data() const;
  // Writable view; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  // Empty until a backward pass reaches this tensor.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, no history.
  Tensor detach() const;
  std::string_view op() const;

  // Identity of the underlying node, for tests and diagnostics.
  const void* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node);
  std::shared_ptr<detail::Node> node_;

  friend class Tape;
  friend Tensor record_op(std::string_view, Shape, std::vector<double>, std::vector<Tensor>,
                          std::function<void(std::span<const double>, std::span<std::span<double>>)>);
};

// Backward rule: receives the output gradient and one gradient span per input
// (empty when that input does not require gradients). Rules accumulate (+=).
using BackwardRule = std::function<void(std::span<const double> out_grad,
                                        std::span<std::span<double>> in_grads)>;

// Builds an operation result. The node joins the graph only when at least one
// input requires gradients; otherwise the result is a plain constant.
Tensor record_op(std::string_view name, Shape shape, std::vector<double> values,
                 std::vector<Tensor> inputs, BackwardRule rule);

// Reverse topological replay of the graph reachable from a scalar loss.
class Tape {
 public:
  explicit Tape(const Tensor& loss);

  // Nodes in forward (topological) order; backward visits them reversed.
  std::vector<std::string_view> op_order() const;
  std::size_t size() const { return order_.size(); }

  // Seeds d(loss)/d(loss) = 1 and accumulates into every reachable tensor.
  void backward();

 private:
  std::shared_ptr<detail::Node> root_;
  std::vector<std::shared_ptr<detail::Node>> order_;
};

// Convenience: Tape(loss).backward().
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Primitive operations. Shape errors throw std::invalid_argument naming the
// operation and the offending shapes.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor clamp_min(const Tensor& a, double floor);
Tensor leaky_relu(const Tensor& a, double slope = 0.01);

// [..., K] x [K, N] -> [..., N]. A rank-2 left operand is an ordinary product.
Tensor matmul(const Tensor& a, const Tensor& w);
// Adds a length-N vector to every row of [..., N].
Tensor add_bias(const Tensor& a, const Tensor& bias);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Reductions keep the reduced axis with size 1.
Tensor mean(const Tensor& a, std::size_t axis);
Tensor variance(const Tensor& a, std::size_t axis);  // population variance

// Repeats a size-1 axis `n` times.
Tensor broadcast_axis(const Tensor& a, std::size_t axis, std::size_t n);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor transpose_last2(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
// out[..., j] = a[..., index[j]]; backward scatters (adds) into repeated indices.
Tensor gather_last(const Tensor& a, std::span<const std::size_t> index);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---------------------------------------------------------------------------

struct Parameter {
  std::string name;
  Tensor value;

  std::span<const double> gradient() const { return value.grad(); }
};

// Anything that owns named parameters.
class Module {
 public:
  virtual ~Module() = default;
  virtual std::vector<Parameter*> parameters() = 0;
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.

struct GradCheckReport {
  double max_rel_error = 0.0;  // over entries whose absolute error exceeds abs_floor
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t entries = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
  bool passed = false;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double rel_tol = 1e-4;
  double abs_floor = 1e-7;
};

// Checks d f(x) / dx for scalar-valued f. Throws if f(x) is not finite.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           GradCheckOptions opts = {});

// Same check against every entry of every parameter, perturbing in place.
GradCheckReport grad_check_parameters(const std::function<Tensor()>& loss,
                                      std::span<Parameter* const> params,
                                      GradCheckOptions opts = {});

}  // namespace amp
