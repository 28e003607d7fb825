#include "amplifier/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <limits>
#include <unordered_map>
#include <unordered_set>

namespace amp {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardRule rule;

  bool is_leaf() const { return !rule; }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b,
                              std::string_view detail = {}) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << shape_str(a) << " and " << shape_str(b);
  if (!detail.empty()) os << " (" << detail << ")";
  throw std::invalid_argument(os.str());
}

[[noreturn]] void arg_error(std::string_view op, const Shape& a, std::string_view detail) {
  std::ostringstream os;
  os << op << ": invalid argument for shape " << shape_str(a) << ": " << detail;
  throw std::invalid_argument(os.str());
}

void require_same(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
}

// Splits a shape around `axis` into (outer, n, inner) for strided loops.
struct AxisView {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

void check_axis(std::string_view op, const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) arg_error(op, a.shape(), "axis out of range");
}

template <typename F>
Tensor unary(std::string_view name, const Tensor& a, F&& f, BackwardRule rule) {
  std::vector<double> out(a.numel());
  auto src = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(src[i]);
  return record_op(name, a.shape(), std::move(out), {a}, std::move(rule));
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : Tensor(Tensor::from({}, {0.0})) {}

Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), value);
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not hold " +
                                std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->data.size(); }
std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }
std::vector<double> Tensor::to_vector() const { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) arg_error("item", shape(), "tensor is not a scalar");
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) arg_error("at", shape(), "index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape()[axis]) arg_error("at", shape(), "index out of range");
    flat = flat * shape()[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}
void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }
std::string_view Tensor::op() const { return node_->op; }

Tensor record_op(std::string_view name, Shape shape, std::vector<double> values,
                 std::vector<Tensor> inputs, BackwardRule rule) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  auto& node = *out.node_;
  node.op = std::string(name);
  const bool tracked = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.requires_grad(); });
  if (tracked) {
    node.requires_grad = true;
    node.rule = std::move(rule);
    node.inputs.reserve(inputs.size());
    for (auto& t : inputs) node.inputs.push_back(t.node_);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape(const Tensor& loss) : root_(loss.node_) {
  if (loss.numel() != 1) arg_error("backward", loss.shape(), "loss must be a scalar");
  if (!root_->requires_grad) return;
  // Iterative post-order DFS; inputs are visited in argument order so the
  // linearisation is deterministic.
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root_.get(), 0);
  seen.insert(root_.get());
  std::vector<detail::Node*> post;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      post.push_back(node);
      stack.pop_back();
    }
  }
  // Keep nodes alive through shared ownership; post-order is topological.
  std::unordered_map<const detail::Node*, std::shared_ptr<detail::Node>> owner;
  owner.emplace(root_.get(), root_);
  for (detail::Node* n : post) {
    for (auto& in : n->inputs) owner.emplace(in.get(), in);
  }
  order_.reserve(post.size());
  for (detail::Node* n : post) order_.push_back(owner.at(n));
}

std::vector<std::string_view> Tape::op_order() const {
  std::vector<std::string_view> ops;
  ops.reserve(order_.size());
  for (const auto& n : order_) ops.emplace_back(n->op);
  return ops;
}

void Tape::backward() {
  if (order_.empty()) return;
  for (auto& n : order_) {
    if (n->is_leaf()) {
      n->ensure_grad();
    } else {
      n->grad.assign(n->data.size(), 0.0);
    }
  }
  root_->grad[0] += 1.0;
  std::vector<std::span<double>> in_grads;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node& n = **it;
    if (n.is_leaf()) continue;
    in_grads.clear();
    for (auto& in : n.inputs) {
      if (in->requires_grad) {
        in_grads.emplace_back(in->grad);
      } else {
        in_grads.emplace_back();
      }
    }
    n.rule(n.grad, in_grads);
  }
}

void backward(const Tensor& loss) { Tape(loss).backward(); }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return record_op("add", a.shape(), std::move(out), {a, b},
                   [](std::span<const double> g, std::span<std::span<double>> in) {
                     for (auto& gi : in) {
                       for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
                     }
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return record_op("sub", a.shape(), std::move(out), {a, b},
                   [](std::span<const double> g, std::span<std::span<double>> in) {
                     for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += g[i];
                     for (std::size_t i = 0; i < in[1].size(); ++i) in[1][i] -= g[i];
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return record_op("mul", a.shape(), std::move(out), {a, b},
                   [a, b](std::span<const double> g, std::span<std::span<double>> in) {
                     auto x = a.data(), y = b.data();
                     for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += g[i] * y[i];
                     for (std::size_t i = 0; i < in[1].size(); ++i) in[1][i] += g[i] * x[i];
                   });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same("div", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / y[i];
  return record_op("div", a.shape(), std::move(out), {a, b},
                   [a, b](std::span<const double> g, std::span<std::span<double>> in) {
                     auto x = a.data(), y = b.data();
                     for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += g[i] / y[i];
                     for (std::size_t i = 0; i < in[1].size(); ++i) {
                       in[1][i] -= g[i] * x[i] / (y[i] * y[i]);
                     }
                   });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double v) { return v * factor; },
      [factor](std::span<const double> g, std::span<std::span<double>> in) {
        for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += factor * g[i];
      });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      "add_scalar", a, [value](double v) { return v + value; },
      [](std::span<const double> g, std::span<std::span<double>> in) {
        for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += g[i];
      });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](double v) { return v * v; },
      [a](std::span<const double> g, std::span<std::span<double>> in) {
        auto x = a.data();
        for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += 2.0 * x[i] * g[i];
      });
}

Tensor sqrt(const Tensor& a) {
  auto x = a.data();
  for (double v : x) {
    if (v < 0.0) arg_error("sqrt", a.shape(), "negative input");
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(x[i]);
  std::vector<double> root = out;
  return record_op("sqrt", a.shape(), std::move(out), {a},
                   [root = std::move(root)](std::span<const double> g,
                                            std::span<std::span<double>> in) {
                     for (std::size_t i = 0; i < in[0].size(); ++i) {
                       if (root[i] > 0.0) in[0][i] += 0.5 * g[i] / root[i];
                     }
                   });
}

Tensor clamp_min(const Tensor& a, double floor) {
  return unary(
      "clamp_min", a, [floor](double v) { return v > floor ? v : floor; },
      [a, floor](std::span<const double> g, std::span<std::span<double>> in) {
        auto x = a.data();
        for (std::size_t i = 0; i < in[0].size(); ++i) {
          if (x[i] > floor) in[0][i] += g[i];
        }
      });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary(
      "leaky_relu", a, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [a, slope](std::span<const double> g, std::span<std::span<double>> in) {
        auto x = a.data();
        for (std::size_t i = 0; i < in[0].size(); ++i) {
          in[0][i] += x[i] > 0.0 ? g[i] : slope * g[i];
        }
      });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& w) {
  if (a.rank() < 1 || w.rank() != 2 || a.shape().back() != w.dim(0)) {
    shape_error("matmul", a.shape(), w.shape(), "expected [...,K] x [K,N]");
  }
  const std::size_t k = w.dim(0);
  const std::size_t n = w.dim(1);
  const std::size_t rows = k == 0 ? 0 : a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<double> out(rows * n);
  {
    ConstMapMat am(a.data().data(), rows, k);
    ConstMapMat wm(w.data().data(), k, n);
    MapMat om(out.data(), rows, n);
    om.noalias() = am * wm;
  }
  return record_op("matmul", std::move(out_shape), std::move(out), {a, w},
                   [a, w, rows, k, n](std::span<const double> g, std::span<std::span<double>> in) {
                     ConstMapMat gm(g.data(), rows, n);
                     if (!in[0].empty()) {
                       MapMat ga(in[0].data(), rows, k);
                       ConstMapMat wm(w.data().data(), k, n);
                       ga.noalias() += gm * wm.transpose();
                     }
                     if (!in[1].empty()) {
                       MapMat gw(in[1].data(), k, n);
                       ConstMapMat am(a.data().data(), rows, k);
                       gw.noalias() += am.transpose() * gm;
                     }
                   });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (a.rank() < 1 || bias.rank() != 1 || a.shape().back() != bias.dim(0)) {
    shape_error("add_bias", a.shape(), bias.shape(), "expected [...,N] + [N]");
  }
  const std::size_t n = bias.dim(0);
  std::vector<double> out(a.data().begin(), a.data().end());
  auto b = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
  return record_op("add_bias", a.shape(), std::move(out), {a, bias},
                   [n](std::span<const double> g, std::span<std::span<double>> in) {
                     for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += g[i];
                     if (!in[1].empty()) {
                       for (std::size_t i = 0; i < g.size(); ++i) in[1][i % n] += g[i];
                     }
                   });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return record_op("sum", {}, {total}, {a},
                   [](std::span<const double> g, std::span<std::span<double>> in) {
                     for (double& v : in[0]) v += g[0];
                   });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) arg_error("mean", a.shape(), "empty tensor");
  const double inv = 1.0 / static_cast<double>(a.numel());
  double total = 0.0;
  for (double v : a.data()) total += v;
  return record_op("mean", {}, {total * inv}, {a},
                   [inv](std::span<const double> g, std::span<std::span<double>> in) {
                     for (double& v : in[0]) v += g[0] * inv;
                   });
}

Tensor mean(const Tensor& a, std::size_t axis) {
  check_axis("mean", a, axis);
  const AxisView v = axis_view(a.shape(), axis);
  if (v.n == 0) arg_error("mean", a.shape(), "empty axis");
  Shape out_shape = a.shape();
  out_shape[axis] = 1;
  std::vector<double> out(v.outer * v.inner, 0.0);
  auto x = a.data();
  const double inv = 1.0 / static_cast<double>(v.n);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t j = 0; j < v.n; ++j) {
      const double* row = x.data() + (o * v.n + j) * v.inner;
      double* dst = out.data() + o * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) dst[i] += row[i];
    }
  }
  for (double& m : out) m *= inv;
  return record_op("mean_axis", std::move(out_shape), std::move(out), {a},
                   [v, inv](std::span<const double> g, std::span<std::span<double>> in) {
                     for (std::size_t o = 0; o < v.outer; ++o) {
                       for (std::size_t j = 0; j < v.n; ++j) {
                         double* dst = in[0].data() + (o * v.n + j) * v.inner;
                         const double* src = g.data() + o * v.inner;
                         for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i] * inv;
                       }
                     }
                   });
}

Tensor variance(const Tensor& a, std::size_t axis) {
  check_axis("variance", a, axis);
  const AxisView v = axis_view(a.shape(), axis);
  if (v.n == 0) arg_error("variance", a.shape(), "empty axis");
  Shape out_shape = a.shape();
  out_shape[axis] = 1;
  auto x = a.data();
  const double inv = 1.0 / static_cast<double>(v.n);
  std::vector<double> mu(v.outer * v.inner, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t j = 0; j < v.n; ++j) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        mu[o * v.inner + i] += x[(o * v.n + j) * v.inner + i];
      }
    }
  }
  for (double& m : mu) m *= inv;
  std::vector<double> out(mu.size(), 0.0);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t j = 0; j < v.n; ++j) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const double d = x[(o * v.n + j) * v.inner + i] - mu[o * v.inner + i];
        out[o * v.inner + i] += d * d;
      }
    }
  }
  for (double& s : out) s *= inv;
  return record_op("variance_axis", std::move(out_shape), std::move(out), {a},
                   [a, v, inv, mu = std::move(mu)](std::span<const double> g,
                                                   std::span<std::span<double>> in) {
                     auto x = a.data();
                     for (std::size_t o = 0; o < v.outer; ++o) {
                       for (std::size_t j = 0; j < v.n; ++j) {
                         for (std::size_t i = 0; i < v.inner; ++i) {
                           const std::size_t idx = (o * v.n + j) * v.inner + i;
                           const std::size_t r = o * v.inner + i;
                           in[0][idx] += 2.0 * inv * (x[idx] - mu[r]) * g[r];
                         }
                       }
                     }
                   });
}

// ---------------------------------------------------------------------------
// Layout

Tensor broadcast_axis(const Tensor& a, std::size_t axis, std::size_t n) {
  check_axis("broadcast_axis", a, axis);
  if (a.dim(axis) != 1) arg_error("broadcast_axis", a.shape(), "axis must have size 1");
  const AxisView v = axis_view(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = n;
  std::vector<double> out(v.outer * n * v.inner);
  auto x = a.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t j = 0; j < n; ++j) {
      std::copy_n(x.data() + o * v.inner, v.inner, out.data() + (o * n + j) * v.inner);
    }
  }
  return record_op("broadcast_axis", std::move(out_shape), std::move(out), {a},
                   [v, n](std::span<const double> g, std::span<std::span<double>> in) {
                     for (std::size_t o = 0; o < v.outer; ++o) {
                       for (std::size_t j = 0; j < n; ++j) {
                         const double* src = g.data() + (o * n + j) * v.inner;
                         double* dst = in[0].data() + o * v.inner;
                         for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
                       }
                     }
                   });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  check_axis("slice", a, axis);
  if (begin > end || end > a.dim(axis)) arg_error("slice", a.shape(), "range out of bounds");
  const AxisView v = axis_view(a.shape(), axis);
  const std::size_t m = end - begin;
  Shape out_shape = a.shape();
  out_shape[axis] = m;
  std::vector<double> out(v.outer * m * v.inner);
  auto x = a.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(x.data() + (o * v.n + begin) * v.inner, m * v.inner,
                out.data() + o * m * v.inner);
  }
  return record_op("slice", std::move(out_shape), std::move(out), {a},
                   [v, m, begin](std::span<const double> g, std::span<std::span<double>> in) {
                     for (std::size_t o = 0; o < v.outer; ++o) {
                       const double* src = g.data() + o * m * v.inner;
                       double* dst = in[0].data() + (o * v.n + begin) * v.inner;
                       for (std::size_t i = 0; i < m * v.inner; ++i) dst[i] += src[i];
                     }
                   });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Tensor& first = parts.front();
  check_axis("concat", first, axis);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.rank()) shape_error("concat", first.shape(), p.shape());
    for (std::size_t d = 0; d < p.rank(); ++d) {
      if (d != axis && p.dim(d) != first.dim(d)) shape_error("concat", first.shape(), p.shape());
    }
    total += p.dim(axis);
  }
  Shape out_shape = first.shape();
  out_shape[axis] = total;
  const AxisView ov = axis_view(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t m = p.dim(axis);
    auto x = p.data();
    for (std::size_t o = 0; o < ov.outer; ++o) {
      std::copy_n(x.data() + o * m * ov.inner, m * ov.inner,
                  out.data() + (o * total + offset) * ov.inner);
    }
    offset += m;
  }
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) sizes.push_back(p.dim(axis));
  return record_op("concat", std::move(out_shape), std::move(out), parts,
                   [ov, total, offsets = std::move(offsets), sizes = std::move(sizes)](
                       std::span<const double> g, std::span<std::span<double>> in) {
                     for (std::size_t p = 0; p < in.size(); ++p) {
                       if (in[p].empty()) continue;
                       const std::size_t m = sizes[p];
                       for (std::size_t o = 0; o < ov.outer; ++o) {
                         const double* src = g.data() + (o * total + offsets[p]) * ov.inner;
                         double* dst = in[p].data() + o * m * ov.inner;
                         for (std::size_t i = 0; i < m * ov.inner; ++i) dst[i] += src[i];
                       }
                     }
                   });
}

Tensor transpose_last2(const Tensor& a) {
  if (a.rank() < 2) arg_error("transpose_last2", a.shape(), "rank must be >= 2");
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t n = a.dim(a.rank() - 1);
  const std::size_t batch = m * n == 0 ? 0 : a.numel() / (m * n);
  Shape out_shape = a.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t b = 0; b < batch; ++b) {
    ConstMapMat src(x.data() + b * m * n, m, n);
    MapMat dst(out.data() + b * m * n, n, m);
    dst = src.transpose();
  }
  return record_op("transpose_last2", std::move(out_shape), std::move(out), {a},
                   [batch, m, n](std::span<const double> g, std::span<std::span<double>> in) {
                     for (std::size_t b = 0; b < batch; ++b) {
                       ConstMapMat src(g.data() + b * m * n, n, m);
                       MapMat dst(in[0].data() + b * m * n, m, n);
                       dst += src.transpose();
                     }
                   });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
  return record_op("reshape", std::move(shape), a.to_vector(), {a},
                   [](std::span<const double> g, std::span<std::span<double>> in) {
                     for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += g[i];
                   });
}

Tensor gather_last(const Tensor& a, std::span<const std::size_t> index) {
  if (a.rank() < 1) arg_error("gather_last", a.shape(), "rank must be >= 1");
  const std::size_t k = a.shape().back();
  for (std::size_t i : index) {
    if (i >= k) arg_error("gather_last", a.shape(), "index out of range");
  }
  const std::size_t j = index.size();
  const std::size_t rows = k == 0 ? 0 : a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = j;
  std::vector<double> out(rows * j);
  auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < j; ++c) out[r * j + c] = x[r * k + index[c]];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return record_op("gather_last", std::move(out_shape), std::move(out), {a},
                   [rows, k, idx = std::move(idx)](std::span<const double> g,
                                                   std::span<std::span<double>> in) {
                     const std::size_t j = idx.size();
                     for (std::size_t r = 0; r < rows; ++r) {
                       for (std::size_t c = 0; c < j; ++c) in[0][r * k + idx[c]] += g[r * j + c];
                     }
                   });
}

// ---------------------------------------------------------------------------
// Module

std::vector<const Parameter*> Module::parameters() const {
  auto params = const_cast<Module*>(this)->parameters();
  return {params.begin(), params.end()};
}

std::size_t Module::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.numel();
  return n;
}

void Module::zero_grad() {
  for (Parameter* p : parameters()) p->value.mutable_grad();
  for (Parameter* p : parameters()) p->value.zero_grad();
}

// ---------------------------------------------------------------------------
// Gradient checking

namespace {

void compare(GradCheckReport& report, const GradCheckOptions& opts) {
  report.entries = report.analytic.size();
  report.passed = true;
  for (std::size_t i = 0; i < report.entries; ++i) {
    const double a = report.analytic[i];
    const double n = report.numeric[i];
    const double abs_err = std::abs(a - n);
    if (!std::isfinite(abs_err)) {
      report.passed = false;
      report.max_rel_error = std::numeric_limits<double>::infinity();
      report.worst_index = i;
      continue;
    }
    if (abs_err > report.max_abs_error) report.max_abs_error = abs_err;
    if (abs_err <= opts.abs_floor) continue;
    const double rel = abs_err / std::max(std::abs(a), std::abs(n));
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  if (report.max_rel_error >= opts.rel_tol) report.passed = false;
}

double scalar_value(const Tensor& y, std::string_view who) {
  if (y.numel() != 1) throw std::invalid_argument(std::string(who) + ": f must return a scalar");
  const double v = y.item();
  if (!std::isfinite(v)) throw std::domain_error(std::string(who) + ": f(x) is not finite");
  return v;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           GradCheckOptions opts) {
  if (!(opts.eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  GradCheckReport report;
  Tensor leaf = Tensor::from(x.shape(), x.to_vector(), true);
  Tensor y = f(leaf);
  scalar_value(y, "grad_check");
  backward(y);
  report.analytic.assign(x.numel(), 0.0);
  if (!leaf.grad().empty()) {
    std::copy(leaf.grad().begin(), leaf.grad().end(), report.analytic.begin());
  }
  report.numeric.resize(x.numel());
  std::vector<double> probe = x.to_vector();
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + opts.eps;
    const double up = scalar_value(f(Tensor::from(x.shape(), probe)), "grad_check");
    probe[i] = orig - opts.eps;
    const double down = scalar_value(f(Tensor::from(x.shape(), probe)), "grad_check");
    probe[i] = orig;
    report.numeric[i] = (up - down) / (2.0 * opts.eps);
  }
  compare(report, opts);
  return report;
}

GradCheckReport grad_check_parameters(const std::function<Tensor()>& loss,
                                      std::span<Parameter* const> params,
                                      GradCheckOptions opts) {
  if (!(opts.eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  GradCheckReport report;
  for (Parameter* p : params) {
    p->value.mutable_grad();
    p->value.zero_grad();
  }
  Tensor y = loss();
  scalar_value(y, "grad_check_parameters");
  backward(y);
  for (Parameter* p : params) {
    auto g = p->value.grad();
    report.analytic.insert(report.analytic.end(), g.begin(), g.end());
  }
  for (Parameter* p : params) {
    auto values = p->value.mutable_data();
    for (double& v : values) {
      const double orig = v;
      v = orig + opts.eps;
      const double up = scalar_value(loss(), "grad_check_parameters");
      v = orig - opts.eps;
      const double down = scalar_value(loss(), "grad_check_parameters");
      v = orig;
      report.numeric.push_back((up - down) / (2.0 * opts.eps));
    }
  }
  compare(report, opts);
  return report;
}

}  // namespace amp
