#include "elip/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "elip/error.hpp"

namespace elip {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

namespace {

thread_local bool t_grad_enabled = true;

void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

void check_shape(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

const Node& node_of(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
  return *t.node();
}

// Creates the output node. The closure is kept only when a gradient can flow.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<NodePtr> inputs, std::function<void(Node&)> backward_fn) {
  check_finite(op, value);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
  int r = static_cast<int>(rank);
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError(std::string(op) + ": axis out of range");
  return static_cast<std::size_t>(a);
}

// ---- broadcasting ----------------------------------------------------------

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

std::vector<std::size_t> strides_in(const Shape& own, std::size_t out_rank, const Shape& out) {
  std::vector<std::size_t> s(out_rank, 0);
  std::size_t offset = out_rank - own.size();
  std::size_t acc = 1;
  for (std::size_t i = own.size(); i-- > 0;) {
    s[i + offset] = (own[i] == 1 && out[i + offset] != 1) ? 0 : acc;
    acc *= own[i];
  }
  return s;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  std::size_t r = std::max(a.size(), b.size());
  p.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da == db || db == 1) {
      p.out[i] = da;
    } else if (da == 1) {
      p.out[i] = db;
    } else {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    }
  }
  p.stride_a = strides_in(a, r, p.out);
  p.stride_b = strides_in(b, r, p.out);
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <class F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  std::size_t n = shape_numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  std::size_t r = p.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      ia += p.stride_a[ax];
      ib += p.stride_b[ax];
      if (idx[ax] < p.out[ax]) break;
      ia -= p.stride_a[ax] * idx[ax];
      ib -= p.stride_b[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

template <class Fwd, class Da, class Db>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
  const Node& na = node_of(a, op);
  const Node& nb = node_of(b, op);
  Broadcast plan = plan_broadcast(na.shape, nb.shape, op);
  std::vector<double> out(shape_numel(plan.out));
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    out[o] = fwd(na.value[ia], nb.value[ib]);
  });
  Shape out_shape = plan.out;
  return make_result(op, std::move(out_shape), std::move(out), {a.node(), b.node()},
                     [plan, da, db](Node& self) {
                       Node& x = *self.inputs[0];
                       Node& y = *self.inputs[1];
                       if (x.requires_grad) x.ensure_grad();
                       if (y.requires_grad) y.ensure_grad();
                       for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                         double g = self.grad[o];
                         if (x.requires_grad) x.grad[ia] += g * da(x.value[ia], y.value[ib]);
                         if (y.requires_grad) y.grad[ib] += g * db(x.value[ia], y.value[ib]);
                       });
                     });
}

template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  const Node& nx = node_of(x, op);
  std::vector<double> out(nx.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(nx.value[i]);
  return make_result(op, nx.shape, std::move(out), {x.node()}, [deriv](Node& self) {
    Node& in = *self.inputs[0];
    in.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      in.grad[i] += self.grad[i] * deriv(in.value[i], self.value[i]);
    }
  });
}

}  // namespace

// ---- Tensor ------------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " cannot hold " +
                     std::to_string(values.size()) + " values");
  }
  check_finite("constructor", values);
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_of(*this, "shape").shape; }

std::size_t Tensor::size(int axis) const {
  const Shape& s = shape();
  return s[norm_axis(axis, s.size(), "size")];
}

std::size_t Tensor::numel() const { return node_of(*this, "numel").value.size(); }

std::span<const double> Tensor::data() const { return node_of(*this, "data").value; }

std::span<double> Tensor::mutable_data() {
  if (!node_) throw ShapeError("mutable_data: undefined tensor");
  return node_->value;
}

double Tensor::item() const {
  const Node& n = node_of(*this, "item");
  if (n.value.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(n.shape));
  return n.value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_) throw ShapeError("set_requires_grad: undefined tensor");
  if (!is_leaf()) throw Error("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = on;
}

bool Tensor::is_leaf() const { return node_ && !node_->backward; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  const Node& n = node_of(*this, "detach");
  return Tensor(n.shape, n.value, false);
}

Tensor Tensor::clone() const {
  const Node& n = node_of(*this, "clone");
  return Tensor(n.shape, n.value, n.requires_grad);
}

// ---- engine ------------------------------------------------------------------

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw Error("backward: undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) throw Error("backward: loss is not attached to any tracked tensor");

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Node& root = *loss.node();
  root.ensure_grad();
  root.grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward) continue;
    if (node->grad.empty()) continue;
    node->backward(*node);
    // Interior gradients are consumed; only leaves accumulate.
    node->grad.clear();
  }
}

// ---- elementwise ---------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      "add_scalar", x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor gelu(const Tensor& x) {
  static const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) {
        double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor clamp_min(const Tensor& x, double floor) {
  return unary(
      "clamp_min", x, [floor](double v) { return v > floor ? v : floor; },
      [floor](double v, double) { return v > floor ? 1.0 : 0.0; });
}

// ---- linear algebra -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Node& na = node_of(a, "matmul");
  const Node& nb = node_of(b, "matmul");
  if (na.shape.size() < 2 || nb.shape.size() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(na.shape) + " and " +
                     shape_str(nb.shape));
  }
  const std::size_t k = na.shape.back();
  const std::size_t n = na.shape[na.shape.size() - 2];
  const std::size_t m = nb.shape.back();
  if (nb.shape[nb.shape.size() - 2] != k) {
    throw ShapeError("matmul inner extents differ: " + shape_str(na.shape) + " x " +
                     shape_str(nb.shape));
  }
  Shape out_shape(na.shape.begin(), na.shape.end() - 1);
  out_shape.push_back(m);

  if (nb.shape.size() == 2) {
    // Shared right operand: flatten all leading axes of a into rows.
    const std::size_t rows = na.value.size() / k;
    std::vector<double> out(rows * m);
    Map(out.data(), rows, m).noalias() = MapC(na.value.data(), rows, k) * MapC(nb.value.data(), k, m);
    return make_result("matmul", std::move(out_shape), std::move(out), {a.node(), b.node()},
                       [rows, k, m](Node& self) {
                         Node& x = *self.inputs[0];
                         Node& w = *self.inputs[1];
                         MapC g(self.grad.data(), rows, m);
                         if (x.requires_grad) {
                           x.ensure_grad();
                           Map(x.grad.data(), rows, k).noalias() += g * MapC(w.value.data(), k, m).transpose();
                         }
                         if (w.requires_grad) {
                           w.ensure_grad();
                           Map(w.grad.data(), k, m).noalias() += MapC(x.value.data(), rows, k).transpose() * g;
                         }
                       });
  }

  if (nb.shape.size() != na.shape.size() ||
      !std::equal(na.shape.begin(), na.shape.end() - 2, nb.shape.begin())) {
    throw ShapeError("batched matmul needs equal leading extents: " + shape_str(na.shape) + " x " +
                     shape_str(nb.shape));
  }
  const std::size_t batch = na.value.size() / (n * k);
  std::vector<double> out(batch * n * m);
  for (std::size_t i = 0; i < batch; ++i) {
    Map(out.data() + i * n * m, n, m).noalias() =
        MapC(na.value.data() + i * n * k, n, k) * MapC(nb.value.data() + i * k * m, k, m);
  }
  return make_result("bmm", std::move(out_shape), std::move(out), {a.node(), b.node()},
                     [batch, n, k, m](Node& self) {
                       Node& x = *self.inputs[0];
                       Node& y = *self.inputs[1];
                       if (x.requires_grad) x.ensure_grad();
                       if (y.requires_grad) y.ensure_grad();
                       for (std::size_t i = 0; i < batch; ++i) {
                         MapC g(self.grad.data() + i * n * m, n, m);
                         if (x.requires_grad) {
                           Map(x.grad.data() + i * n * k, n, k).noalias() +=
                               g * MapC(y.value.data() + i * k * m, k, m).transpose();
                         }
                         if (y.requires_grad) {
                           Map(y.grad.data() + i * k * m, k, m).noalias() +=
                               MapC(x.value.data() + i * n * k, n, k).transpose() * g;
                         }
                       }
                     });
}

Tensor transpose(const Tensor& x) {
  const Node& nx = node_of(x, "transpose");
  if (nx.shape.size() < 2) throw ShapeError("transpose needs rank >= 2");
  const std::size_t r = nx.shape[nx.shape.size() - 2];
  const std::size_t c = nx.shape.back();
  const std::size_t batch = nx.value.size() / (r * c);
  Shape out_shape = nx.shape;
  std::swap(out_shape[out_shape.size() - 2], out_shape.back());
  std::vector<double> out(nx.value.size());
  for (std::size_t b = 0; b < batch; ++b) {
    Map(out.data() + b * r * c, c, r) = MapC(nx.value.data() + b * r * c, r, c).transpose();
  }
  return make_result("transpose", std::move(out_shape), std::move(out), {x.node()},
                     [batch, r, c](Node& self) {
                       Node& in = *self.inputs[0];
                       in.ensure_grad();
                       for (std::size_t b = 0; b < batch; ++b) {
                         Map(in.grad.data() + b * r * c, r, c) +=
                             MapC(self.grad.data() + b * r * c, c, r).transpose();
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  const Node& nx = node_of(x, "reshape");
  check_shape(shape);
  if (shape_numel(shape) != nx.value.size()) {
    throw ShapeError("reshape " + shape_str(nx.shape) + " -> " + shape_str(shape));
  }
  return make_result("reshape", std::move(shape), nx.value, {x.node()}, [](Node& self) {
    Node& in = *self.inputs[0];
    in.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
  });
}

// ---- normalisation ---------------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
  const Node& nx = node_of(x, "softmax_rows");
  if (nx.shape.empty()) throw ShapeError("softmax_rows needs rank >= 1");
  const std::size_t len = nx.shape.back();
  const std::size_t rows = nx.value.size() / len;
  std::vector<double> out(nx.value.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = nx.value.data() + r * len;
    double* o = out.data() + r * len;
    double mx = *std::max_element(in, in + len);
    double total = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < len; ++j) o[j] /= total;
  }
  return make_result("softmax_rows", nx.shape, std::move(out), {x.node()}, [rows, len](Node& self) {
    Node& in = *self.inputs[0];
    in.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * len;
      const double* g = self.grad.data() + r * len;
      double dot = 0.0;
      for (std::size_t j = 0; j < len; ++j) dot += g[j] * y[j];
      double* gi = in.grad.data() + r * len;
      for (std::size_t j = 0; j < len; ++j) gi[j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Node& nx = node_of(x, "layer_norm");
  const Node& ng = node_of(gain, "layer_norm");
  const Node& nb = node_of(bias, "layer_norm");
  if (nx.shape.empty()) throw ShapeError("layer_norm: zero-length feature axis");
  const std::size_t len = nx.shape.back();
  if (ng.value.size() != len || nb.value.size() != len) {
    throw ShapeError("layer_norm: gain/bias length must equal feature extent " +
                     std::to_string(len));
  }
  const std::size_t rows = nx.value.size() / len;
  std::vector<double> xhat(nx.value.size());
  std::vector<double> inv_std(rows);
  std::vector<double> out(nx.value.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = nx.value.data() + r * len;
    double mu = 0.0;
    for (std::size_t j = 0; j < len; ++j) mu += in[j];
    mu /= static_cast<double>(len);
    double var = 0.0;
    for (std::size_t j = 0; j < len; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(len);
    double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < len; ++j) {
      double h = (in[j] - mu) * inv;
      xhat[r * len + j] = h;
      out[r * len + j] = h * ng.value[j] + nb.value[j];
    }
  }
  return make_result(
      "layer_norm", nx.shape, std::move(out), {x.node(), gain.node(), bias.node()},
      [rows, len, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& in = *self.inputs[0];
        Node& g = *self.inputs[1];
        Node& b = *self.inputs[2];
        if (in.requires_grad) in.ensure_grad();
        if (g.requires_grad) g.ensure_grad();
        if (b.requires_grad) b.ensure_grad();
        const double n = static_cast<double>(len);
        std::vector<double> dxhat(len);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = self.grad.data() + r * len;
          const double* h = xhat.data() + r * len;
          double sum_d = 0.0, sum_dh = 0.0;
          for (std::size_t j = 0; j < len; ++j) {
            if (g.requires_grad) g.grad[j] += dy[j] * h[j];
            if (b.requires_grad) b.grad[j] += dy[j];
            dxhat[j] = dy[j] * g.value[j];
            sum_d += dxhat[j];
            sum_dh += dxhat[j] * h[j];
          }
          if (in.requires_grad) {
            double* dx = in.grad.data() + r * len;
            for (std::size_t j = 0; j < len; ++j) {
              dx[j] += inv_std[r] / n * (n * dxhat[j] - sum_d - h[j] * sum_dh);
            }
          }
        }
      });
}

// ---- reductions ------------------------------------------------------------------

Tensor sum_last(const Tensor& x, bool keepdim) {
  const Node& nx = node_of(x, "sum_last");
  if (nx.shape.empty()) throw ShapeError("sum_last needs rank >= 1");
  const std::size_t len = nx.shape.back();
  const std::size_t rows = nx.value.size() / len;
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < len; ++j) out[r] += nx.value[r * len + j];
  }
  Shape out_shape(nx.shape.begin(), nx.shape.end() - 1);
  if (keepdim) out_shape.push_back(1);
  return make_result("sum_last", std::move(out_shape), std::move(out), {x.node()},
                     [rows, len](Node& self) {
                       Node& in = *self.inputs[0];
                       in.ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < len; ++j) in.grad[r * len + j] += self.grad[r];
                       }
                     });
}

Tensor sum(const Tensor& x) {
  const Node& nx = node_of(x, "sum");
  double total = 0.0;
  for (double v : nx.value) total += v;
  return make_result("sum", Shape{}, {total}, {x.node()}, [](Node& self) {
    Node& in = *self.inputs[0];
    in.ensure_grad();
    for (double& g : in.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---- structural ------------------------------------------------------------------

Tensor concat_last(const Tensor& a, const Tensor& b) {
  const Node& na = node_of(a, "concat_last");
  const Node& nb = node_of(b, "concat_last");
  if (na.shape.size() != nb.shape.size() || na.shape.empty() ||
      !std::equal(na.shape.begin(), na.shape.end() - 1, nb.shape.begin())) {
    throw ShapeError("concat_last: " + shape_str(na.shape) + " vs " + shape_str(nb.shape));
  }
  const std::size_t p = na.shape.back();
  const std::size_t q = nb.shape.back();
  const std::size_t rows = na.value.size() / p;
  std::vector<double> out(rows * (p + q));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(na.value.data() + r * p, p, out.data() + r * (p + q));
    std::copy_n(nb.value.data() + r * q, q, out.data() + r * (p + q) + p);
  }
  Shape out_shape = na.shape;
  out_shape.back() = p + q;
  return make_result("concat_last", std::move(out_shape), std::move(out), {a.node(), b.node()},
                     [rows, p, q](Node& self) {
                       Node& x = *self.inputs[0];
                       Node& y = *self.inputs[1];
                       if (x.requires_grad) x.ensure_grad();
                       if (y.requires_grad) y.ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* g = self.grad.data() + r * (p + q);
                         if (x.requires_grad) {
                           for (std::size_t j = 0; j < p; ++j) x.grad[r * p + j] += g[j];
                         }
                         if (y.requires_grad) {
                           for (std::size_t j = 0; j < q; ++j) y.grad[r * q + j] += g[p + j];
                         }
                       }
                     });
}

Tensor narrow_last(const Tensor& x, std::size_t start, std::size_t length) {
  const Node& nx = node_of(x, "narrow_last");
  if (nx.shape.empty() || length == 0 || start + length > nx.shape.back()) {
    throw ShapeError("narrow_last: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") outside " + shape_str(nx.shape));
  }
  const std::size_t w = nx.shape.back();
  const std::size_t rows = nx.value.size() / w;
  std::vector<double> out(rows * length);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(nx.value.data() + r * w + start, length, out.data() + r * length);
  Shape out_shape = nx.shape;
  out_shape.back() = length;
  return make_result("narrow_last", std::move(out_shape), std::move(out), {x.node()},
                     [rows, w, start, length](Node& self) {
                       Node& in = *self.inputs[0];
                       in.ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < length; ++j) {
                           in.grad[r * w + start + j] += self.grad[r * length + j];
                         }
                       }
                     });
}

Tensor select(const Tensor& x, int axis, std::size_t index) {
  const Node& nx = node_of(x, "select");
  const std::size_t ax = norm_axis(axis, nx.shape.size(), "select");
  const std::size_t extent = nx.shape[ax];
  if (index >= extent) throw ShapeError("select: index out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= nx.shape[i];
  for (std::size_t i = ax + 1; i < nx.shape.size(); ++i) inner *= nx.shape[i];
  std::vector<double> out(outer * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(nx.value.data() + (o * extent + index) * inner, inner, out.data() + o * inner);
  }
  Shape out_shape = nx.shape;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  return make_result("select", std::move(out_shape), std::move(out), {x.node()},
                     [outer, inner, extent, index](Node& self) {
                       Node& in = *self.inputs[0];
                       in.ensure_grad();
                       for (std::size_t o = 0; o < outer; ++o) {
                         double* g = in.grad.data() + (o * extent + index) * inner;
                         for (std::size_t j = 0; j < inner; ++j) g[j] += self.grad[o * inner + j];
                       }
                     });
}

Tensor slice_tokens(const Tensor& signal, std::size_t slice_len) {
  const Node& ns = node_of(signal, "slice_tokens");
  if (ns.shape.size() != 3) throw ShapeError("slice_tokens expects (B, C, T), got " + shape_str(ns.shape));
  if (slice_len == 0) throw ShapeError("slice_tokens: slice length must be positive");
  const std::size_t B = ns.shape[0], C = ns.shape[1], T = ns.shape[2];
  const std::size_t n_slices = T / slice_len;
  if (n_slices == 0) throw ShapeError("slice_tokens: slice longer than signal");
  const std::size_t width = C * slice_len;
  std::vector<double> out(B * n_slices * width);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* row = ns.value.data() + (b * C + c) * T;
      for (std::size_t i = 0; i < n_slices; ++i) {
        double* tok = out.data() + (b * n_slices + i) * width;
        for (std::size_t tau = 0; tau < slice_len; ++tau) tok[tau * C + c] = row[i * slice_len + tau];
      }
    }
  }
  return make_result("slice_tokens", Shape{B, n_slices, width}, std::move(out), {signal.node()},
                     [B, C, T, n_slices, slice_len, width](Node& self) {
                       Node& in = *self.inputs[0];
                       in.ensure_grad();
                       for (std::size_t b = 0; b < B; ++b) {
                         for (std::size_t c = 0; c < C; ++c) {
                           double* row = in.grad.data() + (b * C + c) * T;
                           for (std::size_t i = 0; i < n_slices; ++i) {
                             const double* tok = self.grad.data() + (b * n_slices + i) * width;
                             for (std::size_t tau = 0; tau < slice_len; ++tau) {
                               row[i * slice_len + tau] += tok[tau * C + c];
                             }
                           }
                         }
                       }
                     });
}

Tensor patch_conv(const Tensor& x, const Tensor& kernels, const Tensor& bias) {
  const Node& nx = node_of(x, "patch_conv");
  const Node& nk = node_of(kernels, "patch_conv");
  const Node& nb = node_of(bias, "patch_conv");
  if (nx.shape.size() != 3 || nk.shape.size() != 3) {
    throw ShapeError("patch_conv expects x (B,H,W) and kernels (K,kh,kw)");
  }
  const std::size_t B = nx.shape[0], H = nx.shape[1], W = nx.shape[2];
  const std::size_t K = nk.shape[0], kh = nk.shape[1], kw = nk.shape[2];
  if (nb.value.size() != K) throw ShapeError("patch_conv: bias length must equal kernel count");
  if (kh > H || kw > W) {
    throw ShapeError("patch_conv: kernel " + shape_str(nk.shape) + " larger than input " +
                     shape_str(nx.shape));
  }
  const std::size_t oh = H / kh, ow = W / kw;
  const std::size_t per_sample = K * oh * ow;
  std::vector<double> out(B * per_sample);
  for (std::size_t b = 0; b < B; ++b) {
    const double* img = nx.value.data() + b * H * W;
    for (std::size_t k = 0; k < K; ++k) {
      const double* ker = nk.value.data() + k * kh * kw;
      for (std::size_t p = 0; p < oh; ++p) {
        for (std::size_t q = 0; q < ow; ++q) {
          double acc = nb.value[k];
          for (std::size_t u = 0; u < kh; ++u) {
            const double* src = img + (p * kh + u) * W + q * kw;
            for (std::size_t v = 0; v < kw; ++v) acc += ker[u * kw + v] * src[v];
          }
          out[b * per_sample + (k * oh + p) * ow + q] = acc;
        }
      }
    }
  }
  return make_result(
      "patch_conv", Shape{B, per_sample}, std::move(out), {x.node(), kernels.node(), bias.node()},
      [B, H, W, K, kh, kw, oh, ow, per_sample](Node& self) {
        Node& in = *self.inputs[0];
        Node& ker = *self.inputs[1];
        Node& bs = *self.inputs[2];
        if (in.requires_grad) in.ensure_grad();
        if (ker.requires_grad) ker.ensure_grad();
        if (bs.requires_grad) bs.ensure_grad();
        for (std::size_t b = 0; b < B; ++b) {
          const double* img = in.value.data() + b * H * W;
          for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t p = 0; p < oh; ++p) {
              for (std::size_t q = 0; q < ow; ++q) {
                double g = self.grad[b * per_sample + (k * oh + p) * ow + q];
                if (bs.requires_grad) bs.grad[k] += g;
                for (std::size_t u = 0; u < kh; ++u) {
                  std::size_t base = (p * kh + u) * W + q * kw;
                  for (std::size_t v = 0; v < kw; ++v) {
                    if (ker.requires_grad) ker.grad[(k * kh + u) * kw + v] += g * img[base + v];
                    if (in.requires_grad) in.grad[b * H * W + base + v] += g * ker.value[(k * kh + u) * kw + v];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const Node& nl = node_of(logits, "cross_entropy");
  if (nl.shape.size() != 2) throw ShapeError("cross_entropy expects logits (N, R)");
  const std::size_t N = nl.shape[0], R = nl.shape[1];
  if (labels.size() != N) throw ShapeError("cross_entropy: label count differs from batch size");
  std::vector<double> probs(N * R);
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= R) {
      throw DataError("cross_entropy: label " + std::to_string(label) + " out of range");
    }
    const double* z = nl.value.data() + i * R;
    double mx = *std::max_element(z, z + R);
    double se = 0.0;
    for (std::size_t r = 0; r < R; ++r) se += std::exp(z[r] - mx);
    double lse = mx + std::log(se);
    for (std::size_t r = 0; r < R; ++r) probs[i * R + r] = std::exp(z[r] - lse);
    total += lse - z[label];
  }
  std::vector<int> owned(labels.begin(), labels.end());
  return make_result("cross_entropy", Shape{}, {total / static_cast<double>(N)}, {logits.node()},
                     [N, R, probs = std::move(probs), owned = std::move(owned)](Node& self) {
                       Node& in = *self.inputs[0];
                       in.ensure_grad();
                       double g = self.grad[0] / static_cast<double>(N);
                       for (std::size_t i = 0; i < N; ++i) {
                         for (std::size_t r = 0; r < R; ++r) {
                           double target = static_cast<int>(r) == owned[i] ? 1.0 : 0.0;
                           in.grad[i * R + r] += g * (probs[i * R + r] - target);
                         }
                       }
                     });
}

}  // namespace elip
