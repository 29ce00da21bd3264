#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace elip {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

// Dense row-major float64 array with optional reverse-mode gradient tracking.
//
// A Tensor is a cheap handle: copies share storage and graph position. Ops
// record a backward closure whenever grad mode is enabled and any input
// requires a gradient. Every op checks its output for NaN/Inf and throws
// NumericError instead of propagating non-finite values.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  // Extent along `axis`; negative axes count from the back.
  std::size_t size(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access, intended for leaves (initialisers, optimisers,
  // checkpoint loading). Mutating an interior node invalidates its graph.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  // Zero-length span when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  void zero_grad();

  // Same values, detached from any graph, never requiring grad.
  Tensor detach() const;
  // Deep copy with the same requires_grad flag, as a fresh leaf.
  Tensor clone() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Runs reverse-mode differentiation from a scalar. Leaf gradients accumulate
// across calls until zero_grad().
void backward(const Tensor& loss);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- differentiable operations --------------------------------------------

// Elementwise with NumPy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// (..., n, k) x (k, m) -> (..., n, m), or batched (..., n, k) x (..., k, m).
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Softmax along the last axis, max-subtracted.
Tensor softmax_rows(const Tensor& x);
// Normalises over the last axis, then applies gain and bias of that length.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
// Exact x * Phi(x).
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
// max(x, floor); the gradient passes only where x > floor.
Tensor clamp_min(const Tensor& x, double floor);

Tensor sum_last(const Tensor& x, bool keepdim = false);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor concat_last(const Tensor& a, const Tensor& b);
// Columns [start, start + length) of the last axis.
Tensor narrow_last(const Tensor& x, std::size_t start, std::size_t length);
// Removes `axis` by picking one index along it.
Tensor select(const Tensor& x, int axis, std::size_t index);

// (B, C, T) -> (B, T/t, C*t). Element (b, c, i*t + tau) lands in token i at
// feature position tau*C + c; trailing samples beyond a whole slice are dropped.
Tensor slice_tokens(const Tensor& signal, std::size_t slice_len);

// Single-input-channel 2-D convolution with stride equal to kernel size.
// x: (B, H, W), kernels: (K, kh, kw), bias: (K) -> (B, K * (H/kh) * (W/kw)),
// flattened kernel-major then row then column.
Tensor patch_conv(const Tensor& x, const Tensor& kernels, const Tensor& bias);

// Mean negative log-softmax of the labelled class. logits: (N, R).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace elip
