#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ditsr/errors.hpp"

namespace ditsr {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient storage, zero-filled on first use.
  std::span<double> grad_buffer();
};

}  // namespace detail

/// Dense row-major f64 array with optional reverse-mode gradient tracking.
///
/// Copies are shallow: two Tensor handles may refer to the same node, which
/// is how parameters are shared between a model and its optimizer. Data is
/// immutable after an op creates it; only leaves expose mutable storage.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from(std::initializer_list<double> values, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const;
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  /// Writable storage; only permitted on leaf tensors.
  std::span<double> mutable_data();
  std::vector<double> to_vector() const { return node_->data; }

  double item() const;
  double operator[](std::size_t flat) const { return node_->data[flat]; }
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value);
  bool is_leaf() const { return node_->is_leaf; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Accumulated gradient; zeros if backward has not reached this tensor.
  std::vector<double> grad() const;
  void zero_grad();

  /// Same values, cut off from the graph.
  Tensor detach() const;
  /// Same values in fresh storage (a new leaf).
  Tensor clone(bool requires_grad = false) const;
  /// Same data, new shape of equal numel (differentiable copy).
  Tensor reshape(Shape shape) const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_op_result(Shape, std::vector<double>, std::vector<Tensor>,
                               std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

/// Builds an op output; records the graph only when grad mode is on and a
/// parent requires grad. Throws NumericError on non-finite outputs.
Tensor make_op_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> backward);

bool grad_enabled();

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace kernels {
/// C[M,N] += A B with A(i,p) = A[i*ars + p*acs] and B(p,j) = B[p*brs + j*bcs].
/// Raw kernel; does not touch the MAC counter.
void gemm(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t ars, std::size_t acs,
          const double* B, std::size_t brs, std::size_t bcs, double* C);
}  // namespace kernels

/// Multiply-accumulate counter for the dense kernels (matmul, linear).
std::uint64_t mac_count();
void reset_mac_count();

// ---- elementwise -----------------------------------------------------------
// Broadcasting: the smaller operand's shape must be a suffix of the larger's,
// or it must hold a single element.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor scale(const Tensor& a, double s);
Tensor gelu(const Tensor& a);
Tensor square(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

double gelu_value(double x);
double gelu_derivative(double x);

// ---- linear algebra --------------------------------------------------------

/// a[..., m, k] x b[k, n] or a[..., m, k] x b[..., k, n] (equal batch dims).
Tensor matmul(const Tensor& a, const Tensor& b);

/// Per-position channel projection: x[Cin, ...] -> W[Cout, Cin] x + bias[Cout].
Tensor linear_channels(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor linear_channels(const Tensor& x, const Tensor& weight);

// ---- shape / indexing ------------------------------------------------------

/// out.flat[i] = x.flat[index[i]]; backward scatter-adds.
Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<std::size_t>> index, Shape out_shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis = 0);
/// Contiguous slice [start, start+length) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

// ---- reductions / normalisation -------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse_loss(const Tensor& prediction, const Tensor& target);
Tensor softmax(const Tensor& x, std::size_t axis);

/// x[C, ...]: normalise each of `groups` contiguous channel groups over
/// (channels in group) x (spatial), then apply gamma[c], beta[c].
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                  double eps);

/// x[C, ...]: out = x * (1 + scale[c]) + shift[c].
Tensor channel_modulate(const Tensor& x, const Tensor& scale, const Tensor& shift);
/// x[C, ...]: out = x * gate[c].
Tensor channel_scale(const Tensor& x, const Tensor& gate);

// ---- autodiff --------------------------------------------------------------

/// Reverse sweep from a single-element loss. Intermediate nodes are released
/// afterwards; a second backward through the same graph throws GraphError.
void backward(const Tensor& loss);

/// Central differences of f around x, one coordinate at a time.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps = 1e-5);

/// Same, perturbing a leaf (e.g. a model parameter) in place. When
/// `coords` is non-empty only those flat coordinates are probed; the rest
/// of the returned vector is zero.
std::vector<double> finite_diff_grad_inplace(const std::function<double()>& f, Tensor& leaf,
                                             double eps = 1e-5,
                                             const std::vector<std::size_t>& coords = {});

/// ||a - b|| / max(||a||, ||b||, floor): the gradcheck error measure.
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);

}  // namespace ditsr
