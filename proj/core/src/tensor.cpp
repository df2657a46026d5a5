#include "ditsr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace ditsr {

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_macs = 0;

// Packed GEMM: C[M,N] += A * B where A(i,p) = A[i*ars + p*acs] and
// B(p,j) = B[p*brs + j*bcs]. Panels of MR rows / NR columns feed a
// register-blocked micro-kernel; summation order over p is fixed, so the
// result does not depend on blocking.
constexpr std::size_t kMR = 4;
constexpr std::size_t kNR = 8;
constexpr std::size_t kNC = 512;
constexpr std::size_t kKC = 256;

void micro_kernel(std::size_t kc, const double* pa, const double* pb, double* c, std::size_t ldc, std::size_t mr,
                  std::size_t nr) {
  double acc[kMR][kNR] = {};
  for (std::size_t p = 0; p < kc; ++p) {
    const double* a = pa + p * kMR;
    const double* b = pb + p * kNR;
    for (std::size_t i = 0; i < kMR; ++i) {
      for (std::size_t j = 0; j < kNR; ++j) acc[i][j] += a[i] * b[j];
    }
  }
  if (mr == kMR && nr == kNR) {
    for (std::size_t i = 0; i < kMR; ++i) {
      for (std::size_t j = 0; j < kNR; ++j) c[i * ldc + j] += acc[i][j];
    }
    return;
  }
  for (std::size_t i = 0; i < mr; ++i) {
    for (std::size_t j = 0; j < nr; ++j) c[i * ldc + j] += acc[i][j];
  }
}

void gemm_strided(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t ars, std::size_t acs,
                  const double* B, std::size_t brs, std::size_t bcs, double* C) {
  if (M == 0 || N == 0 || K == 0) return;
  thread_local std::vector<double> pa, pb;
  const std::size_t m_panels = (M + kMR - 1) / kMR;
  for (std::size_t pc = 0; pc < K; pc += kKC) {
    const std::size_t kc = std::min(kKC, K - pc);
    pa.assign(m_panels * kc * kMR, 0.0);
    for (std::size_t ip = 0; ip < m_panels; ++ip) {
      const std::size_t mr = std::min(kMR, M - ip * kMR);
      double* dst = pa.data() + ip * kc * kMR;
      for (std::size_t p = 0; p < kc; ++p) {
        for (std::size_t i = 0; i < mr; ++i) dst[p * kMR + i] = A[(ip * kMR + i) * ars + (pc + p) * acs];
      }
    }
    for (std::size_t jc = 0; jc < N; jc += kNC) {
      const std::size_t nc = std::min(kNC, N - jc);
      const std::size_t n_panels = (nc + kNR - 1) / kNR;
      pb.assign(n_panels * kc * kNR, 0.0);
      for (std::size_t jp = 0; jp < n_panels; ++jp) {
        const std::size_t nr = std::min(kNR, nc - jp * kNR);
        double* dst = pb.data() + jp * kc * kNR;
        for (std::size_t p = 0; p < kc; ++p) {
          const double* src = B + (pc + p) * brs + (jc + jp * kNR) * bcs;
          for (std::size_t j = 0; j < nr; ++j) dst[p * kNR + j] = src[j * bcs];
        }
      }
      for (std::size_t ip = 0; ip < m_panels; ++ip) {
        const std::size_t mr = std::min(kMR, M - ip * kMR);
        for (std::size_t jp = 0; jp < n_panels; ++jp) {
          const std::size_t nr = std::min(kNR, nc - jp * kNR);
          micro_kernel(kc, pa.data() + ip * kc * kMR, pb.data() + jp * kc * kNR,
                       C + (ip * kMR) * N + jc + jp * kNR, N, mr, nr);
        }
      }
    }
  }
}

}  // namespace

namespace kernels {

void gemm(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t ars, std::size_t acs,
          const double* B, std::size_t brs, std::size_t bcs, double* C) {
  gemm_strided(M, N, K, A, ars, acs, B, brs, bcs, C);
}

}  // namespace kernels

namespace {

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C) {
  gemm_strided(M, N, K, A, K, 1, B, N, 1, C);
}

// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C) {
  gemm_strided(M, N, K, A, K, 1, B, 1, K, C);
}

// C[M,N] += A[K,M]^T * B[K,N]
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C) {
  gemm_strided(M, N, K, A, 1, M, B, N, 1, C);
}

Shape strip_leading_ones(const Shape& s) {
  std::size_t k = 0;
  while (k + 1 < s.size() && s[k] == 1) ++k;
  return Shape(s.begin() + static_cast<std::ptrdiff_t>(k), s.end());
}

bool is_suffix(const Shape& small, const Shape& large) {
  const Shape s = strip_leading_ones(small);
  if (s.size() > large.size()) return false;
  return std::equal(s.rbegin(), s.rend(), large.rbegin());
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t na = numel_of(a);
  const std::size_t nb = numel_of(b);
  if (a == b) return a;
  if (na == nb && strip_leading_ones(a) == strip_leading_ones(b)) return a.size() >= b.size() ? a : b;
  if (nb == 1 && na >= 1) return a;
  if (na == 1) return b;
  if (na > nb && is_suffix(b, a)) return a;
  if (nb > na && is_suffix(a, b)) return b;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
}

// Visits every output index with its operand indices. Broadcast operands
// repeat with period equal to their size, so the inner loop is modulo-free.
template <typename F>
void for_each_broadcast(std::size_t n, std::size_t na, std::size_t nb, F f) {
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
  } else if (na == n) {
    for (std::size_t o = 0; o < n; o += nb) {
      for (std::size_t j = 0; j < nb; ++j) f(o + j, o + j, j);
    }
  } else if (nb == n) {
    for (std::size_t o = 0; o < n; o += na) {
      for (std::size_t j = 0; j < na; ++j) f(o + j, j, o + j);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) f(i, i % na, i % nb);
  }
}

template <typename Fwd, typename Back>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Back back) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  const std::size_t n = numel_of(out_shape);
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  std::vector<double> out(n);
  const auto ad = a.data();
  const auto bd = b.data();
  for_each_broadcast(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(ad[ia], bd[ib]); });
  return make_op_result(std::move(out_shape), std::move(out), {a, b}, [n, na, nb, back](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    std::span<double> ga = pa.requires_grad ? pa.grad_buffer() : std::span<double>{};
    std::span<double> gb = pb.requires_grad ? pb.grad_buffer() : std::span<double>{};
    for_each_broadcast(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      double dx = 0.0, dy = 0.0;
      back(pa.data[ia], pb.data[ib], g[i], dx, dy);
      if (!ga.empty()) ga[ia] += dx;
      if (!gb.empty()) gb[ib] += dy;
    });
  });
}

template <typename Fwd, typename Deriv>
Tensor unary_op(const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.numel());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ad[i]);
  return make_op_result(a.shape(), std::move(out), {a}, [deriv](detail::Node& self) {
    auto& p = *self.parents[0];
    auto gp = p.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gp[i] += self.grad[i] * deriv(p.data[i], self.data[i]);
  });
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

std::size_t leading_channels(const Tensor& x, const char* op) {
  if (x.rank() < 1) throw DimensionError(std::string(op) + ": input must have a channel axis");
  return x.dim(0);
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::span<double> detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {
  node_->data.assign(1, 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (numel_of(shape) != data.size()) {
    throw DimensionError("Tensor: shape " + shape_str(shape) + " needs " + std::to_string(numel_of(shape)) +
                         " values, got " + std::to_string(data.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::from(std::initializer_list<double> values, bool requires_grad) {
  return Tensor({values.size()}, std::vector<double>(values), requires_grad);
}

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= rank()) throw DimensionError("dim index " + std::to_string(i) + " out of range for " + shape_str(shape()));
  return node_->shape[i];
}

std::span<double> Tensor::mutable_data() {
  if (!node_->is_leaf) throw GraphError("mutable_data: only leaf tensors are writable");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("at: rank mismatch for " + shape_str(shape()));
  std::size_t flat = 0;
  std::size_t i = 0;
  for (std::size_t v : index) {
    if (v >= node_->shape[i]) throw DimensionError("at: index out of range for " + shape_str(shape()));
    flat = flat * node_->shape[i] + v;
    ++i;
  }
  return node_->data[flat];
}

void Tensor::set_requires_grad(bool value) {
  if (!node_->is_leaf) throw GraphError("set_requires_grad: only leaf tensors");
  node_->requires_grad = value;
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->data, false); }

Tensor Tensor::clone(bool requires_grad) const { return Tensor(shape(), node_->data, requires_grad); }

Tensor Tensor::reshape(Shape new_shape) const {
  if (numel_of(new_shape) != numel()) {
    throw DimensionError("reshape: " + shape_str(shape()) + " -> " + shape_str(new_shape) + " changes element count");
  }
  return make_op_result(std::move(new_shape), node_->data, {*this}, [](detail::Node& self) {
    auto gp = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i];
  });
}

Tensor make_op_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> backward) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by op with output " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->is_leaf = false;
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::uint64_t mac_count() { return g_macs; }
void reset_mac_count() { g_macs = 0; }

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g, double& dx, double& dy) {
        dx = g;
        dy = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g, double& dx, double& dy) {
        dx = g;
        dy = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& dx, double& dy) {
        dx = g * y;
        dy = g * x;
      });
}

Tensor add(const Tensor& a, double b) {
  return unary_op(a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double s) {
  return unary_op(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor square(const Tensor& a) {
  return unary_op(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + x * pdf;
}

Tensor gelu(const Tensor& a) {
  return unary_op(a, gelu_value, [](double x, double) { return gelu_derivative(x); });
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw DimensionError("matmul: operands need rank >= 2");
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2);
  const std::size_t n = b.dim(b.rank() - 1);
  if (k != kb) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const bool shared_rhs = b.rank() == 2;
  if (!shared_rhs) {
    if (b.rank() != a.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      throw DimensionError("matmul: batch dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
  }
  const std::size_t batch = a.numel() / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(batch * m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  if (shared_rhs) {
    gemm_nn(batch * m, n, k, ad, bd, out.data());
  } else {
    for (std::size_t bi = 0; bi < batch; ++bi) gemm_nn(m, n, k, ad + bi * m * k, bd + bi * k * n, out.data() + bi * m * n);
  }
  g_macs += batch * m * n * k;
  return make_op_result(std::move(out_shape), std::move(out), {a, b}, [=](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const double* g = self.grad.data();
    if (shared_rhs) {
      if (pa.requires_grad) gemm_nt(batch * m, k, n, g, pb.data.data(), pa.grad_buffer().data());
      if (pb.requires_grad) gemm_tn(k, n, batch * m, pa.data.data(), g, pb.grad_buffer().data());
      return;
    }
    for (std::size_t bi = 0; bi < batch; ++bi) {
      const double* gb = g + bi * m * n;
      if (pa.requires_grad) gemm_nt(m, k, n, gb, pb.data.data() + bi * k * n, pa.grad_buffer().data() + bi * m * k);
      if (pb.requires_grad) gemm_tn(k, n, m, pa.data.data() + bi * m * k, gb, pb.grad_buffer().data() + bi * k * n);
    }
  });
}

namespace {

Tensor linear_channels_impl(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  if (weight.rank() != 2) throw DimensionError("linear_channels: weight must be [Cout, Cin]");
  const std::size_t cin = leading_channels(x, "linear_channels");
  const std::size_t cout = weight.dim(0);
  if (weight.dim(1) != cin) {
    throw DimensionError("linear_channels: weight " + shape_str(weight.shape()) + " does not accept input " +
                         shape_str(x.shape()));
  }
  if (bias && bias->numel() != cout) throw DimensionError("linear_channels: bias width mismatch");
  const std::size_t s = x.numel() / cin;
  Shape out_shape = x.shape();
  out_shape[0] = cout;
  std::vector<double> out(cout * s, 0.0);
  if (bias) {
    const auto bd = bias->data();
    for (std::size_t c = 0; c < cout; ++c) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(c * s), s, bd[c]);
  }
  gemm_nn(cout, s, cin, weight.data().data(), x.data().data(), out.data());
  g_macs += cout * s * cin;
  std::vector<Tensor> parents{x, weight};
  if (bias) parents.push_back(*bias);
  return make_op_result(std::move(out_shape), std::move(out), std::move(parents), [=](detail::Node& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    const double* g = self.grad.data();
    if (px.requires_grad) gemm_tn(cin, s, cout, pw.data.data(), g, px.grad_buffer().data());
    if (pw.requires_grad) gemm_nt(cout, cin, s, g, px.data.data(), pw.grad_buffer().data());
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto gb = self.parents[2]->grad_buffer();
      for (std::size_t c = 0; c < cout; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < s; ++i) acc += g[c * s + i];
        gb[c] += acc;
      }
    }
  });
}

}  // namespace

Tensor linear_channels(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return linear_channels_impl(x, weight, &bias);
}

Tensor linear_channels(const Tensor& x, const Tensor& weight) { return linear_channels_impl(x, weight, nullptr); }

// ---- shape / indexing ------------------------------------------------------

Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<std::size_t>> index, Shape out_shape) {
  if (numel_of(out_shape) != index->size()) throw DimensionError("gather: index length does not match output shape");
  const auto xd = x.data();
  std::vector<double> out(index->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t src = (*index)[i];
    if (src >= xd.size()) throw DimensionError("gather: index out of range");
    out[i] = xd[src];
  }
  return make_op_result(std::move(out_shape), std::move(out), {x}, [index](detail::Node& self) {
    auto gp = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gp[(*index)[i]] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw DimensionError("permute: axes length must equal rank");
  std::vector<bool> seen(r, false);
  for (std::size_t a : axes) {
    if (a >= r || seen[a]) throw DimensionError("permute: axes must be a permutation");
    seen[a] = true;
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dim(i);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(axes[i]);
  auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> counter(r, 0);
  for (std::size_t flat = 0; flat < index->size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += counter[i] * in_stride[axes[i]];
    (*index)[flat] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  return gather(x, std::move(index), std::move(out_shape));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw DimensionError("concat: axis out of range");
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i != axis && p.dim(i) != ref[i]) throw DimensionError("concat: shape mismatch off the concat axis");
    }
    out_shape[axis] += p.dim(axis);
  }
  const AxisSplit outer_split = split_axis(out_shape, axis);
  const std::size_t outer = outer_split.outer;
  const std::size_t inner = outer_split.inner;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
  const std::size_t row = out_shape[axis] * inner;
  std::vector<double> out(numel_of(out_shape));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto pd = parts[pi].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * widths[pi]), widths[pi],
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + offset));
    }
    offset += widths[pi];
  }
  return make_op_result(std::move(out_shape), std::move(out), parts, [=](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      auto& p = *self.parents[pi];
      if (p.requires_grad) {
        auto gp = p.grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < widths[pi]; ++i) gp[o * widths[pi] + i] += self.grad[o * row + off + i];
        }
      }
      off += widths[pi];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank()) throw DimensionError("slice: axis out of range");
  if (start + length > x.dim(axis)) throw DimensionError("slice: range exceeds axis length");
  const AxisSplit sp = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<double> out(sp.outer * length * sp.inner);
  const auto xd = x.data();
  const std::size_t in_row = sp.len * sp.inner;
  const std::size_t out_row = length * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(o * in_row + start * sp.inner), out_row,
                out.begin() + static_cast<std::ptrdiff_t>(o * out_row));
  }
  return make_op_result(std::move(out_shape), std::move(out), {x}, [=](detail::Node& self) {
    auto gp = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < out_row; ++i) gp[o * in_row + start * sp.inner + i] += self.grad[o * out_row + i];
    }
  });
}

// ---- reductions / normalisation -------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_op_result({}, {acc}, {x}, [](detail::Node& self) {
    auto gp = self.parents[0]->grad_buffer();
    const double g = self.grad[0];
    for (double& v : gp) v += g;
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw DimensionError("mse_loss: shapes " + shape_str(prediction.shape()) + " and " + shape_str(target.shape()) +
                         " differ");
  }
  const auto pd = prediction.data();
  const auto td = target.data();
  const double inv_n = 1.0 / static_cast<double>(pd.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pd.size(); ++i) acc += (pd[i] - td[i]) * (pd[i] - td[i]);
  return make_op_result({}, {acc * inv_n}, {prediction, target}, [inv_n](detail::Node& self) {
    auto& pp = *self.parents[0];
    auto& pt = *self.parents[1];
    const double g = self.grad[0] * 2.0 * inv_n;
    std::span<double> gp = pp.requires_grad ? pp.grad_buffer() : std::span<double>{};
    std::span<double> gt = pt.requires_grad ? pt.grad_buffer() : std::span<double>{};
    for (std::size_t i = 0; i < pp.data.size(); ++i) {
      const double d = g * (pp.data[i] - pt.data[i]);
      if (!gp.empty()) gp[i] += d;
      if (!gt.empty()) gt[i] -= d;
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis out of range");
  const AxisSplit sp = split_axis(x.shape(), axis);
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      double mx = xd[base];
      for (std::size_t l = 1; l < sp.len; ++l) mx = std::max(mx, xd[base + l * sp.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const double e = std::exp(xd[base + l * sp.inner] - mx);
        out[base + l * sp.inner] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] *= inv;
    }
  }
  return make_op_result(x.shape(), std::move(out), {x}, [sp](detail::Node& self) {
    auto gp = self.parents[0]->grad_buffer();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) dot += g[base + l * sp.inner] * y[base + l * sp.inner];
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t i = base + l * sp.inner;
          gp[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t c = leading_channels(x, "group_norm");
  if (groups == 0 || c % groups != 0) {
    throw DimensionError("group_norm: " + std::to_string(c) + " channels not divisible by " + std::to_string(groups) +
                         " groups");
  }
  if (gamma.numel() != c || beta.numel() != c) throw DimensionError("group_norm: gamma/beta width mismatch");
  const std::size_t s = x.numel() / c;
  const std::size_t cg = c / groups;
  const std::size_t gsize = cg * s;
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  auto xhat = std::make_shared<std::vector<double>>(xd.size());
  auto inv_std = std::make_shared<std::vector<double>>(groups);
  std::vector<double> out(xd.size());
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t base = g * gsize;
    double mu = 0.0;
    for (std::size_t i = 0; i < gsize; ++i) mu += xd[base + i];
    mu /= static_cast<double>(gsize);
    double var = 0.0;
    for (std::size_t i = 0; i < gsize; ++i) var += (xd[base + i] - mu) * (xd[base + i] - mu);
    var /= static_cast<double>(gsize);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[g] = is;
    for (std::size_t i = 0; i < gsize; ++i) {
      const std::size_t idx = base + i;
      const std::size_t ch = idx / s;
      (*xhat)[idx] = (xd[idx] - mu) * is;
      out[idx] = (*xhat)[idx] * gd[ch] + bd[ch];
    }
  }
  return make_op_result(x.shape(), std::move(out), {x, gamma, beta},
                        [=](detail::Node& self) {
                          auto& px = *self.parents[0];
                          auto& pg = *self.parents[1];
                          auto& pb = *self.parents[2];
                          const auto& g = self.grad;
                          if (pg.requires_grad || pb.requires_grad) {
                            std::span<double> gg = pg.requires_grad ? pg.grad_buffer() : std::span<double>{};
                            std::span<double> gb = pb.requires_grad ? pb.grad_buffer() : std::span<double>{};
                            for (std::size_t ch = 0; ch < c; ++ch) {
                              double sg = 0.0, sb = 0.0;
                              for (std::size_t i = 0; i < s; ++i) {
                                sg += g[ch * s + i] * (*xhat)[ch * s + i];
                                sb += g[ch * s + i];
                              }
                              if (!gg.empty()) gg[ch] += sg;
                              if (!gb.empty()) gb[ch] += sb;
                            }
                          }
                          if (!px.requires_grad) return;
                          auto gx = px.grad_buffer();
                          const auto& gam = pg.data;
                          for (std::size_t grp = 0; grp < groups; ++grp) {
                            const std::size_t base = grp * gsize;
                            double m1 = 0.0, m2 = 0.0;
                            for (std::size_t i = 0; i < gsize; ++i) {
                              const std::size_t idx = base + i;
                              const double dxh = g[idx] * gam[idx / s];
                              m1 += dxh;
                              m2 += dxh * (*xhat)[idx];
                            }
                            m1 /= static_cast<double>(gsize);
                            m2 /= static_cast<double>(gsize);
                            const double is = (*inv_std)[grp];
                            for (std::size_t i = 0; i < gsize; ++i) {
                              const std::size_t idx = base + i;
                              const double dxh = g[idx] * gam[idx / s];
                              gx[idx] += is * (dxh - m1 - (*xhat)[idx] * m2);
                            }
                          }
                        });
}

Tensor channel_modulate(const Tensor& x, const Tensor& scale_vec, const Tensor& shift_vec) {
  const std::size_t c = leading_channels(x, "channel_modulate");
  if (scale_vec.numel() != c || shift_vec.numel() != c) {
    throw DimensionError("channel_modulate: expected per-channel vectors of width " + std::to_string(c));
  }
  const std::size_t s = x.numel() / c;
  const auto xd = x.data();
  const auto sc = scale_vec.data();
  const auto sh = shift_vec.data();
  std::vector<double> out(xd.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < s; ++i) out[ch * s + i] = xd[ch * s + i] * (1.0 + sc[ch]) + sh[ch];
  }
  return make_op_result(x.shape(), std::move(out), {x, scale_vec, shift_vec}, [c, s](detail::Node& self) {
    auto& px = *self.parents[0];
    auto& ps = *self.parents[1];
    auto& pt = *self.parents[2];
    const auto& g = self.grad;
    std::span<double> gx = px.requires_grad ? px.grad_buffer() : std::span<double>{};
    std::span<double> gs = ps.requires_grad ? ps.grad_buffer() : std::span<double>{};
    std::span<double> gt = pt.requires_grad ? pt.grad_buffer() : std::span<double>{};
    for (std::size_t ch = 0; ch < c; ++ch) {
      double a = 0.0, b = 0.0;
      const double f = 1.0 + ps.data[ch];
      for (std::size_t i = 0; i < s; ++i) {
        const std::size_t idx = ch * s + i;
        if (!gx.empty()) gx[idx] += g[idx] * f;
        a += g[idx] * px.data[idx];
        b += g[idx];
      }
      if (!gs.empty()) gs[ch] += a;
      if (!gt.empty()) gt[ch] += b;
    }
  });
}

Tensor channel_scale(const Tensor& x, const Tensor& gate) {
  const std::size_t c = leading_channels(x, "channel_scale");
  if (gate.numel() != c) throw DimensionError("channel_scale: expected gate of width " + std::to_string(c));
  const std::size_t s = x.numel() / c;
  const auto xd = x.data();
  const auto gd = gate.data();
  std::vector<double> out(xd.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < s; ++i) out[ch * s + i] = xd[ch * s + i] * gd[ch];
  }
  return make_op_result(x.shape(), std::move(out), {x, gate}, [c, s](detail::Node& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    const auto& g = self.grad;
    std::span<double> gx = px.requires_grad ? px.grad_buffer() : std::span<double>{};
    std::span<double> gg = pg.requires_grad ? pg.grad_buffer() : std::span<double>{};
    for (std::size_t ch = 0; ch < c; ++ch) {
      double a = 0.0;
      for (std::size_t i = 0; i < s; ++i) {
        const std::size_t idx = ch * s + i;
        if (!gx.empty()) gx[idx] += g[idx] * pg.data[ch];
        a += g[idx] * px.data[idx];
      }
      if (!gg.empty()) gg[ch] += a;
    }
  });
}

// ---- autodiff --------------------------------------------------------------

void backward(const Tensor& loss) {
  detail::Node* root = loss.node().get();
  if (root->data.size() != 1) throw DimensionError("backward: loss must be a scalar, got " + shape_str(root->shape));
  if (root->consumed) throw GraphError("backward: graph already consumed by a previous backward");
  if (!root->requires_grad) throw GraphError("backward: loss does not depend on any tensor requiring grad");

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        if (p->consumed) throw GraphError("backward: graph already consumed by a previous backward");
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (detail::Node* n : order) {
    if (n->is_leaf) continue;
    n->consumed = true;
    n->backward = nullptr;
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
  // Parents are dropped in a second pass so no node is freed while still
  // referenced from `order`.
  std::vector<std::shared_ptr<detail::Node>> keep;
  for (detail::Node* n : order) {
    if (n->is_leaf) continue;
    for (auto& p : n->parents) keep.push_back(std::move(p));
    n->parents.clear();
  }
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
  std::vector<double> grad(x.numel());
  Tensor probe = x.clone();
  auto pd = probe.mutable_data();
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double orig = pd[i];
    pd[i] = orig + eps;
    const double fp = f(probe);
    pd[i] = orig - eps;
    const double fm = f(probe);
    pd[i] = orig;
    grad[i] = (fp - fm) / (2.0 * eps);
  }
  return Tensor(x.shape(), std::move(grad));
}

std::vector<double> finite_diff_grad_inplace(const std::function<double()>& f, Tensor& leaf, double eps,
                                             const std::vector<std::size_t>& coords) {
  auto pd = leaf.mutable_data();
  std::vector<double> grad(pd.size(), 0.0);
  auto probe = [&](std::size_t i) {
    const double orig = pd[i];
    pd[i] = orig + eps;
    const double fp = f();
    pd[i] = orig - eps;
    const double fm = f();
    pd[i] = orig;
    grad[i] = (fp - fm) / (2.0 * eps);
  };
  if (coords.empty()) {
    for (std::size_t i = 0; i < pd.size(); ++i) probe(i);
  } else {
    for (std::size_t i : coords) probe(i);
  }
  return grad;
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw DimensionError("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace ditsr
