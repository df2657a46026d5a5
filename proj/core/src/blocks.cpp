#include "ditsr/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <tuple>

#include "ditsr/fourier.hpp"

namespace ditsr {

namespace {

using IndexPtr = std::shared_ptr<const std::vector<std::size_t>>;

// Index maps are pure functions of their key; cache them per thread.
template <typename Key, typename Build>
IndexPtr cached_index(std::map<Key, IndexPtr>& cache, const Key& key, Build build) {
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  IndexPtr idx = std::make_shared<const std::vector<std::size_t>>(build());
  cache.emplace(key, idx);
  return idx;
}

using PartitionKey = std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, std::size_t>;

IndexPtr partition_index(std::size_t c, std::size_t h, std::size_t w, std::size_t win, std::size_t shift) {
  thread_local std::map<PartitionKey, IndexPtr> cache;
  return cached_index(cache, PartitionKey{c, h, w, win, shift}, [=] {
    const std::size_t nw = w / win;
    const std::size_t t_count = win * win;
    std::vector<std::size_t> idx(c * h * w);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t ys = (y + h - shift % h) % h;
        const std::size_t xs = (x + w - shift % w) % w;
        const std::size_t n = (ys / win) * nw + xs / win;
        const std::size_t t = (ys % win) * win + xs % win;
        for (std::size_t ch = 0; ch < c; ++ch) idx[(n * t_count + t) * c + ch] = (ch * h + y) * w + x;
      }
    }
    return idx;
  });
}

IndexPtr merge_index(std::size_t c, std::size_t h, std::size_t w, std::size_t win, std::size_t shift) {
  thread_local std::map<PartitionKey, IndexPtr> cache;
  return cached_index(cache, PartitionKey{c, h, w, win, shift}, [=] {
    const auto forward = partition_index(c, h, w, win, shift);
    std::vector<std::size_t> idx(forward->size());
    for (std::size_t i = 0; i < forward->size(); ++i) idx[(*forward)[i]] = i;
    return idx;
  });
}

IndexPtr rel_bias_index(std::size_t heads, std::size_t win) {
  thread_local std::map<std::pair<std::size_t, std::size_t>, IndexPtr> cache;
  return cached_index(cache, std::pair{heads, win}, [=] {
    const std::size_t t_count = win * win;
    const std::size_t span = 2 * win - 1;
    std::vector<std::size_t> idx(heads * t_count * t_count);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      for (std::size_t a = 0; a < t_count; ++a) {
        for (std::size_t b = 0; b < t_count; ++b) {
          const std::size_t di = a / win + win - 1 - b / win;
          const std::size_t dj = a % win + win - 1 - b % win;
          idx[(hd * t_count + a) * t_count + b] = hd * span * span + di * span + dj;
        }
      }
    }
    return idx;
  });
}

IndexPtr mirror_index(std::size_t p) {
  thread_local std::map<std::size_t, IndexPtr> cache;
  return cached_index(cache, p, [=] {
    std::vector<std::size_t> idx(p * p);
    for (std::size_t u = 0; u < p; ++u) {
      for (std::size_t v = 0; v < p; ++v) idx[u * p + v] = mirror_bin(u, p) * p + mirror_bin(v, p);
    }
    return idx;
  });
}

}  // namespace

const char* to_string(CondMode mode) { return mode == CondMode::adaln ? "adaln" : "adafm"; }

CondMode parse_cond_mode(const std::string& text) {
  if (text == "adaln") return CondMode::adaln;
  if (text == "adafm") return CondMode::adafm;
  throw ConfigError("unknown conditioning mode '" + text + "' (expected adaln or adafm)");
}

Tensor sinusoidal_embed(std::int64_t t, std::size_t d) {
  if (d == 0 || d % 2 != 0) throw ValidationError("sinusoidal_embed: width must be even, got " + std::to_string(d));
  if (t < 0) throw ValidationError("sinusoidal_embed: time step must be non-negative");
  std::vector<double> e(d);
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    e[2 * i] = std::sin(static_cast<double>(t) * freq);
    e[2 * i + 1] = std::cos(static_cast<double>(t) * freq);
  }
  return Tensor({d}, std::move(e));
}

std::size_t default_norm_groups(std::size_t channels) {
  const std::size_t base = channels >= 64 ? 16 : 8;
  return std::gcd(channels, base);
}

// ---- time conditioning -----------------------------------------------------

std::size_t conditioning_width(CondMode mode, std::size_t channels, std::size_t fft_window) {
  return mode == CondMode::adaln ? 3 * channels : fft_window * fft_window;
}

std::pair<Tensor, Tensor> time_mlp(const Tensor& base_embed, const TimeMlpWeights& weights, CondMode mode,
                                   std::size_t channels, std::size_t fft_window) {
  const std::size_t out = conditioning_width(mode, channels, fft_window);
  const std::size_t d_t = base_embed.numel();
  if (weights.w2.rank() != 2 || weights.w2.dim(1) != 2 * out) {
    throw DimensionError("time_mlp: final layer must produce " + std::to_string(2 * out) + " values for " +
                         to_string(mode));
  }
  const Tensor e = base_embed.reshape({1, d_t});
  const Tensor hidden = gelu(add(matmul(e, weights.w1), weights.b1));
  const Tensor both = add(matmul(hidden, weights.w2), weights.b2);
  return {slice(both, 1, 0, out).reshape({out}), slice(both, 1, out, out).reshape({out})};
}

std::uint64_t conditioning_param_count(CondMode mode, std::size_t d_t, std::size_t channels, std::size_t fft_window) {
  if (mode == CondMode::adaln) return std::uint64_t{d_t} * channels * 3 * 2;
  return std::uint64_t{d_t} * fft_window * fft_window * 2;
}

std::pair<Tensor, Tensor> adaln_modulate(const Tensor& x, const Tensor& f_time) {
  if (x.rank() < 1) throw DimensionError("adaln_modulate: expected [C, H, W]");
  const std::size_t c = x.dim(0);
  if (f_time.numel() != 3 * c) {
    throw DimensionError("adaln_modulate: f_time has " + std::to_string(f_time.numel()) + " values, expected 3*" +
                         std::to_string(c));
  }
  const Tensor flat = f_time.reshape({3 * c});
  const Tensor scale_v = slice(flat, 0, 0, c);
  const Tensor shift_v = slice(flat, 0, c, c);
  const Tensor gate_v = slice(flat, 0, 2 * c, c);
  return {channel_modulate(x, scale_v, shift_v), gate_v};
}

Tensor adafm_symmetrize(const Tensor& raw_scale) {
  if (raw_scale.rank() != 2 || raw_scale.dim(0) != raw_scale.dim(1)) {
    throw DimensionError("adafm_symmetrize: expected [p, p], got " + shape_str(raw_scale.shape()));
  }
  const std::size_t p = raw_scale.dim(0);
  return scale(add(raw_scale, gather(raw_scale, mirror_index(p), {p, p})), 0.5);
}

namespace {

// cos/sin of 2*pi*(k1*i + k2*j)/p for natural frequency k = k1*p + k2 and
// window pixel q = i*p + j, shape [p^2, p^2].
struct PhaseTables {
  std::vector<double> cos, sin;
};

const PhaseTables& phase_tables(std::size_t p) {
  thread_local std::map<std::size_t, PhaseTables> cache;
  auto it = cache.find(p);
  if (it != cache.end()) return it->second;
  const std::size_t pp = p * p;
  PhaseTables t{std::vector<double>(pp * pp), std::vector<double>(pp * pp)};
  for (std::size_t k = 0; k < pp; ++k) {
    for (std::size_t q = 0; q < pp; ++q) {
      const std::size_t phase = ((k / p) * (q / p) + (k % p) * (q % p)) % p;
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(phase) / static_cast<double>(p);
      t.cos[k * pp + q] = std::cos(angle);
      t.sin[k * pp + q] = std::sin(angle);
    }
  }
  return cache.emplace(p, std::move(t)).first->second;
}

// Window operator of the spectral scaling: y = Re(A) x with
// A[q, q'] = (1/p^2) sum_k S_k exp(i (theta_kq - theta_kq')). `imag` receives Im(A).
void spectral_operator(const std::vector<double>& s_nat, std::size_t p, std::vector<double>& real,
                       std::vector<double>& imag) {
  const std::size_t pp = p * p;
  const auto& t = phase_tables(p);
  real.assign(pp * pp, 0.0);
  imag.assign(pp * pp, 0.0);
  const double inv = 1.0 / static_cast<double>(pp);
  for (std::size_t k = 0; k < pp; ++k) {
    const double sk = s_nat[k] * inv;
    if (sk == 0.0) continue;
    const double* c = t.cos.data() + k * pp;
    const double* s = t.sin.data() + k * pp;
    for (std::size_t q = 0; q < pp; ++q) {
      const double cq = sk * c[q], sq = sk * s[q];
      double* rr = real.data() + q * pp;
      double* ri = imag.data() + q * pp;
      for (std::size_t r = 0; r < pp; ++r) {
        rr[r] += cq * c[r] + sq * s[r];
        ri[r] += sq * c[r] - cq * s[r];
      }
    }
  }
}

// Window-pixel index map: patch (ch, wi, wj) row, pixel (i, j) column.
IndexPtr patch_index(std::size_t c, std::size_t h, std::size_t w, std::size_t p) {
  thread_local std::map<PartitionKey, IndexPtr> cache;
  return cached_index(cache, PartitionKey{c, h, w, p, 0}, [=] {
    std::vector<std::size_t> idx(c * h * w);
    std::size_t n = 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t wi = 0; wi < h / p; ++wi) {
        for (std::size_t wj = 0; wj < w / p; ++wj) {
          for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t j = 0; j < p; ++j) idx[n++] = (ch * h + wi * p + i) * w + wj * p + j;
          }
        }
      }
    }
    return idx;
  });
}

}  // namespace

Tensor adafm_modulate(const Tensor& x, const Tensor& f_time, std::size_t fft_window) {
  const std::size_t p = fft_window;
  const auto grid = fourier::WindowGrid::for_feature(x.shape(), p);
  if (f_time.numel() != p * p) {
    throw DimensionError("adafm_modulate: f_time has " + std::to_string(f_time.numel()) + " values, expected " +
                         std::to_string(p * p));
  }
  const std::size_t pp = p * p;
  const std::size_t patches = x.numel() / pp;

  // Centered scale matrix -> natural DFT order.
  std::vector<double> s_nat(pp);
  const auto fd = f_time.data();
  for (std::size_t k = 0; k < p; ++k) {
    for (std::size_t l = 0; l < p; ++l) {
      s_nat[k * p + l] = fd[fourier::centered_index(k, p) * p + fourier::centered_index(l, p)];
    }
  }
  auto op = std::make_shared<std::vector<double>>();
  std::vector<double> op_imag;
  spectral_operator(s_nat, p, *op, op_imag);

  const auto xd = x.data();
  double max_x = 0.0, max_s = 0.0, imag_gain = 0.0;
  for (double v : xd) max_x = std::max(max_x, std::abs(v));
  for (double v : s_nat) max_s = std::max(max_s, std::abs(v));
  for (std::size_t q = 0; q < pp; ++q) {
    double row = 0.0;
    for (std::size_t r = 0; r < pp; ++r) row += std::abs(op_imag[q * pp + r]);
    imag_gain = std::max(imag_gain, row);
  }
  // Bound on the imaginary part of any output pixel.
  const double residue = imag_gain * max_x;
  const double tol = 1e-9 * std::max(1.0, max_x * max_s);
  if (residue > tol) {
    throw NumericError("adafm_modulate: imaginary residue " + std::to_string(residue) +
                       " exceeds tolerance; scale matrix is not conjugate-symmetric");
  }

  const IndexPtr idx = patch_index(grid.channels, grid.height(), grid.width(), p);
  std::vector<double> in(x.numel()), res(x.numel(), 0.0);
  for (std::size_t n = 0; n < in.size(); ++n) in[n] = xd[(*idx)[n]];
  kernels::gemm(patches, pp, pp, in.data(), pp, 1, op->data(), 1, pp, res.data());
  std::vector<double> out(x.numel());
  for (std::size_t n = 0; n < out.size(); ++n) out[(*idx)[n]] = res[n];

  return make_op_result(x.shape(), std::move(out), {x, f_time}, [=](detail::Node& self) {
    auto& px = *self.parents[0];
    auto& pf = *self.parents[1];
    std::vector<double> g(self.grad.size());
    for (std::size_t n = 0; n < g.size(); ++n) g[n] = self.grad[(*idx)[n]];
    if (px.requires_grad) {
      std::vector<double> gp(g.size(), 0.0);
      kernels::gemm(patches, pp, pp, g.data(), pp, 1, op->data(), pp, 1, gp.data());
      auto gx = px.grad_buffer();
      for (std::size_t n = 0; n < gp.size(); ++n) gx[(*idx)[n]] += gp[n];
    }
    if (pf.requires_grad) {
      // dS_k = (1/p^2) sum_{q,q'} Q[q,q'] cos(theta_kq - theta_kq'), Q = G^T X.
      std::vector<double> patches_x(g.size());
      for (std::size_t n = 0; n < g.size(); ++n) patches_x[n] = px.data[(*idx)[n]];
      std::vector<double> q(pp * pp, 0.0);
      kernels::gemm(pp, pp, patches, g.data(), 1, pp, patches_x.data(), pp, 1, q.data());
      const auto& t = phase_tables(p);
      const double inv = 1.0 / static_cast<double>(pp);
      auto gf = pf.grad_buffer();
      for (std::size_t k = 0; k < pp; ++k) {
        const double* c = t.cos.data() + k * pp;
        const double* s = t.sin.data() + k * pp;
        double acc = 0.0;
        for (std::size_t a = 0; a < pp; ++a) {
          double rc = 0.0, rs = 0.0;
          for (std::size_t b = 0; b < pp; ++b) {
            rc += q[a * pp + b] * c[b];
            rs += q[a * pp + b] * s[b];
          }
          acc += c[a] * rc + s[a] * rs;
        }
        gf[fourier::centered_index(k / p, p) * p + fourier::centered_index(k % p, p)] += acc * inv;
      }
    }
  });
}

// ---- attention -------------------------------------------------------------

Tensor window_partition(const Tensor& x, std::size_t window, std::size_t shift) {
  if (x.rank() != 3) throw DimensionError("window_partition: expected [C, H, W], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (window == 0 || h % window != 0 || w % window != 0) {
    throw DimensionError("window_partition: " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not divisible by window " + std::to_string(window));
  }
  const std::size_t n = (h / window) * (w / window);
  return gather(x, partition_index(c, h, w, window, shift), {n, window * window, c});
}

Tensor window_merge(const Tensor& tokens, std::size_t channels, std::size_t height, std::size_t width,
                    std::size_t window, std::size_t shift) {
  if (tokens.numel() != channels * height * width) throw DimensionError("window_merge: token count mismatch");
  return gather(tokens, merge_index(channels, height, width, window, shift), {channels, height, width});
}

Tensor windowed_mhsa(const Tensor& x, const AttentionWindowSpec& spec, const AttentionWeights& weights,
                     Tensor* probabilities) {
  if (x.rank() != 3) throw DimensionError("windowed_mhsa: expected [C, H, W], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (spec.heads == 0 || spec.heads * spec.head_dim != c) {
    throw DimensionError("windowed_mhsa: width " + std::to_string(c) + " is not heads*head_dim = " +
                         std::to_string(spec.heads) + "*" + std::to_string(spec.head_dim));
  }
  const std::size_t win = spec.window;
  const std::size_t t_count = win * win;
  const std::size_t heads = spec.heads;
  const std::size_t hd = spec.head_dim;

  const Tensor xw = window_partition(x, win, spec.shift);
  const std::size_t n = xw.dim(0);
  auto project = [&](const Tensor& wmat, const Tensor& bvec) { return add(matmul(xw, wmat), bvec); };
  const Tensor q = scale(project(weights.wq, weights.bq), 1.0 / std::sqrt(static_cast<double>(hd)));
  const Tensor k = project(weights.wk, weights.bk);
  const Tensor v = project(weights.wv, weights.bv);

  const Tensor q4 = permute(q.reshape({n, t_count, heads, hd}), {0, 2, 1, 3});
  const Tensor kt = permute(k.reshape({n, t_count, heads, hd}), {0, 2, 3, 1});
  const Tensor v4 = permute(v.reshape({n, t_count, heads, hd}), {0, 2, 1, 3});

  Tensor scores = matmul(q4, kt);
  if (weights.rel_bias) {
    const std::size_t span = 2 * win - 1;
    if (weights.rel_bias->numel() != heads * span * span) {
      throw DimensionError("windowed_mhsa: relative bias table must be [heads, (2w-1)^2]");
    }
    scores = add(scores, gather(*weights.rel_bias, rel_bias_index(heads, win), {heads, t_count, t_count}));
  }
  const Tensor attn = softmax(scores, 3);
  if (probabilities) *probabilities = attn;
  const Tensor o = permute(matmul(attn, v4), {0, 2, 1, 3}).reshape({n, t_count, c});
  const Tensor projected = add(matmul(o, weights.wo), weights.bo);
  return window_merge(projected, c, h, w, win, spec.shift);
}

// ---- transformer block -----------------------------------------------------

void BlockSpec::validate() const {
  if (width == 0) throw ConfigError("block width must be positive");
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("block width " + std::to_string(width) + " not divisible by " + std::to_string(heads) + " heads");
  }
  if (width % norm_groups() != 0) throw ConfigError("block width not divisible by group-norm groups");
  if (window == 0 || shift >= window) throw ConfigError("attention shift must be smaller than the window");
  if (fft_window < 2 || fft_window % 2 != 0) throw ConfigError("FFT window must be even and >= 2");
  if (d_t == 0 || d_t % 2 != 0) throw ConfigError("time-embedding width must be even");
  if (mlp_ratio == 0) throw ConfigError("MLP ratio must be positive");
}

std::vector<ParamSpec> block_param_specs(const BlockSpec& spec) {
  spec.validate();
  const std::size_t c = spec.width;
  const std::size_t hidden = spec.mlp_ratio * c;
  const std::size_t cw = conditioning_width(spec.mode, c, spec.fft_window);
  std::vector<ParamSpec> out;
  auto push = [&](std::string name, Shape shape, ParamRole role, Init init, std::size_t fan_in = 1) {
    ParamSpec p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    p.role = role;
    p.init = init;
    p.fan_in = fan_in;
    out.push_back(std::move(p));
  };
  push("norm1.gamma", {c}, ParamRole::norm, Init::ones);
  push("norm1.beta", {c}, ParamRole::norm, Init::zeros);
  for (const char* m : {"q", "k", "v", "o"}) {
    push(std::string("attn.w") + m, {c, c}, ParamRole::attention, Init::fan_in_normal, c);
    push(std::string("attn.b") + m, {c}, ParamRole::attention, Init::zeros);
  }
  if (spec.rel_pos_bias) {
    const std::size_t span = 2 * spec.window - 1;
    push("attn.rel_bias", {spec.heads, span * span}, ParamRole::attention, Init::small_normal);
  }
  push("norm2.gamma", {c}, ParamRole::norm, Init::ones);
  push("norm2.beta", {c}, ParamRole::norm, Init::zeros);
  push("mlp.w1", {hidden, c}, ParamRole::mlp, Init::fan_in_normal, c);
  push("mlp.b1", {hidden}, ParamRole::mlp, Init::zeros);
  push("mlp.w2", {c, hidden}, ParamRole::mlp, Init::fan_in_normal, hidden);
  push("mlp.b2", {c}, ParamRole::mlp, Init::zeros);
  push("time.w1", {spec.d_t, spec.d_t}, ParamRole::conditioning_hidden, Init::fan_in_normal, spec.d_t);
  push("time.b1", {spec.d_t}, ParamRole::conditioning_hidden, Init::zeros);
  push("time.w2", {spec.d_t, 2 * cw}, ParamRole::conditioning_out, Init::zeros);
  // Zero final weights: every block starts identity-conditioned, i.e.
  // AdaLN (scale, shift, gate) = (0, 0, 1) and AdaFM S = 1.
  std::vector<double> bias(2 * cw, 1.0);
  if (spec.mode == CondMode::adaln) {
    for (std::size_t branch = 0; branch < 2; ++branch) {
      std::fill_n(bias.begin() + static_cast<std::ptrdiff_t>(branch * cw), 2 * c, 0.0);
    }
  }
  push("time.b2", {2 * cw}, ParamRole::conditioning_out, Init::explicit_values);
  out.back().values = std::move(bias);
  return out;
}

std::uint64_t fft2_flops(std::size_t p) {
  const double lg = std::log2(static_cast<double>(p));
  return static_cast<std::uint64_t>(std::llround(5.0 * static_cast<double>(p * p) * lg));
}

BlockCost block_cost(const BlockSpec& spec, std::size_t height, std::size_t width) {
  const std::uint64_t n = std::uint64_t{height} * width;
  const std::uint64_t c = spec.width;
  const std::uint64_t t_count = std::uint64_t{spec.window} * spec.window;
  const std::uint64_t cw = conditioning_width(spec.mode, spec.width, spec.fft_window);
  BlockCost cost;
  cost.linear_macs = n * (4 * c * c + 2 * spec.mlp_ratio * c * c);
  cost.attention_macs = 2 * n * t_count * c;
  cost.time_macs = std::uint64_t{spec.d_t} * spec.d_t + std::uint64_t{spec.d_t} * 2 * cw;
  if (spec.mode == CondMode::adafm) {
    const std::uint64_t p = spec.fft_window;
    const std::uint64_t patches = n / (p * p) * c;
    const std::uint64_t half_bins = p * (p / 2 + 1);
    cost.spectral_flops = 2 * patches * (2 * fft2_flops(spec.fft_window) + 2 * half_bins);
  }
  return cost;
}

TransformerBlock::TransformerBlock(BlockSpec spec, const ParamStore& store, const std::string& prefix)
    : spec_(spec) {
  spec_.validate();
  attn_spec_ = AttentionWindowSpec{spec_.window, spec_.shift, spec_.heads, spec_.width / spec_.heads};
  auto get = [&](const char* name) { return store.get(prefix + name); };
  norm1_gamma_ = get("norm1.gamma");
  norm1_beta_ = get("norm1.beta");
  norm2_gamma_ = get("norm2.gamma");
  norm2_beta_ = get("norm2.beta");
  attn_.wq = get("attn.wq");
  attn_.bq = get("attn.bq");
  attn_.wk = get("attn.wk");
  attn_.bk = get("attn.bk");
  attn_.wv = get("attn.wv");
  attn_.bv = get("attn.bv");
  attn_.wo = get("attn.wo");
  attn_.bo = get("attn.bo");
  if (spec_.rel_pos_bias) attn_.rel_bias = get("attn.rel_bias");
  mlp_w1_ = get("mlp.w1");
  mlp_b1_ = get("mlp.b1");
  mlp_w2_ = get("mlp.w2");
  mlp_b2_ = get("mlp.b2");
  time_.w1 = get("time.w1");
  time_.b1 = get("time.b1");
  time_.w2 = get("time.w2");
  time_.b2 = get("time.b2");
}

Tensor TransformerBlock::condition(const Tensor& h, const Tensor& f_time, Tensor* gate) const {
  if (spec_.mode == CondMode::adaln) {
    auto [modulated, g] = adaln_modulate(h, f_time);
    *gate = g;
    return modulated;
  }
  const std::size_t p = spec_.fft_window;
  return adafm_modulate(h, adafm_symmetrize(f_time.reshape({p, p})), p);
}

Tensor TransformerBlock::forward(const Tensor& x, const Tensor& base_embed) const {
  if (x.rank() != 3 || x.dim(0) != spec_.width) {
    throw DimensionError("TransformerBlock: expected " + std::to_string(spec_.width) + " channels, got " +
                         shape_str(x.shape()));
  }
  const auto [f1, f2] = time_mlp(base_embed, time_, spec_.mode, spec_.width, spec_.fft_window);
  const std::size_t groups = spec_.norm_groups();

  Tensor gate1, gate2;
  const Tensor h1 = condition(group_norm(x, groups, norm1_gamma_, norm1_beta_, spec_.norm_eps), f1, &gate1);
  Tensor branch1 = windowed_mhsa(h1, attn_spec_, attn_);
  if (spec_.mode == CondMode::adaln) branch1 = channel_scale(branch1, gate1);
  const Tensor x1 = add(x, branch1);

  const Tensor h2 = condition(group_norm(x1, groups, norm2_gamma_, norm2_beta_, spec_.norm_eps), f2, &gate2);
  Tensor branch2 = linear_channels(gelu(linear_channels(h2, mlp_w1_, mlp_b1_)), mlp_w2_, mlp_b2_);
  if (spec_.mode == CondMode::adaln) branch2 = channel_scale(branch2, gate2);
  return add(x1, branch2);
}

std::vector<Shape> TransformerBlock::mixer_weight_shapes() const {
  return {attn_.wq.shape(), attn_.wk.shape(), attn_.wv.shape(), attn_.wo.shape(), mlp_w1_.shape(), mlp_w2_.shape()};
}

}  // namespace ditsr
