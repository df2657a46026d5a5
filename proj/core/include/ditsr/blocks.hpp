#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ditsr/params.hpp"
#include "ditsr/tensor.hpp"

namespace ditsr {

/// Time-step conditioning mechanism inside each transformer block.
enum class CondMode { adaln, adafm };

const char* to_string(CondMode mode);
CondMode parse_cond_mode(const std::string& text);

/// Interleaved sin/cos embedding: e[2i] = sin(t w_i), e[2i+1] = cos(t w_i),
/// w_i = 10000^(-2i/d). Throws ValidationError for odd d.
Tensor sinusoidal_embed(std::int64_t t, std::size_t d);

/// Default group count: 16 for wide layers, 8 for narrow ones, reduced to
/// the gcd with `channels` when it does not divide evenly.
std::size_t default_norm_groups(std::size_t channels);

// ---- time conditioning -----------------------------------------------------

struct TimeMlpWeights {
  Tensor w1, b1;  // [d_t, d_t], [d_t]
  Tensor w2, b2;  // [d_t, 2 * out], [2 * out]
};

/// Width of each of f_time^1, f_time^2: 3C for AdaLN, p^2 for AdaFM.
std::size_t conditioning_width(CondMode mode, std::size_t channels, std::size_t fft_window);

/// Two-layer GELU MLP from the base embedding to (f_time^1, f_time^2).
std::pair<Tensor, Tensor> time_mlp(const Tensor& base_embed, const TimeMlpWeights& weights, CondMode mode,
                                   std::size_t channels, std::size_t fft_window);

/// Size of the final conditioning projection, as the two mechanisms are
/// usually compared: adaln d_t*C*3*2, adafm d_t*p^2*2.
std::uint64_t conditioning_param_count(CondMode mode, std::size_t d_t, std::size_t channels, std::size_t fft_window);

/// x * (1 + scale[c]) + shift[c] with (scale, shift, gate) = split(f_time).
/// Returns the modulated map and the residual gate.
std::pair<Tensor, Tensor> adaln_modulate(const Tensor& x, const Tensor& f_time);

/// Averages each entry of a centered p x p scale matrix with its
/// conjugate-mirror bin so the modulated spectrum of a real map stays
/// Hermitian.
Tensor adafm_symmetrize(const Tensor& raw_scale);

/// Per p x p window and channel: fold(idft2(S (.) dft2(unfold(x)))), with
/// the same centered scale matrix S (reshaped row-major from f_time) for
/// every window and channel. Differentiable in x and f_time. Throws
/// NumericError if the inverse transform leaves an imaginary residue,
/// i.e. S was not conjugate-symmetric.
Tensor adafm_modulate(const Tensor& x, const Tensor& f_time, std::size_t fft_window);

/// Conjugate-mirror bin of centered index u in a length-p axis.
inline std::size_t mirror_bin(std::size_t u, std::size_t p) { return (p - u) % p; }

// ---- attention -------------------------------------------------------------

struct AttentionWindowSpec {
  std::size_t window = 8;
  std::size_t shift = 0;
  std::size_t heads = 1;
  std::size_t head_dim = 1;
};

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // [C, C] (in x out) and [C]
  std::optional<Tensor> rel_bias;         // [heads, (2w-1)^2]
};

/// Shifted-window multi-head self-attention on a [C, H, W] map. When
/// `probabilities` is given it receives the [windows, heads, T, T] softmax.
Tensor windowed_mhsa(const Tensor& x, const AttentionWindowSpec& spec, const AttentionWeights& weights,
                     Tensor* probabilities = nullptr);

/// [C, H, W] -> [windows, w*w, C] after a cyclic shift by -shift on both axes.
Tensor window_partition(const Tensor& x, std::size_t window, std::size_t shift);
/// Inverse of window_partition.
Tensor window_merge(const Tensor& tokens, std::size_t channels, std::size_t height, std::size_t width,
                    std::size_t window, std::size_t shift);

// ---- transformer block -----------------------------------------------------

struct BlockSpec {
  std::size_t width = 0;
  std::size_t heads = 1;
  std::size_t window = 8;
  std::size_t shift = 0;
  std::size_t fft_window = 8;
  std::size_t d_t = 32;
  CondMode mode = CondMode::adafm;
  std::size_t mlp_ratio = 4;
  std::size_t groups = 0;  // 0 -> default_norm_groups(width)
  bool rel_pos_bias = true;
  double norm_eps = 1e-6;

  std::size_t norm_groups() const { return groups ? groups : default_norm_groups(width); }
  void validate() const;
};

/// Parameter list of one block, names relative to the block prefix.
std::vector<ParamSpec> block_param_specs(const BlockSpec& spec);

/// Analytic cost of one block at a given resolution.
struct BlockCost {
  std::uint64_t linear_macs = 0;     // q/k/v/o projections, MLP
  std::uint64_t attention_macs = 0;  // QK^T and AV
  std::uint64_t time_macs = 0;       // time-MLP (resolution independent)
  std::uint64_t spectral_flops = 0;  // AdaFM transforms and scaling
  std::uint64_t flops() const { return 2 * (linear_macs + attention_macs + time_macs) + spectral_flops; }
};

BlockCost block_cost(const BlockSpec& spec, std::size_t height, std::size_t width);

/// Flop estimate for one real-input p x p transform (forward or inverse),
/// 2.5 N log2 N with N = p^2. The half-spectrum scaling adds 2 p (p/2 + 1).
std::uint64_t fft2_flops(std::size_t p);

class TransformerBlock {
 public:
  TransformerBlock(BlockSpec spec, const ParamStore& store, const std::string& prefix);

  /// x = x + MHSA(Cond(Norm(x), f1)); x = x + MLP(Cond(Norm(x), f2)).
  Tensor forward(const Tensor& x, const Tensor& base_embed) const;

  const BlockSpec& spec() const { return spec_; }
  const AttentionWeights& attention() const { return attn_; }
  const TimeMlpWeights& time_weights() const { return time_; }
  /// Widths of every attention/MLP weight matrix (for structural probes).
  std::vector<Shape> mixer_weight_shapes() const;

 private:
  Tensor condition(const Tensor& h, const Tensor& f_time, Tensor* gate) const;

  BlockSpec spec_;
  AttentionWindowSpec attn_spec_;
  AttentionWeights attn_;
  TimeMlpWeights time_;
  Tensor norm1_gamma_, norm1_beta_, norm2_gamma_, norm2_beta_;
  Tensor mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;
};

}  // namespace ditsr
