#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ditsr/blocks.hpp"
#include "ditsr/params.hpp"
#include "ditsr/tensor.hpp"

namespace ditsr {

enum class ArchKind { isotropic, ushape, ours };

const char* to_string(ArchKind kind);
ArchKind parse_arch_kind(const std::string& text);

struct DenoiserConfig {
  std::string name = "custom";
  ArchKind arch = ArchKind::ours;
  CondMode cond_mode = CondMode::adafm;
  std::vector<std::size_t> blocks_per_stage;
  std::vector<std::size_t> stage_channels;
  std::size_t realloc_channel = 0;  // ours only
  std::size_t base_channel = 0;     // == stage_channels[0]
  std::size_t window = 8;           // attention window w_a
  std::size_t fft_window = 8;       // AdaFM window p
  std::size_t heads = 8;
  std::size_t d_t = 128;
  std::size_t image_channels = 1;
  std::size_t mlp_ratio = 4;
  bool rel_pos_bias = true;
  double norm_eps = 1e-6;

  std::size_t in_channels() const { return 2 * image_channels; }
  std::size_t out_channels() const { return image_channels; }
  /// Number of distinct resolutions (1 for isotropic).
  std::size_t levels() const;
  /// H and W must be multiples of this.
  std::size_t resolution_multiple() const;
  /// Channel width at which the blocks of a given stage run.
  std::size_t block_width(std::size_t stage) const;

  /// Throws ConfigError on any invariant violation.
  void validate() const;
};

/// Named presets: isotropic, ushape, ours_adaln, ours_adafm, ours_lite,
/// shallower_udit, narrower_udit, plus the small `micro` and `toy` configs.
DenoiserConfig preset(const std::string& name);
std::vector<std::string> preset_names();

std::string config_to_json(const DenoiserConfig& config);
/// Accepts either a full object or one holding `preset` plus overrides.
DenoiserConfig config_from_json(const std::string& text);

/// Every parameter the denoiser allocates, in construction order.
std::vector<ParamSpec> param_plan(const DenoiserConfig& config);

struct StageReport {
  std::size_t stage = 0;
  std::size_t resolution = 0;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  double share = 0.0;
};

struct AccountingReport {
  std::uint64_t total = 0;
  std::vector<StageReport> stages;
};

/// Shares are fractions of the parameter total; flops columns are zero.
AccountingReport count_params(const DenoiserConfig& config);
/// Shares are fractions of the FLOPs total; params columns are filled too.
AccountingReport estimate_flops(const DenoiserConfig& config, std::size_t resolution);
/// Dense multiply-accumulates of one forward pass (linear + attention +
/// time-MLP), comparable with mac_count().
std::uint64_t estimate_macs(const DenoiserConfig& config, std::size_t resolution);
std::map<ParamRole, std::uint64_t> params_by_role(const DenoiserConfig& config);

/// [C, H, W] -> [4C, H/2, W/2]; channel (di*2 + dj)*C + c holds x[c, 2y+di, 2x+dj].
Tensor space_to_depth(const Tensor& x);
Tensor depth_to_space(const Tensor& x);

class Denoiser {
 public:
  Denoiser(DenoiserConfig config, std::uint64_t seed);

  /// x0 prediction from the noisy state and the upsampled LR image.
  Tensor forward(const Tensor& x_t, const Tensor& y0, std::int64_t t) const;

  const DenoiserConfig& config() const { return config_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// Every transformer block in forward order.
  std::vector<const TransformerBlock*> blocks() const;
  /// Channel widths of all attention/MLP weight matrices.
  std::vector<std::size_t> mixer_widths() const;

  /// [C, H, W] -> [C_next, H/2, W/2] for encoder stage `stage`.
  Tensor downsample(const Tensor& x, std::size_t stage) const;
  /// [C_{stage+1}, H, W] -> [C_stage, 2H, 2W].
  Tensor upsample(const Tensor& x, std::size_t stage) const;

 private:
  struct Linear {
    Tensor w, b;
    Tensor operator()(const Tensor& x) const { return linear_channels(x, w, b); }
  };
  struct Segment {
    bool project = false;
    Linear proj_in, proj_out;
    std::vector<TransformerBlock> blocks;
  };

  Linear linear(const std::string& name) const;
  Segment segment(const std::string& prefix, std::size_t stage, bool project) const;
  Tensor run(const Segment& seg, const Tensor& x, const Tensor& embed) const;
  void check_inputs(const Tensor& x_t, const Tensor& y0) const;

  DenoiserConfig config_;
  ParamStore store_;
  Linear head_in_, head_out_;
  std::vector<Segment> encoder_, decoder_;  // decoder_[s] pairs with encoder_[s]
  Segment middle_;
  std::vector<Linear> down_, up_, fuse_;
  std::vector<Segment> iso_stages_;
  std::vector<Linear> iso_proj_;
};

Denoiser build_denoiser(const DenoiserConfig& config, std::uint64_t seed);

}  // namespace ditsr
