#include "ditsr/architecture.hpp"

#include <algorithm>
#include <numeric>

#include "json.hpp"

namespace ditsr {

namespace {

using json = nlohmann::ordered_json;

// One step of the construction walk shared by the parameter plan, the
// cost model and the denoiser constructor.
struct LayoutItem {
  enum class Kind { linear, block } kind = Kind::linear;
  std::string name;  // linear name, or block prefix ending in '.'
  std::size_t in = 0, out = 0;
  BlockSpec block;
  int stage = 0;
  std::size_t level = 0;  // spatial side is resolution >> level
  ParamRole role = ParamRole::projection;
  bool zero_init = false;
};

BlockSpec stage_block_spec(const DenoiserConfig& c, std::size_t stage, std::size_t index) {
  BlockSpec b;
  b.width = c.block_width(stage);
  b.heads = c.heads;
  b.window = c.window;
  b.shift = index % 2 == 1 ? c.window / 2 : 0;
  b.fft_window = c.fft_window;
  b.d_t = c.d_t;
  b.mode = c.cond_mode;
  b.mlp_ratio = c.mlp_ratio;
  b.rel_pos_bias = c.rel_pos_bias;
  b.norm_eps = c.norm_eps;
  return b;
}

std::vector<LayoutItem> layout(const DenoiserConfig& c) {
  c.validate();
  std::vector<LayoutItem> items;
  auto lin = [&](std::string name, std::size_t in, std::size_t out, std::size_t stage, std::size_t level,
                 ParamRole role = ParamRole::projection, bool zero = false) {
    LayoutItem it;
    it.name = std::move(name);
    it.in = in;
    it.out = out;
    it.stage = static_cast<int>(stage);
    it.level = level;
    it.role = role;
    it.zero_init = zero;
    items.push_back(std::move(it));
  };
  auto seg = [&](const std::string& prefix, std::size_t stage, std::size_t count, std::size_t level) {
    const std::size_t io = c.stage_channels[stage];
    const bool project = c.arch == ArchKind::ours;
    if (project) lin(prefix + ".proj_in", io, c.realloc_channel, stage, level);
    for (std::size_t j = 0; j < count; ++j) {
      LayoutItem it;
      it.kind = LayoutItem::Kind::block;
      it.name = prefix + ".blocks." + std::to_string(j) + ".";
      it.block = stage_block_spec(c, stage, j);
      it.stage = static_cast<int>(stage);
      it.level = level;
      items.push_back(std::move(it));
    }
    if (project) lin(prefix + ".proj_out", c.realloc_channel, io, stage, level);
  };

  const auto& ch = c.stage_channels;
  lin("head_in", c.in_channels(), ch[0], 0, 0, ParamRole::head);
  if (c.arch == ArchKind::isotropic) {
    for (std::size_t k = 0; k < ch.size(); ++k) {
      const std::string prefix = "stage" + std::to_string(k);
      seg(prefix, k, c.blocks_per_stage[k], 0);
      lin(prefix + ".conv", ch[k], ch[k], k, 0);
    }
  } else {
    const std::size_t last = ch.size() - 1;
    for (std::size_t s = 0; s < last; ++s) {
      seg("enc" + std::to_string(s), s, c.blocks_per_stage[s], s);
      lin("down" + std::to_string(s), 4 * ch[s], ch[s + 1], s, s + 1);
    }
    seg("mid", last, c.blocks_per_stage[last], last);
    for (std::size_t s = last; s-- > 0;) {
      lin("up" + std::to_string(s), ch[s + 1], 4 * ch[s], s, s + 1);
      lin("fuse" + std::to_string(s), 2 * ch[s], ch[s], s, s);
      seg("dec" + std::to_string(s), s, c.blocks_per_stage[s], s);
    }
  }
  lin("head_out", ch[0], c.out_channels(), 0, 0, ParamRole::head, true);
  return items;
}

std::vector<ParamSpec> linear_specs(const LayoutItem& it) {
  ParamSpec w;
  w.name = it.name + ".w";
  w.shape = {it.out, it.in};
  w.role = it.role;
  w.init = it.zero_init ? Init::zeros : Init::fan_in_normal;
  w.fan_in = it.in;
  w.stage = it.stage;
  ParamSpec b;
  b.name = it.name + ".b";
  b.shape = {it.out};
  b.role = it.role;
  b.init = Init::zeros;
  b.stage = it.stage;
  return {w, b};
}

struct ItemCost {
  std::uint64_t macs = 0;
  std::uint64_t flops = 0;
};

ItemCost item_cost(const LayoutItem& it, std::size_t resolution) {
  const std::size_t side = resolution >> it.level;
  ItemCost cost;
  if (it.kind == LayoutItem::Kind::linear) {
    // down/up layers are evaluated at the coarser level of the pair.
    cost.macs = std::uint64_t{side} * side * it.in * it.out;
    cost.flops = 2 * cost.macs;
  } else {
    const BlockCost b = block_cost(it.block, side, side);
    cost.macs = b.linear_macs + b.attention_macs + b.time_macs;
    cost.flops = b.flops();
  }
  return cost;
}

std::vector<std::size_t> parse_sizes(const json& j, const char* key) {
  std::vector<std::size_t> out;
  for (const auto& v : j.at(key)) out.push_back(v.get<std::size_t>());
  return out;
}

DenoiserConfig ushape_like(std::string name, std::vector<std::size_t> blocks, std::vector<std::size_t> channels) {
  DenoiserConfig c;
  c.name = std::move(name);
  c.arch = ArchKind::ushape;
  c.cond_mode = CondMode::adaln;
  c.blocks_per_stage = std::move(blocks);
  c.stage_channels = std::move(channels);
  c.base_channel = c.stage_channels.front();
  return c;
}

void rescale_base(DenoiserConfig& c, std::size_t base) {
  const std::size_t old = c.stage_channels.front();
  for (auto& ch : c.stage_channels) {
    if (ch * base % old != 0) throw ConfigError("base_channel " + std::to_string(base) + " does not rescale stage widths");
    ch = ch * base / old;
  }
  c.base_channel = base;
}

}  // namespace

const char* to_string(ArchKind kind) {
  switch (kind) {
    case ArchKind::isotropic: return "isotropic";
    case ArchKind::ushape: return "ushape";
    case ArchKind::ours: return "ours";
  }
  return "unknown";
}

ArchKind parse_arch_kind(const std::string& text) {
  if (text == "isotropic") return ArchKind::isotropic;
  if (text == "ushape") return ArchKind::ushape;
  if (text == "ours") return ArchKind::ours;
  throw ConfigError("unknown arch_kind '" + text + "' (expected isotropic, ushape or ours)");
}

std::size_t DenoiserConfig::levels() const { return arch == ArchKind::isotropic ? 1 : stage_channels.size(); }

std::size_t DenoiserConfig::resolution_multiple() const {
  return (std::size_t{1} << (levels() - 1)) * std::lcm(window, fft_window);
}

std::size_t DenoiserConfig::block_width(std::size_t stage) const {
  return arch == ArchKind::ours ? realloc_channel : stage_channels.at(stage);
}

void DenoiserConfig::validate() const {
  if (stage_channels.empty()) throw ConfigError(name + ": stage_channels is empty");
  if (blocks_per_stage.size() != stage_channels.size()) {
    throw ConfigError(name + ": blocks_per_stage and stage_channels differ in length");
  }
  if (base_channel != 0 && base_channel != stage_channels.front()) {
    throw ConfigError(name + ": base_channel must equal the first stage width");
  }
  if (image_channels == 0) throw ConfigError(name + ": image_channels must be positive");
  if (levels() > 16) throw ConfigError(name + ": too many stages");
  if (arch == ArchKind::isotropic &&
      std::any_of(stage_channels.begin(), stage_channels.end(), [&](auto c) { return c != stage_channels[0]; })) {
    throw ConfigError(name + ": isotropic stages must share one width");
  }
  if (arch == ArchKind::ours) {
    const auto [lo, hi] = std::minmax_element(stage_channels.begin(), stage_channels.end());
    if (!(*lo < realloc_channel && realloc_channel < *hi)) {
      throw ConfigError(name + ": realloc_channel " + std::to_string(realloc_channel) +
                        " must lie strictly between the smallest and largest stage width");
    }
  }
  for (std::size_t s = 0; s < stage_channels.size(); ++s) {
    const std::size_t c = stage_channels[s];
    if (c == 0 || c % heads != 0 || c % default_norm_groups(c) != 0) {
      throw ConfigError(name + ": stage width " + std::to_string(c) + " not divisible by " + std::to_string(heads) +
                        " heads");
    }
    stage_block_spec(*this, s, 0).validate();
  }
}

DenoiserConfig preset(const std::string& name) {
  DenoiserConfig c;
  if (name == "isotropic") {
    c.name = name;
    c.arch = ArchKind::isotropic;
    c.cond_mode = CondMode::adaln;
    c.blocks_per_stage = {6, 6, 6, 6, 6};
    c.stage_channels = {160, 160, 160, 160, 160};
  } else if (name == "ushape") {
    c = ushape_like(name, {6, 6, 6, 6}, {160, 320, 320, 640});
  } else if (name == "shallower_udit") {
    c = ushape_like(name, {4, 4, 4, 4}, {160, 320, 320, 640});
  } else if (name == "narrower_udit") {
    c = ushape_like(name, {6, 6, 6, 6}, {160, 320, 320, 640});
    rescale_base(c, 144);
  } else if (name == "ours_adaln" || name == "ours_adafm") {
    c = ushape_like(name, {6, 6, 6, 6}, {160, 320, 320, 640});
    c.arch = ArchKind::ours;
    c.realloc_channel = 192;
    c.cond_mode = name == "ours_adaln" ? CondMode::adaln : CondMode::adafm;
  } else if (name == "ours_lite") {
    c = ushape_like(name, {4, 4, 4}, {128, 256, 256});
    c.arch = ArchKind::ours;
    c.realloc_channel = 160;
    c.cond_mode = CondMode::adafm;
  } else if (name == "micro") {
    c = ushape_like(name, {1, 1}, {8, 16});
    c.arch = ArchKind::ours;
    c.cond_mode = CondMode::adafm;
    c.realloc_channel = 12;
    c.window = 4;
    c.fft_window = 4;
    c.heads = 2;
    c.d_t = 16;
  } else if (name == "toy") {
    c = ushape_like(name, {2, 2}, {16, 32});
    c.arch = ArchKind::ours;
    c.cond_mode = CondMode::adafm;
    c.realloc_channel = 24;
    c.window = 8;
    c.fft_window = 8;
    c.heads = 2;
    c.d_t = 32;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  c.base_channel = c.stage_channels.front();
  c.validate();
  return c;
}

std::vector<std::string> preset_names() {
  return {"isotropic",  "ushape",         "ours_adaln",    "ours_adafm", "ours_lite",
          "shallower_udit", "narrower_udit", "micro", "toy"};
}

std::string config_to_json(const DenoiserConfig& c) {
  json j;
  j["name"] = c.name;
  j["arch_kind"] = to_string(c.arch);
  j["cond_mode"] = to_string(c.cond_mode);
  j["blocks_per_stage"] = c.blocks_per_stage;
  j["stage_channels"] = c.stage_channels;
  j["realloc_channel"] = c.realloc_channel;
  j["base_channel"] = c.stage_channels.empty() ? 0 : c.stage_channels.front();
  j["window"] = c.window;
  j["fft_window"] = c.fft_window;
  j["heads"] = c.heads;
  j["d_t"] = c.d_t;
  j["in_channels"] = c.in_channels();
  j["out_channels"] = c.out_channels();
  j["mlp_ratio"] = c.mlp_ratio;
  j["rel_pos_bias"] = c.rel_pos_bias;
  j["norm_eps"] = c.norm_eps;
  return j.dump(2);
}

DenoiserConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  try {
    DenoiserConfig c = j.contains("preset") ? preset(j.at("preset").get<std::string>()) : DenoiserConfig{};
    if (j.contains("name")) c.name = j.at("name").get<std::string>();
    if (j.contains("arch_kind")) c.arch = parse_arch_kind(j.at("arch_kind").get<std::string>());
    if (j.contains("cond_mode")) c.cond_mode = parse_cond_mode(j.at("cond_mode").get<std::string>());
    if (j.contains("blocks_per_stage")) c.blocks_per_stage = parse_sizes(j, "blocks_per_stage");
    if (j.contains("stage_channels")) {
      c.stage_channels = parse_sizes(j, "stage_channels");
      c.base_channel = c.stage_channels.empty() ? 0 : c.stage_channels.front();
    }
    if (j.contains("base_channel")) {
      const auto base = j.at("base_channel").get<std::size_t>();
      if (c.stage_channels.empty()) throw ConfigError("base_channel given without stage_channels");
      if (base != c.stage_channels.front()) rescale_base(c, base);
    }
    if (j.contains("realloc_channel")) c.realloc_channel = j.at("realloc_channel").get<std::size_t>();
    if (j.contains("window")) c.window = j.at("window").get<std::size_t>();
    if (j.contains("fft_window")) c.fft_window = j.at("fft_window").get<std::size_t>();
    if (j.contains("heads")) c.heads = j.at("heads").get<std::size_t>();
    if (j.contains("d_t")) c.d_t = j.at("d_t").get<std::size_t>();
    if (j.contains("image_channels")) c.image_channels = j.at("image_channels").get<std::size_t>();
    if (j.contains("out_channels")) c.image_channels = j.at("out_channels").get<std::size_t>();
    if (j.contains("in_channels") && j.at("in_channels").get<std::size_t>() != c.in_channels()) {
      throw ConfigError("in_channels must be twice the image channel count");
    }
    if (j.contains("mlp_ratio")) c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    if (j.contains("rel_pos_bias")) c.rel_pos_bias = j.at("rel_pos_bias").get<bool>();
    if (j.contains("norm_eps")) c.norm_eps = j.at("norm_eps").get<double>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

std::vector<ParamSpec> param_plan(const DenoiserConfig& config) {
  std::vector<ParamSpec> plan;
  for (const auto& it : layout(config)) {
    if (it.kind == LayoutItem::Kind::linear) {
      for (auto& s : linear_specs(it)) plan.push_back(std::move(s));
    } else {
      for (auto s : block_param_specs(it.block)) {
        s.name = it.name + s.name;
        s.stage = it.stage;
        plan.push_back(std::move(s));
      }
    }
  }
  return plan;
}

AccountingReport count_params(const DenoiserConfig& config) {
  AccountingReport report;
  report.stages.resize(config.stage_channels.size());
  for (std::size_t s = 0; s < report.stages.size(); ++s) report.stages[s].stage = s;
  for (const auto& p : param_plan(config)) {
    report.stages.at(static_cast<std::size_t>(p.stage)).params += p.numel();
    report.total += p.numel();
  }
  for (auto& st : report.stages) {
    st.share = report.total ? static_cast<double>(st.params) / static_cast<double>(report.total) : 0.0;
  }
  return report;
}

AccountingReport estimate_flops(const DenoiserConfig& config, std::size_t resolution) {
  if (resolution == 0 || resolution % config.resolution_multiple() != 0) {
    throw ResolutionError("resolution " + std::to_string(resolution) + " must be a positive multiple of " +
                          std::to_string(config.resolution_multiple()));
  }
  AccountingReport report = count_params(config);
  report.total = 0;
  for (const auto& it : layout(config)) {
    const auto cost = item_cost(it, resolution);
    report.stages.at(static_cast<std::size_t>(it.stage)).flops += cost.flops;
    report.total += cost.flops;
  }
  for (auto& st : report.stages) {
    st.resolution = config.arch == ArchKind::isotropic ? resolution : resolution >> st.stage;
    st.share = report.total ? static_cast<double>(st.flops) / static_cast<double>(report.total) : 0.0;
  }
  return report;
}

std::uint64_t estimate_macs(const DenoiserConfig& config, std::size_t resolution) {
  std::uint64_t total = 0;
  for (const auto& it : layout(config)) total += item_cost(it, resolution).macs;
  return total;
}

std::map<ParamRole, std::uint64_t> params_by_role(const DenoiserConfig& config) {
  std::map<ParamRole, std::uint64_t> out;
  for (const auto& p : param_plan(config)) out[p.role] += p.numel();
  return out;
}

// ---- resampling ------------------------------------------------------------

namespace {

std::shared_ptr<const std::vector<std::size_t>> s2d_index(std::size_t c, std::size_t h, std::size_t w) {
  const std::size_t h2 = h / 2, w2 = w / 2;
  std::vector<std::size_t> idx(c * h * w);
  for (std::size_t di = 0; di < 2; ++di) {
    for (std::size_t dj = 0; dj < 2; ++dj) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t oc = (di * 2 + dj) * c + ch;
        for (std::size_t y = 0; y < h2; ++y) {
          for (std::size_t x = 0; x < w2; ++x) idx[(oc * h2 + y) * w2 + x] = (ch * h + 2 * y + di) * w + 2 * x + dj;
        }
      }
    }
  }
  return std::make_shared<const std::vector<std::size_t>>(std::move(idx));
}

}  // namespace

Tensor space_to_depth(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("space_to_depth: expected [C, H, W], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) throw DimensionError("space_to_depth: odd spatial size " + shape_str(x.shape()));
  return gather(x, s2d_index(c, h, w), {4 * c, h / 2, w / 2});
}

Tensor depth_to_space(const Tensor& x) {
  if (x.rank() != 3 || x.dim(0) % 4 != 0) {
    throw DimensionError("depth_to_space: expected [4C, H, W], got " + shape_str(x.shape()));
  }
  const std::size_t c = x.dim(0) / 4, h = 2 * x.dim(1), w = 2 * x.dim(2);
  const auto fwd = s2d_index(c, h, w);
  std::vector<std::size_t> inv(fwd->size());
  for (std::size_t i = 0; i < fwd->size(); ++i) inv[(*fwd)[i]] = i;
  return gather(x, std::make_shared<const std::vector<std::size_t>>(std::move(inv)), {c, h, w});
}

// ---- denoiser --------------------------------------------------------------

Denoiser::Denoiser(DenoiserConfig config, std::uint64_t seed) : config_(std::move(config)) {
  CounterRng rng(seed);
  for (const auto& spec : param_plan(config_)) store_.add(spec, rng);

  const auto& ch = config_.stage_channels;
  const bool project = config_.arch == ArchKind::ours;
  head_in_ = linear("head_in");
  head_out_ = linear("head_out");
  if (config_.arch == ArchKind::isotropic) {
    for (std::size_t k = 0; k < ch.size(); ++k) {
      const std::string prefix = "stage" + std::to_string(k);
      iso_stages_.push_back(segment(prefix, k, false));
      iso_proj_.push_back(linear(prefix + ".conv"));
    }
    return;
  }
  const std::size_t last = ch.size() - 1;
  for (std::size_t s = 0; s < last; ++s) {
    encoder_.push_back(segment("enc" + std::to_string(s), s, project));
    down_.push_back(linear("down" + std::to_string(s)));
    up_.push_back(linear("up" + std::to_string(s)));
    fuse_.push_back(linear("fuse" + std::to_string(s)));
    decoder_.push_back(segment("dec" + std::to_string(s), s, project));
  }
  middle_ = segment("mid", last, project);
}

Denoiser::Linear Denoiser::linear(const std::string& name) const {
  return Linear{store_.get(name + ".w"), store_.get(name + ".b")};
}

Denoiser::Segment Denoiser::segment(const std::string& prefix, std::size_t stage, bool project) const {
  Segment seg;
  seg.project = project;
  if (project) {
    seg.proj_in = linear(prefix + ".proj_in");
    seg.proj_out = linear(prefix + ".proj_out");
  }
  for (std::size_t j = 0; j < config_.blocks_per_stage[stage]; ++j) {
    seg.blocks.emplace_back(stage_block_spec(config_, stage, j), store_, prefix + ".blocks." + std::to_string(j) + ".");
  }
  return seg;
}

Tensor Denoiser::run(const Segment& seg, const Tensor& x, const Tensor& embed) const {
  Tensor h = seg.project ? seg.proj_in(x) : x;
  for (const auto& b : seg.blocks) h = b.forward(h, embed);
  return seg.project ? seg.proj_out(h) : h;
}

void Denoiser::check_inputs(const Tensor& x_t, const Tensor& y0) const {
  if (x_t.rank() != 3 || x_t.dim(0) != config_.image_channels) {
    throw DimensionError("denoiser: expected x_t of shape [" + std::to_string(config_.image_channels) +
                         ", H, W], got " + shape_str(x_t.shape()));
  }
  if (y0.shape() != x_t.shape()) {
    throw DimensionError("denoiser: y0 " + shape_str(y0.shape()) + " does not match x_t " + shape_str(x_t.shape()));
  }
  const std::size_t m = config_.resolution_multiple();
  if (x_t.dim(1) % m != 0 || x_t.dim(2) % m != 0) {
    throw ResolutionError("denoiser: input " + std::to_string(x_t.dim(1)) + "x" + std::to_string(x_t.dim(2)) +
                          " is not a multiple of " + std::to_string(m) + " (2^(stages-1) * max(window, fft_window))");
  }
}

Tensor Denoiser::downsample(const Tensor& x, std::size_t stage) const {
  return down_.at(stage)(space_to_depth(x));
}

Tensor Denoiser::upsample(const Tensor& x, std::size_t stage) const {
  return depth_to_space(up_.at(stage)(x));
}

Tensor Denoiser::forward(const Tensor& x_t, const Tensor& y0, std::int64_t t) const {
  check_inputs(x_t, y0);
  const Tensor embed = sinusoidal_embed(t, config_.d_t);
  Tensor x = head_in_(concat({x_t, y0}, 0));
  if (config_.arch == ArchKind::isotropic) {
    for (std::size_t k = 0; k < iso_stages_.size(); ++k) x = add(x, iso_proj_[k](run(iso_stages_[k], x, embed)));
    return head_out_(x);
  }
  std::vector<Tensor> skips;
  for (std::size_t s = 0; s < encoder_.size(); ++s) {
    x = run(encoder_[s], x, embed);
    skips.push_back(x);
    x = downsample(x, s);
  }
  x = run(middle_, x, embed);
  for (std::size_t s = encoder_.size(); s-- > 0;) {
    x = fuse_[s](concat({upsample(x, s), skips[s]}, 0));
    x = run(decoder_[s], x, embed);
  }
  return head_out_(x);
}

std::vector<const TransformerBlock*> Denoiser::blocks() const {
  std::vector<const TransformerBlock*> out;
  auto collect = [&](const Segment& seg) {
    for (const auto& b : seg.blocks) out.push_back(&b);
  };
  for (const auto& seg : iso_stages_) collect(seg);
  for (const auto& seg : encoder_) collect(seg);
  if (config_.arch != ArchKind::isotropic) collect(middle_);
  for (std::size_t s = decoder_.size(); s-- > 0;) collect(decoder_[s]);
  return out;
}

std::vector<std::size_t> Denoiser::mixer_widths() const {
  std::vector<std::size_t> widths;
  for (const auto* b : blocks()) {
    for (const auto& shape : b->mixer_weight_shapes()) {
      // MLP matrices are [4C, C] / [C, 4C]; report the non-expanded side.
      widths.push_back(std::min(shape[0], shape[1]));
    }
  }
  return widths;
}

Denoiser build_denoiser(const DenoiserConfig& config, std::uint64_t seed) { return Denoiser(config, seed); }

}  // namespace ditsr
