#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "ditsr/architecture.hpp"
#include "test_util.hpp"

using namespace ditsr;
using ditsr::test::max_abs;
using ditsr::test::max_abs_diff;
using ditsr::test::randn;

namespace {

double share_sum(const AccountingReport& r) {
  double s = 0.0;
  for (const auto& st : r.stages) s += st.share;
  return s;
}

// Block widths by stage read from the parameter plan (no allocation).
std::map<int, std::set<std::size_t>> block_widths(const DenoiserConfig& cfg) {
  std::map<int, std::set<std::size_t>> out;
  for (const auto& ps : param_plan(cfg)) {
    if (ps.name.size() > 11 && ps.name.compare(ps.name.size() - 11, 11, "norm1.gamma") == 0) {
      out[ps.stage].insert(ps.shape[0]);
    }
  }
  return out;
}

}  // namespace

// ============================================================================
// Presets and configuration
// ============================================================================

TEST(PresetTest, TableValues) {
  const auto iso = preset("isotropic");
  EXPECT_EQ(iso.blocks_per_stage, (std::vector<std::size_t>{6, 6, 6, 6, 6}));
  EXPECT_EQ(iso.stage_channels, (std::vector<std::size_t>(5, 160)));
  const auto us = preset("ushape");
  EXPECT_EQ(us.blocks_per_stage, (std::vector<std::size_t>{6, 6, 6, 6}));
  EXPECT_EQ(us.stage_channels, (std::vector<std::size_t>{160, 320, 320, 640}));
  EXPECT_EQ(preset("ours_adafm").realloc_channel, 192u);
  EXPECT_EQ(preset("ours_adaln").cond_mode, CondMode::adaln);
  EXPECT_EQ(preset("ours_lite").blocks_per_stage, (std::vector<std::size_t>{4, 4, 4}));
  EXPECT_EQ(preset("ours_lite").realloc_channel, 160u);
  EXPECT_EQ(preset("narrower_udit").base_channel, 144u);
  EXPECT_EQ(preset("shallower_udit").blocks_per_stage, (std::vector<std::size_t>{4, 4, 4, 4}));
}

TEST(PresetTest, UnknownNameThrows) { EXPECT_THROW(preset("resnet"), ConfigError); }

TEST(PresetTest, AllPresetsValidate) {
  for (const auto& name : preset_names()) EXPECT_NO_THROW(preset(name).validate()) << name;
}

TEST(ConfigTest, ReallocatedWidthMustSitBetweenStageWidths) {
  auto cfg = preset("ours_adafm");
  cfg.realloc_channel = 640;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.realloc_channel = 160;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(ConfigTest, MismatchedStageListsThrow) {
  auto cfg = preset("ushape");
  cfg.blocks_per_stage.pop_back();
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(ConfigTest, JsonRoundTripAndOverrides) {
  const auto cfg = preset("toy");
  const auto back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(config_to_json(back), config_to_json(cfg));
  const auto over = config_from_json(R"({"preset": "ushape", "blocks_per_stage": [2, 2, 2, 2]})");
  EXPECT_EQ(over.blocks_per_stage, (std::vector<std::size_t>{2, 2, 2, 2}));
  EXPECT_EQ(over.stage_channels, preset("ushape").stage_channels);
  EXPECT_THROW(config_from_json("{not json"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"preset": "ours_adafm", "cond_mode": "film"})"), ConfigError);
}

// ============================================================================
// Structure
// ============================================================================

TEST(StructureTest, OursRunsEveryBlockAtReallocatedWidth) {
  for (const auto& [stage, widths] : block_widths(preset("ours_adafm"))) {
    EXPECT_EQ(widths, (std::set<std::size_t>{192})) << "stage " << stage;
  }
}

TEST(StructureTest, UShapeWidthsFollowStageChannels) {
  const auto w = block_widths(preset("ushape"));
  EXPECT_EQ(w.at(0), (std::set<std::size_t>{160}));
  EXPECT_EQ(w.at(1), (std::set<std::size_t>{320}));
  EXPECT_EQ(w.at(2), (std::set<std::size_t>{320}));
  EXPECT_EQ(w.at(3), (std::set<std::size_t>{640}));
}

TEST(StructureTest, IsotropicKeepsOneResolution) {
  const auto cfg = preset("isotropic");
  EXPECT_EQ(cfg.levels(), 1u);
  const auto flops = estimate_flops(cfg, 64);
  for (const auto& st : flops.stages) EXPECT_EQ(st.resolution, 64u);
}

TEST(StructureTest, MixerWidthProbeOnBuiltModel) {
  const Denoiser model(preset("toy"), 1);
  const auto widths = model.mixer_widths();
  ASSERT_FALSE(widths.empty());
  for (std::size_t w : widths) EXPECT_EQ(w, preset("toy").realloc_channel);
}

TEST(StructureTest, SpaceToDepthOfCheckerboard) {
  std::vector<double> v(16);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) v[y * 4 + x] = static_cast<double>((y % 2) * 2 + x % 2);
  const Tensor s = space_to_depth(Tensor({1, 4, 4}, v));
  ASSERT_EQ(s.shape(), (Shape{4, 2, 2}));
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(s[c * 4 + i], static_cast<double>(c));
  EXPECT_EQ(max_abs_diff(depth_to_space(s), Tensor({1, 4, 4}, v)), 0.0);
  EXPECT_THROW(space_to_depth(Tensor::zeros({1, 5, 4})), DimensionError);
}

TEST(StructureTest, DownThenUpPreservesShape) {
  const Denoiser model(preset("micro"), 2);
  const auto& cfg = model.config();
  const Tensor x = randn({cfg.stage_channels[0], 8, 8}, 3);
  const Tensor down = model.downsample(x, 0);
  EXPECT_EQ(down.shape(), (Shape{cfg.stage_channels[1], 4, 4}));
  EXPECT_EQ(model.upsample(down, 0).shape(), x.shape());
}

// ============================================================================
// Forward pass
// ============================================================================

TEST(ForwardTest, ZeroHeadPredictsZero) {
  const Denoiser model(preset("micro"), 4);
  const Tensor y = model.forward(randn({1, 16, 16}, 5), randn({1, 16, 16}, 6), 7);
  EXPECT_EQ(y.shape(), (Shape{1, 16, 16}));
  EXPECT_EQ(max_abs(y), 0.0);
}

TEST(ForwardTest, ShapeContractForLiteArchitecture) {
  auto cfg = preset("ours_lite");
  cfg.image_channels = 3;
  cfg.blocks_per_stage = {1, 1, 1};  // keep the test quick; widths unchanged
  const Denoiser model(cfg, 8);
  const Tensor y = model.forward(randn({3, 64, 64}, 9), randn({3, 64, 64}, 10), 3);
  EXPECT_EQ(y.shape(), (Shape{3, 64, 64}));
}

TEST(ForwardTest, SamplesAreIndependent) {
  Denoiser model(preset("micro"), 11);
  CounterRng rng(12);
  for (const auto& [name, t] : model.params().named()) {
    Tensor h = t;
    for (auto& v : h.mutable_data()) v += 0.05 * rng.normal();
  }
  const Tensor a = randn({1, 16, 16}, 13), b = randn({1, 16, 16}, 14), y = randn({1, 16, 16}, 15);
  const Tensor ya = model.forward(a, y, 4);
  const Tensor yb = model.forward(b, y, 4);
  EXPECT_EQ(max_abs_diff(model.forward(b, y, 4), yb), 0.0);
  EXPECT_EQ(max_abs_diff(model.forward(a, y, 4), ya), 0.0);
  EXPECT_GT(max_abs_diff(ya, yb), 0.0);
}

TEST(ForwardTest, IndivisibleResolutionNamesMultiple) {
  const Denoiser model(preset("micro"), 16);
  try {
    model.forward(Tensor::zeros({1, 12, 12}), Tensor::zeros({1, 12, 12}), 1);
    FAIL() << "expected ResolutionError";
  } catch (const ResolutionError& e) {
    EXPECT_NE(std::string(e.what()).find(std::to_string(model.config().resolution_multiple())), std::string::npos);
  }
  EXPECT_THROW(model.forward(Tensor::zeros({2, 16, 16}), Tensor::zeros({2, 16, 16}), 1), DimensionError);
}

TEST(ForwardTest, MacCounterMatchesEstimate) {
  for (const char* name : {"micro", "toy"}) {
    const Denoiser model(preset(name), 17);
    const std::size_t res = 2 * model.config().resolution_multiple();
    NoGradGuard no_grad;
    reset_mac_count();
    model.forward(Tensor::zeros({1, res, res}), Tensor::zeros({1, res, res}), 2);
    EXPECT_EQ(mac_count(), estimate_macs(model.config(), res)) << name;
  }
}

// ============================================================================
// Accounting
// ============================================================================

TEST(AccountingTest, SharesSumToOne) {
  for (const auto& name : preset_names()) {
    const auto cfg = preset(name);
    EXPECT_NEAR(share_sum(count_params(cfg)), 1.0, 1e-9) << name;
    EXPECT_NEAR(share_sum(estimate_flops(cfg, 64)), 1.0, 1e-9) << name;
  }
}

TEST(AccountingTest, CountMatchesAllocatedParameters) {
  for (const char* name : {"micro", "toy"}) {
    const Denoiser model(preset(name), 18);
    EXPECT_EQ(count_params(preset(name)).total, model.params().total_elements()) << name;
  }
}

TEST(AccountingTest, ParameterOrdering) {
  const auto n = [](const char* name) { return count_params(preset(name)).total; };
  EXPECT_LT(n("isotropic"), n("ours_adafm"));
  EXPECT_LT(n("ours_adafm"), n("ours_adaln"));
  EXPECT_LT(n("ours_adaln"), n("ushape"));
  EXPECT_LE(n("ours_adaln"), n("ushape") / 2);
  EXPECT_LT(n("shallower_udit"), n("ushape"));
  EXPECT_LT(n("narrower_udit"), n("ushape"));
  const double ratio = static_cast<double>(n("ushape")) / static_cast<double>(n("isotropic"));
  const double expected = 264.39 / 42.38;
  EXPECT_GT(ratio, 0.75 * expected);
  EXPECT_LT(ratio, 1.25 * expected);
}

TEST(AccountingTest, ConditioningIsTheOnlyDifferenceBetweenOursVariants) {
  const auto ln = params_by_role(preset("ours_adaln"));
  const auto fm = params_by_role(preset("ours_adafm"));
  for (const auto& [role, count] : ln) {
    if (role == ParamRole::conditioning_out) {
      EXPECT_GT(count, fm.at(role));
    } else {
      EXPECT_EQ(count, fm.at(role)) << to_string(role);
    }
  }
  // Per block: d_t * 2 * (3C) vs d_t * 2 * p^2, ratio p^2 / (3C).
  const auto cfg = preset("ours_adafm");
  const std::uint64_t blocks = [&] {
    std::uint64_t b = 0;
    for (std::size_t k = 0; k < cfg.blocks_per_stage.size(); ++k) b += (k + 1 < cfg.blocks_per_stage.size() ? 2 : 1) * cfg.blocks_per_stage[k];
    return b;
  }();
  const std::uint64_t w_ln = cfg.d_t * 2 * 3 * cfg.realloc_channel, w_fm = cfg.d_t * 2 * cfg.fft_window * cfg.fft_window;
  const std::uint64_t b_ln = 2 * 3 * cfg.realloc_channel, b_fm = 2 * cfg.fft_window * cfg.fft_window;
  EXPECT_EQ(ln.at(ParamRole::conditioning_out), blocks * (w_ln + b_ln));
  EXPECT_EQ(fm.at(ParamRole::conditioning_out), blocks * (w_fm + b_fm));
}

TEST(AccountingTest, FlopOrderingAndReallocationShift) {
  const auto us = estimate_flops(preset("ushape"), 64);
  const auto ours = estimate_flops(preset("ours_adafm"), 64);
  EXPECT_LT(ours.total, us.total);
  EXPECT_GT(ours.stages[0].share, us.stages[0].share);
  const auto us_p = count_params(preset("ushape"));
  const auto ours_p = count_params(preset("ours_adafm"));
  EXPECT_GT(ours_p.stages[0].share, us_p.stages[0].share);
}

TEST(AccountingTest, IsotropicFlopsScaleWithTokens) {
  const auto cfg = preset("isotropic");
  const double f64 = static_cast<double>(estimate_flops(cfg, 64).total);
  const double f128 = static_cast<double>(estimate_flops(cfg, 128).total);
  EXPECT_NEAR(f128 / f64, 4.0, 0.01);
}

TEST(AccountingTest, StageResolutionsHalve) {
  const auto r = estimate_flops(preset("ushape"), 64);
  ASSERT_EQ(r.stages.size(), 4u);
  for (std::size_t s = 0; s < 4; ++s) EXPECT_EQ(r.stages[s].resolution, 64u >> s);
  EXPECT_THROW(estimate_flops(preset("ushape"), 60), ResolutionError);
}
