#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ditsr/architecture.hpp"
#include "ditsr/checkpoint.hpp"
#include "ditsr/dataset.hpp"
#include "ditsr/diffusion.hpp"
#include "ditsr/errors.hpp"
#include "ditsr/gradcheck.hpp"
#include "ditsr/image_io.hpp"
#include "ditsr/spectrum.hpp"
#include "ditsr/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace ditsr;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string config;
  std::string out = "out";
};

struct DataArgs {
  std::size_t samples = 0;  // 0 keeps the command's default
  std::size_t hr_size = ToyDatasetSpec{}.hr_size;
  std::size_t scale = ToyDatasetSpec{}.scale;
  double blur = ToyDatasetSpec{}.blur_sigma;
  double noise = ToyDatasetSpec{}.noise_sigma;
  std::uint64_t data_seed = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--samples", samples, "Number of image pairs");
    cmd->add_option("--hr-size", hr_size, "HR image side length");
    cmd->add_option("--scale", scale, "Downscale factor");
    cmd->add_option("--blur", blur, "Gaussian blur sigma (HR pixels)");
    cmd->add_option("--noise", noise, "LR noise sigma");
    cmd->add_option("--data-seed", data_seed, "Dataset seed");
  }

  ToyDatasetSpec spec(std::size_t default_samples) const {
    ToyDatasetSpec s;
    s.n_samples = samples ? samples : default_samples;
    s.hr_size = hr_size;
    s.scale = scale;
    s.blur_sigma = blur;
    s.noise_sigma = noise;
    s.seed = data_seed;
    return s;
  }
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

fs::path out_dir(const Globals& g) {
  fs::create_directories(g.out);
  return g.out;
}

// --config wins over --preset; a checkpoint directory's config.json is the fallback.
DenoiserConfig resolve_config(const Globals& g, const std::string& preset_name, const std::string& checkpoint = "") {
  if (!g.config.empty()) return config_from_json(read_text(g.config));
  if (!preset_name.empty()) return preset(preset_name);
  if (!checkpoint.empty()) {
    const fs::path sidecar = fs::path(checkpoint).parent_path() / "config.json";
    if (fs::exists(sidecar)) return config_from_json(read_text(sidecar));
  }
  return preset(toy_recipe(g.seed).preset);
}

// --kappa wins; otherwise the value recorded by `train` next to the checkpoint.
ShiftSchedule resolve_schedule(const Globals& g, double kappa, const std::string& checkpoint = "") {
  if (kappa > 0.0) return build_schedule(15, 0.04, 0.999, kappa);
  if (!checkpoint.empty()) {
    const fs::path manifest = fs::path(checkpoint).parent_path() / "manifest.json";
    if (fs::exists(manifest)) {
      const json j = json::parse(read_text(manifest));
      if (j.contains("kappa")) return build_schedule(15, 0.04, 0.999, j.at("kappa").get<double>());
    }
  }
  return toy_recipe(g.seed).schedule();
}

Denoiser load_model(const Globals& g, const std::string& preset_name, const std::string& checkpoint) {
  if (!fs::exists(checkpoint)) throw std::runtime_error("checkpoint not found: " + checkpoint);
  Denoiser model(resolve_config(g, preset_name, checkpoint), 0);
  model.params().load(load_checkpoint(checkpoint));
  return model;
}

std::string step_name(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03zu%s", stem, i, ext);
  return buf;
}

// ---- subcommands ------------------------------------------------------------

int run_train(const Globals& g, const std::string& preset_name, const DataArgs& data_args, TrainOptions opts,
              double kappa, bool quiet) {
  const ToyRecipe recipe = toy_recipe(g.seed);
  const DenoiserConfig cfg = resolve_config(g, preset_name.empty() ? recipe.preset : preset_name);
  const ToyDatasetSpec spec = data_args.spec(recipe.train_data.n_samples);
  spec.validate(cfg.resolution_multiple());
  const auto data = synth_dataset(spec);
  const fs::path dir = out_dir(g);

  Denoiser model(cfg, g.seed);
  save_checkpoint(dir / "init.ckpt", model.params().named());
  opts.seed = g.seed;
  if (!quiet) {
    opts.on_step = [&](std::size_t it, double loss) {
      if (it % 100 == 0 || it + 1 == opts.iters) std::printf("iter %zu loss %.6f\n", it, loss);
    };
  }
  const ShiftSchedule sched = resolve_schedule(g, kappa);
  const RunManifest run = train(model, data, sched, opts);
  save_checkpoint(dir / "model.ckpt", model.params().named());
  write_text(dir / "config.json", config_to_json(cfg) + "\n");

  json manifest = json::parse(run.to_json());
  manifest["config"] = json::parse(config_to_json(cfg));
  manifest["kappa"] = sched.kappa;
  manifest["dataset"] = {{"samples", spec.n_samples}, {"hr_size", spec.hr_size}, {"scale", spec.scale},
                         {"blur_sigma", spec.blur_sigma}, {"noise_sigma", spec.noise_sigma}, {"seed", spec.seed}};
  manifest["options"] = {{"iters", opts.iters}, {"batch", opts.batch}, {"lr", opts.lr},
                         {"warmup", opts.warmup}, {"cosine", opts.cosine}, {"crop", opts.crop}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  std::ofstream curve(dir / "loss.csv");
  curve << "iteration,loss\n";
  curve.precision(17);
  for (std::size_t i = 0; i < run.loss_curve.size(); ++i) curve << i << "," << run.loss_curve[i] << "\n";
  std::printf("wrote %s (%zu iterations, %.1f s)\n", (dir / "model.ckpt").c_str(), run.iterations, run.wall_seconds);
  return 0;
}

int run_sample(const Globals& g, const std::string& preset_name, const std::string& checkpoint,
               const std::string& input, std::size_t index, const DataArgs& data_args, const std::string& traj_dir,
               double kappa) {
  const Denoiser model = load_model(g, preset_name, checkpoint);
  Tensor y0, hr;
  if (!input.empty()) {
    y0 = read_pfm(input);
  } else {
    DataArgs held = data_args;
    const auto data = synth_dataset(held.spec(index + 1));
    y0 = data.at(index).lr_up;
    hr = data.at(index).hr;
  }
  const auto sched = resolve_schedule(g, kappa, checkpoint);
  SampleOptions opts;
  opts.seed = g.seed;
  opts.keep_trajectory = !traj_dir.empty();
  const auto result = sample(predictor_for(model), y0, sched, opts);
  const fs::path dir = out_dir(g);
  write_pfm(dir / "sample.pfm", result.image);
  write_pfm(dir / "input.pfm", y0);
  if (hr.numel()) {
    std::printf("psnr sample %.3f dB, input %.3f dB\n", psnr(result.image, hr), psnr(y0, hr));
  }
  if (!traj_dir.empty()) {
    fs::create_directories(traj_dir);
    json index_json = json::array();
    for (std::size_t i = 0; i < result.trajectory.size(); ++i) {
      const std::size_t t = sched.steps - i;
      const std::string name = step_name("x0_step", t, ".pfm");
      write_pfm(fs::path(traj_dir) / name, result.trajectory[i]);
      index_json.push_back({{"step", t}, {"eta_t", sched.eta[t]}, {"file", name}});
    }
    write_text(fs::path(traj_dir) / "index.json", index_json.dump(2) + "\n");
  }
  std::printf("wrote %s\n", (dir / "sample.pfm").c_str());
  return 0;
}

int run_eval(const Globals& g, const std::string& preset_name, const std::string& checkpoint, DataArgs data_args,
             double kappa) {
  const Denoiser model = load_model(g, preset_name, checkpoint);
  const ToyRecipe recipe = toy_recipe(g.seed);
  if (data_args.data_seed == 0) data_args.data_seed = recipe.eval_data.seed;
  const auto data = synth_dataset(data_args.spec(recipe.eval_data.n_samples));
  const PsnrReport report = evaluate_psnr(model, data, resolve_schedule(g, kappa, checkpoint), g.seed);
  json j;
  j["mean_psnr_model"] = report.mean_model;
  j["mean_psnr_baseline"] = report.mean_baseline;
  j["gain_db"] = report.mean_model - report.mean_baseline;
  j["per_sample_model"] = report.model;
  j["per_sample_baseline"] = report.baseline;
  write_text(out_dir(g) / "eval.json", j.dump(2) + "\n");
  std::printf("mean psnr model %.3f dB, baseline %.3f dB, gain %+.3f dB over %zu pairs\n", report.mean_model,
              report.mean_baseline, report.mean_model - report.mean_baseline, data.size());
  return 0;
}

void write_stage_csv(const fs::path& path, const AccountingReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "stage,resolution,params,flops,share\n";
  for (const auto& s : report.stages) {
    out << s.stage << "," << s.resolution << "," << s.params << "," << s.flops << "," << s.share << "\n";
  }
}

int run_report(const Globals& g, const std::string& preset_name, std::size_t resolution) {
  const DenoiserConfig cfg = resolve_config(g, preset_name.empty() ? "ours_adafm" : preset_name);
  const AccountingReport params = count_params(cfg);
  const AccountingReport flops = estimate_flops(cfg, resolution);
  const fs::path dir = out_dir(g);
  // Parameter shares with the per-stage resolution and FLOPs filled in.
  AccountingReport params_full = flops;
  for (std::size_t i = 0; i < params_full.stages.size(); ++i) params_full.stages[i].share = params.stages[i].share;
  write_stage_csv(dir / "params_by_stage.csv", params_full);
  write_stage_csv(dir / "flops_by_stage.csv", flops);

  std::printf("%s: %.3fM params, %.3f GFLOPs at %zux%zu\n", cfg.name.c_str(), params.total / 1e6, flops.total / 1e9,
              resolution, resolution);
  std::printf("stage,resolution,params,flops,param_share,flop_share\n");
  for (std::size_t i = 0; i < flops.stages.size(); ++i) {
    const auto& s = flops.stages[i];
    std::printf("%zu,%zu,%llu,%llu,%.4f,%.4f\n", s.stage, s.resolution, static_cast<unsigned long long>(s.params),
                static_cast<unsigned long long>(s.flops), params.stages[i].share, s.share);
  }
  std::printf("role,params\n");
  for (const auto& [role, n] : params_by_role(cfg)) {
    std::printf("%s,%llu\n", to_string(role), static_cast<unsigned long long>(n));
  }
  return 0;
}

int run_gradcheck(const Globals& g, const std::string& preset_name, std::size_t max_coords) {
  const DenoiserConfig cfg = resolve_config(g, preset_name.empty() ? "micro" : preset_name);
  const auto results = gradcheck_suite(cfg, g.seed, max_coords);
  bool ok = true;
  json j = json::array();
  for (const auto& r : results) {
    std::printf("%-4s %-22s rel_err %.3e (tol %.0e, %zu coords, %.2f s)\n", r.passed() ? "ok" : "FAIL",
                r.name.c_str(), r.rel_error, r.tolerance, r.probed, r.seconds);
    ok = ok && r.passed();
    j.push_back({{"name", r.name}, {"rel_error", r.rel_error}, {"tolerance", r.tolerance}, {"passed", r.passed()}});
  }
  write_text(out_dir(g) / "gradcheck.json", j.dump(2) + "\n");
  return ok ? 0 : 1;
}

int run_spectrum(const Globals& g, const std::string& preset_name, const std::string& checkpoint,
                 std::size_t images, std::size_t bins, DataArgs data_args, double kappa) {
  const Denoiser model = load_model(g, preset_name, checkpoint);
  const ToyRecipe recipe = toy_recipe(g.seed);
  if (data_args.data_seed == 0) data_args.data_seed = recipe.eval_data.seed;
  const auto data = synth_dataset(data_args.spec(images));
  const fs::path dir = out_dir(g);
  const auto sched = resolve_schedule(g, kappa, checkpoint);
  std::ofstream conv(dir / "convergence.csv");
  conv << "image,band,center_frequency,convergence_step\n";
  std::size_t ordered = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto traj = spectrum_trajectory(predictor_for(model), data[i].lr_up, sched, g.seed + i, bins);
    write_trajectory_csv(dir / step_name("trajectory", i, ".csv"), traj);
    const auto steps = convergence_steps(traj);
    for (std::size_t b = 0; b < steps.size(); ++b) conv << i << "," << b << "," << traj.bin_centers[b] << "," << steps[b] << "\n";
    const bool ok = steps.front() > steps.back();
    ordered += ok;
    std::printf("image %zu: lowest band converges at t=%zu, highest at t=%zu%s\n", i, steps.front(), steps.back(),
                ok ? "" : " (not ordered)");
  }
  std::printf("low band first on %zu/%zu images\n", ordered, data.size());
  return 0;
}

int run_synth(const Globals& g, const DataArgs& data_args) {
  const auto data = synth_dataset(data_args.spec(8));
  const fs::path dir = out_dir(g);
  json index = json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string hr = step_name("hr", i, ".pfm"), lr = step_name("lr_up", i, ".pfm");
    write_pfm(dir / hr, data[i].hr);
    write_pfm(dir / lr, data[i].lr_up);
    index.push_back({{"hr", hr}, {"lr_up", lr}, {"psnr_lr_up", psnr(data[i].lr_up, data[i].hr)}});
  }
  write_text(dir / "index.json", index.dump(2) + "\n");
  std::printf("wrote %zu pairs to %s\n", data.size(), dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-transformer super-resolution toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Global seed")->capture_default_str();
  app.add_option("--config", g.config, "Denoiser config JSON (full or preset + overrides)");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();

  std::string preset_name, checkpoint;
  DataArgs data_args;
  double kappa = 0.0;
  const auto add_kappa = [&](CLI::App* cmd) {
    cmd->add_option("--kappa", kappa, "Diffusion noise scale (default: recorded with the checkpoint, else the recipe's)");
  };

  TrainOptions train_opts = toy_recipe(0).train;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "Train a denoiser on the synthetic dataset");
  train_cmd->add_option("--preset", preset_name, "Config preset");
  train_cmd->add_option("--iters", train_opts.iters, "Iterations")->capture_default_str();
  train_cmd->add_option("--lr", train_opts.lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--batch", train_opts.batch, "Pairs per iteration")->capture_default_str();
  train_cmd->add_option("--crop", train_opts.crop, "Random crop size (0 = full image)")->capture_default_str();
  train_cmd->add_option("--warmup", train_opts.warmup, "Linear warm-up iterations")->capture_default_str();
  train_cmd->add_flag("--cosine,!--constant-lr", train_opts.cosine, "Cosine learning-rate decay");
  train_cmd->add_flag("--quiet", quiet, "Suppress per-iteration output");
  data_args.attach(train_cmd);
  add_kappa(train_cmd);

  std::string input, traj_dir;
  std::size_t index = 0;
  auto* sample_cmd = app.add_subcommand("sample", "Run the reverse chain on one image");
  sample_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  sample_cmd->add_option("--preset", preset_name, "Config preset when no config.json sits next to the checkpoint");
  sample_cmd->add_option("--input", input, "Upsampled LR image (PFM); defaults to a synthetic pair");
  sample_cmd->add_option("--index", index, "Synthetic pair index when no --input is given");
  sample_cmd->add_option("--dump-trajectory", traj_dir, "Write every step's x0 prediction here");
  data_args.attach(sample_cmd);
  add_kappa(sample_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "Mean PSNR on held-out synthetic pairs");
  eval_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--preset", preset_name, "Config preset");
  data_args.attach(eval_cmd);
  add_kappa(eval_cmd);

  std::size_t resolution = 64;
  auto* report_cmd = app.add_subcommand("report", "Parameter and FLOP accounting per stage");
  report_cmd->add_option("--preset", preset_name, "Config preset");
  report_cmd->add_option("--resolution", resolution, "Input side length for FLOPs")->capture_default_str();

  std::size_t max_coords = 0;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad_cmd->add_option("--preset", preset_name, "Network checked end to end");
  grad_cmd->add_option("--max-coords", max_coords, "Coordinates probed per network tensor (0 = all)");

  std::size_t images = 5, bins = 4;
  auto* spectrum_cmd = app.add_subcommand("spectrum", "Radial spectra of x0 predictions along the chain");
  spectrum_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  spectrum_cmd->add_option("--preset", preset_name, "Config preset");
  spectrum_cmd->add_option("--images", images, "Held-out images analysed")->capture_default_str();
  spectrum_cmd->add_option("--bins", bins, "Radial bins")->capture_default_str();
  data_args.attach(spectrum_cmd);
  add_kappa(spectrum_cmd);

  auto* synth_cmd = app.add_subcommand("synth", "Dump synthetic HR / degraded pairs as PFM");
  data_args.attach(synth_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (train_cmd->parsed()) return run_train(g, preset_name, data_args, train_opts, kappa, quiet);
    if (sample_cmd->parsed()) return run_sample(g, preset_name, checkpoint, input, index, data_args, traj_dir, kappa);
    if (eval_cmd->parsed()) return run_eval(g, preset_name, checkpoint, data_args, kappa);
    if (report_cmd->parsed()) return run_report(g, preset_name, resolution);
    if (grad_cmd->parsed()) return run_gradcheck(g, preset_name, max_coords);
    if (spectrum_cmd->parsed()) return run_spectrum(g, preset_name, checkpoint, images, bins, data_args, kappa);
    if (synth_cmd->parsed()) return run_synth(g, data_args);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
