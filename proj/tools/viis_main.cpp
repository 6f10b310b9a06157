// viis: degraded-visible + infrared image restoration toolkit.
//
// Subcommands cover the full pipeline: synthetic scene generation, the
// corruption pipeline, diffusion training, restoration sampling, metric
// reports, and the numeric self-checks (gradcheck / diffcheck).
//
// Exit codes: 0 success, 1 validation/config error, 2 numeric failure.

#include <cinttypes>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "viis/checksuites.hpp"
#include "viis/train.hpp"

namespace fs = std::filesystem;
using namespace viis;

namespace {

/// .ppm files of DIR, or DIR/vis if the directory uses the dataset layout.
std::map<std::string, std::string> ppm_map(const std::string& dir) {
  fs::path p(dir);
  if (fs::is_directory(p / "vis")) p /= "vis";
  if (!fs::is_directory(p)) throw IoError(dir + ": not a directory");
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(p))
    if (e.path().extension() == ".ppm") out[e.path().stem().string()] = e.path().string();
  if (out.empty()) throw IoError(dir + ": no .ppm images found");
  return out;
}

void print_rows(const std::vector<CheckRow>& rows, double tol_override) {
  bool all_ok = true;
  std::printf("%-28s %12s %10s  %s\n", "check", "max_error", "bound", "status");
  for (const auto& r : rows) {
    const double bound = tol_override > 0 ? tol_override : r.tol;
    const bool ok = std::isfinite(r.value) && r.value <= bound;
    all_ok = all_ok && ok;
    std::printf("%-28s %12.3e %10.1e  %s\n", r.name.c_str(), r.value, bound, ok ? "ok" : "FAIL");
  }
  if (!all_ok) throw NumericError("verification suite failed");
}

int cmd_synth_data(const std::string& out, int count, int size, uint64_t seed) {
  fs::create_directories(fs::path(out) / "vis");
  fs::create_directories(fs::path(out) / "ir");
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng::derive(seed, static_cast<uint64_t>(i));
    ScenePair p = synth_scene(rng, size);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04d", i);
    write_image(p.visible, (fs::path(out) / "vis" / (std::string(name) + ".ppm")).string());
    write_image(p.infrared, (fs::path(out) / "ir" / (std::string(name) + ".pgm")).string());
  }
  std::cerr << "wrote " << count << " scene pairs to " << out << "\n";
  return 0;
}

int cmd_augment(const std::string& in, const std::string& out, uint64_t seed, const ParamRanges& ranges) {
  ranges.validate();
  auto images = ppm_map(in);
  fs::create_directories(out);
  uint64_t idx = 0;
  for (const auto& [stem, path] : images) {
    Rng rng = Rng::derive(seed, idx++);
    AugmentParams p = sample_params(ranges, rng);
    Image degraded = augment(read_image(path), p, rng);
    write_image(degraded, (fs::path(out) / (stem + ".ppm")).string());
  }
  std::cerr << "augmented " << images.size() << " images into " << out << "\n";
  return 0;
}

int cmd_train(TrainConfig cfg, const std::string& data_arg, int synth_count, const std::string& out,
              const std::string& log_path, const std::string& resume_path) {
  cfg.validate();
  std::vector<ScenePair> data;
  if (data_arg == "synth") {
    const int px = cfg.model.latent_mode == "avgpool" ? cfg.model.image_size * cfg.model.pool_factor
                                                      : cfg.model.image_size;
    for (int i = 0; i < synth_count; ++i) {
      Rng rng = Rng::derive(cfg.seed ^ 0x5ce7eULL, static_cast<uint64_t>(i));
      data.push_back(synth_scene(rng, px));
    }
    std::cerr << "generated " << synth_count << " synthetic " << px << "x" << px << " pairs\n";
  } else {
    data = load_dataset(scan_dataset(data_arg));
    std::cerr << "loaded " << data.size() << " pairs from " << data_arg << "\n";
  }
  std::cerr << "resolved config:\n" << config_to_text(cfg);
  {
    Denoiser<float> probe(cfg.model, cfg.seed);
    std::cerr << "parameters: " << probe.params.total_count() << "\n";
  }
  std::ofstream log;
  TrainOptions opt;
  opt.checkpoint_path = out;
  opt.info = &std::cerr;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw IoError(log_path + ": cannot open loss log");
    log << "step,loss,millis\n";
    opt.loss_log = &log;
  }
  Checkpoint resume;
  if (!resume_path.empty()) {
    resume = load_checkpoint(resume_path);
    opt.resume = &resume;
    std::cerr << "resuming from step " << resume.step << "\n";
  }
  Checkpoint ck = train(cfg, data, opt);
  save_checkpoint(ck, out);
  std::cerr << "finished at step " << ck.step << "; checkpoint: " << out << "\n";
  return 0;
}

int cmd_restore(const std::string& ckpt, const std::string& vis_path, const std::string& ir_path,
                const std::string& out, int steps, uint64_t seed) {
  Checkpoint ck = load_checkpoint(ckpt);
  if (steps <= 0) steps = ck.config.model.T;
  Image result = restore(ck, read_image(vis_path), read_image(ir_path), steps, seed);
  write_image(result, out);
  std::cerr << "restored " << vis_path << " -> " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& ref_dir, const std::string& out) {
  auto preds = ppm_map(pred_dir);
  auto refs = ppm_map(ref_dir);
  MetricReport report;
  for (const auto& [stem, path] : preds) {
    auto it = refs.find(stem);
    if (it == refs.end()) throw IoError(ref_dir + ": no reference image for " + stem);
    Image p = read_image(path);
    Image r = read_image(it->second);
    report.add(stem, {{"sd", sd(p)}, {"en", en(p)}, {"psnr", psnr(p, r)}, {"ssim", ssim(p, r)}});
  }
  const std::string csv = report.to_csv();
  if (out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(out);
    if (!f) throw IoError(out + ": cannot open for writing");
    f << csv;
  }
  auto mu = report.means();
  std::cerr << "images: " << report.rows.size();
  for (const auto& c : report.columns) std::cerr << "  mean " << c << ": " << mu[c];
  std::cerr << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"visible/infrared image restoration pipeline"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker thread cap")->capture_default_str()->check(CLI::PositiveNumber);

  // synth-data
  auto* sd_cmd = app.add_subcommand("synth-data", "generate paired synthetic visible/infrared scenes");
  std::string sd_out;
  int sd_count = 256, sd_size = 32;
  uint64_t sd_seed = 0;
  sd_cmd->add_option("--out", sd_out, "output dataset directory")->required();
  sd_cmd->add_option("--count", sd_count, "number of scene pairs")->capture_default_str();
  sd_cmd->add_option("--size", sd_size, "square image extent")->capture_default_str();
  sd_cmd->add_option("--seed", sd_seed, "generation seed")->capture_default_str();

  // augment
  auto* aug_cmd = app.add_subcommand("augment", "apply the corruption pipeline to a directory of images");
  std::string aug_in, aug_out;
  uint64_t aug_seed = 0;
  ParamRanges aug_ranges;
  std::string aug_noise = "gauss_poisson";
  aug_cmd->add_option("--in", aug_in, "input directory (flat .ppm or dataset root)")->required();
  aug_cmd->add_option("--out", aug_out, "output directory")->required();
  aug_cmd->add_option("--seed", aug_seed, "corruption seed")->capture_default_str();
  aug_cmd->add_option("--gamma-min", aug_ranges.gamma_min, "gamma lower bound")->capture_default_str();
  aug_cmd->add_option("--gamma-max", aug_ranges.gamma_max, "gamma upper bound")->capture_default_str();
  aug_cmd->add_option("--contrast-min", aug_ranges.contrast_min, "contrast lower bound")->capture_default_str();
  aug_cmd->add_option("--contrast-max", aug_ranges.contrast_max, "contrast upper bound")->capture_default_str();
  aug_cmd->add_option("--sigma-min", aug_ranges.sigma_min, "Gaussian sigma lower bound (0-255 scale)")
      ->capture_default_str();
  aug_cmd->add_option("--sigma-max", aug_ranges.sigma_max, "Gaussian sigma upper bound")->capture_default_str();
  aug_cmd->add_option("--lambda-min", aug_ranges.lambda_min, "Poisson lambda lower bound")->capture_default_str();
  aug_cmd->add_option("--lambda-max", aug_ranges.lambda_max, "Poisson lambda upper bound")->capture_default_str();
  aug_cmd->add_option("--noise-mode", aug_noise, "gauss_poisson | impulse | none")->capture_default_str();
  aug_cmd->add_option("--impulse-density-min", aug_ranges.impulse_density_min, "impulse density lower bound")
      ->capture_default_str();
  aug_cmd->add_option("--impulse-density-max", aug_ranges.impulse_density_max, "impulse density upper bound")
      ->capture_default_str();

  // train
  auto* tr_cmd = app.add_subcommand("train", "train the conditioned denoiser");
  std::string tr_config, tr_data = "synth", tr_out, tr_log, tr_resume, tr_mode;
  int tr_steps = -1, tr_synth_count = 256;
  int64_t tr_seed = -1;
  tr_cmd->add_option("--config", tr_config, "key=value config file");
  tr_cmd->add_option("--data", tr_data, "dataset directory, or 'synth'")->capture_default_str();
  tr_cmd->add_option("--out", tr_out, "checkpoint output path")->required();
  tr_cmd->add_option("--log", tr_log, "loss log CSV path");
  tr_cmd->add_option("--resume", tr_resume, "checkpoint to resume from");
  tr_cmd->add_option("--steps", tr_steps, "override [train] steps");
  tr_cmd->add_option("--seed", tr_seed, "override [train] seed");
  tr_cmd->add_option("--mode", tr_mode, "override [model] conditioning_mode");
  tr_cmd->add_option("--synth-count", tr_synth_count, "synthetic pair count when --data synth")
      ->capture_default_str();

  // restore
  auto* rs_cmd = app.add_subcommand("restore", "restore a degraded visible image using a trained checkpoint");
  std::string rs_ckpt, rs_vis, rs_ir, rs_out;
  int rs_steps = 0;
  uint64_t rs_seed = 0;
  rs_cmd->add_option("--ckpt", rs_ckpt, "trained checkpoint")->required();
  rs_cmd->add_option("--vis", rs_vis, "degraded visible image (.ppm)")->required();
  rs_cmd->add_option("--ir", rs_ir, "aligned infrared image (.pgm)")->required();
  rs_cmd->add_option("--out", rs_out, "output image path (.ppm)")->required();
  rs_cmd->add_option("--steps", rs_steps, "sampling steps (default: trained T)");
  rs_cmd->add_option("--seed", rs_seed, "sampling seed")->capture_default_str();

  // eval
  auto* ev_cmd = app.add_subcommand("eval", "per-image metric report (sd/en of pred, psnr/ssim vs ref)");
  std::string ev_pred, ev_ref, ev_out;
  ev_cmd->add_option("--pred", ev_pred, "directory of predicted/restored images")->required();
  ev_cmd->add_option("--ref", ev_ref, "directory of reference images")->required();
  ev_cmd->add_option("--out", ev_out, "CSV output path (default: stdout)");

  // gradcheck / diffcheck
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference checks of every differentiable op");
  double gc_tol = 0;
  gc_cmd->add_option("--tol", gc_tol, "override per-op tolerance (default: per-op bounds)");
  auto* dc_cmd = app.add_subcommand("diffcheck", "forward-process statistics and sampler oracle checks");

  try {
    app.parse(argc, argv);
    if (sd_cmd->parsed()) return cmd_synth_data(sd_out, sd_count, sd_size, sd_seed);
    if (aug_cmd->parsed()) {
      aug_ranges.noise_mode = detail::noise_mode_of("noise-mode", aug_noise);
      return cmd_augment(aug_in, aug_out, aug_seed, aug_ranges);
    }
    if (tr_cmd->parsed()) {
      TrainConfig cfg;
      if (!tr_config.empty()) cfg = load_config(tr_config);
      if (tr_steps >= 0) cfg.steps = tr_steps;
      if (tr_seed >= 0) cfg.seed = static_cast<uint64_t>(tr_seed);
      if (!tr_mode.empty()) cfg.model.conditioning_mode = tr_mode;
      return cmd_train(cfg, tr_data, tr_synth_count, tr_out, tr_log, tr_resume);
    }
    if (rs_cmd->parsed()) return cmd_restore(rs_ckpt, rs_vis, rs_ir, rs_out, rs_steps, rs_seed);
    if (ev_cmd->parsed()) return cmd_eval(ev_pred, ev_ref, ev_out);
    if (gc_cmd->parsed()) {
      print_rows(gradient_suite(5), gc_tol);
      return 0;
    }
    if (dc_cmd->parsed()) {
      print_rows(diffusion_suite(), 0);
      return 0;
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
