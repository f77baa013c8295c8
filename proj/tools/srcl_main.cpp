// Command-line entry point: dataset building, training, evaluation, the
// HR-fraction ablation sweep, standalone degradation and plot regeneration.

#include <CLI11.hpp>

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "srcl/experiment.hpp"

namespace fs = std::filesystem;

namespace {

srcl::ExperimentConfig load_config(const std::string& config_path,
                                   const std::vector<std::string>& overrides) {
  srcl::ExperimentConfig cfg =
      config_path.empty() ? srcl::ExperimentConfig{} : srcl::ExperimentConfig::load(config_path);
  cfg = srcl::ExperimentConfig::with_overrides(cfg, overrides);
  if (const char* out = std::getenv("SRCL_OUT_DIR")) cfg.out_dir = fs::path(out) / cfg.out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unpaired MRI super-resolution with contrastive learning"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "Path to a JSON experiment config");
  app.add_option("--set", overrides, "Override config values, key.path=value");

  auto* build = app.add_subcommand("build-dataset", "Generate phantoms, splits and degraded LR volumes");
  auto* train = app.add_subcommand("train", "Train one model per the config");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the evaluation group");
  std::string eval_checkpoint;
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint to evaluate (defaults to out_dir/checkpoint.srck)");
  auto* sweep = app.add_subcommand("sweep", "Run the HR-fraction x contrastive-ablation grid");
  auto* plot = app.add_subcommand("plot", "Regenerate plotting scripts for a sweep directory");
  auto* degrade = app.add_subcommand("degrade", "K-space truncate a single volume file");
  std::string degrade_in, degrade_out, degrade_factors = "2,2,2";
  degrade->add_option("--input", degrade_in, "Input .vol path")->required();
  degrade->add_option("--output", degrade_out, "Output .vol path")->required();
  degrade->add_option("--factors", degrade_factors, "Per-axis factors fz,fy,fx (default 2,2,2)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (degrade->parsed()) {
      srcl::Index f[3] = {2, 2, 2};
      if (std::sscanf(degrade_factors.c_str(), "%lld,%lld,%lld", reinterpret_cast<long long*>(&f[0]),
                      reinterpret_cast<long long*>(&f[1]), reinterpret_cast<long long*>(&f[2])) != 3)
        throw srcl::config_error("factors must be fz,fy,fx");
      srcl::cmd_degrade(degrade_in, degrade_out, srcl::ScaleFactor(f[0], f[1], f[2]));
      std::cout << "wrote " << degrade_out << "\n";
      return 0;
    }

    srcl::ExperimentConfig cfg = load_config(config_path, overrides);

    if (build->parsed()) {
      srcl::cmd_build_dataset(cfg);
      std::cout << "dataset written to " << cfg.dataset_dir.string() << " (fingerprint "
                << cfg.fingerprint() << ")\n";
    } else if (train->parsed()) {
      const auto result = srcl::cmd_train(cfg);
      std::cout << "checkpoint " << result.checkpoint.string() << " best validation PSNR "
                << srcl::format_double(result.best_val_psnr) << " dB, parameter hash "
                << result.checkpoint_hash << "\n";
    } else if (eval->parsed()) {
      const fs::path ck = eval_checkpoint.empty() ? cfg.out_dir / "checkpoint.srck" : fs::path(eval_checkpoint);
      const auto report = srcl::cmd_eval(cfg, ck, cfg.out_dir / "eval");
      const auto p = srcl::aggregate_of(report.values("model", &srcl::VolumeMetrics::psnr_db));
      const auto s = srcl::aggregate_of(report.values("model", &srcl::VolumeMetrics::ssim3d));
      const auto bp = srcl::aggregate_of(report.values("trilinear", &srcl::VolumeMetrics::psnr_db));
      std::cout << "model PSNR " << srcl::format_double(p.mean) << " +- " << srcl::format_double(p.stddev)
                << " dB, SSIM " << srcl::format_double(s.mean) << " +- " << srcl::format_double(s.stddev)
                << " (trilinear PSNR " << srcl::format_double(bp.mean) << ")\n";
    } else if (sweep->parsed()) {
      srcl::cmd_sweep(cfg);
      std::cout << "sweep results in " << cfg.out_dir.string() << "\n";
    } else if (plot->parsed()) {
      srcl::write_sweep_plot_script(cfg.out_dir, cfg.fingerprint());
      std::cout << "plot script written to " << (cfg.out_dir / "plot_sweep.py").string() << "\n";
    }
  } catch (const srcl::divergence_error& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 3;
  } catch (const srcl::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
