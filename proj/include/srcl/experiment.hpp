#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "srcl/engine.hpp"
#include "srcl/kspace.hpp"
#include "srcl/metrics.hpp"
#include "srcl/networks.hpp"
#include "srcl/phantom.hpp"
#include "srcl/pipeline.hpp"
#include "srcl/rng.hpp"
#include "srcl/volume.hpp"

namespace srcl {

namespace fs = std::filesystem;

/// Everything one run needs, serializable; the fingerprint of the canonical
/// serialization is embedded in every emitted artifact.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  fs::path dataset_dir = "dataset";
  fs::path out_dir = "runs/default";

  Shape volume_shape{32, 32, 32};
  SplitCounts splits;
  Index phantom_ellipsoids = 6;
  Index phantom_layers = 3;
  double phantom_smooth_sigma = 0.8;
  ScaleFactor scale;

  NetworkSpec network;
  OptimSettings optim;
  LossWeights weights;
  ContrastiveConfig contrastive;
  PatchSpec patch;
  SsimLossSpec ssim_loss;

  std::vector<double> fractions{1.0, 0.7, 0.5, 0.3, 0.1};
  double fraction = 1.0;
  bool cl_on = true;
  std::vector<std::uint64_t> sweep_seeds{1, 2, 3};

  json to_json() const {
    json j;
    j["seed"] = seed;
    j["dataset_dir"] = dataset_dir.string();
    j["out_dir"] = out_dir.string();
    j["volume_shape"] = volume_shape;
    j["splits"] = {{"source", splits.source},
                   {"target", splits.target},
                   {"validation", splits.validation},
                   {"evaluation", splits.evaluation}};
    j["phantom"] = {{"n_ellipsoids", phantom_ellipsoids},
                    {"intensity_layers", phantom_layers},
                    {"smooth_sigma", phantom_smooth_sigma}};
    j["scale"] = {scale[0], scale[1], scale[2]};
    j["network"] = network.to_json();
    j["optim"] = {{"lr_discriminator", optim.lr_discriminator},
                  {"lr_generator", optim.lr_generator},
                  {"beta1", optim.beta1},
                  {"beta2", optim.beta2},
                  {"adam_eps", optim.adam_eps},
                  {"batch", optim.batch},
                  {"steps", optim.steps},
                  {"val_interval", optim.val_interval}};
    j["weights"] = {{"l1", weights.l1},
                    {"ssim", weights.ssim},
                    {"adv", weights.adv},
                    {"cl_feature", weights.cl_feature},
                    {"cl_image", weights.cl_image}};
    j["contrastive"] = {{"temperature", contrastive.temperature}, {"epsilon", contrastive.epsilon}};
    j["patch"] = {{"lr", {patch.lr[0], patch.lr[1], patch.lr[2]}}};
    j["ssim_loss"] = {{"window", ssim_loss.window},
                      {"sigma", ssim_loss.sigma},
                      {"data_range", ssim_loss.data_range}};
    j["fractions"] = fractions;
    j["fraction"] = fraction;
    j["cl_on"] = cl_on;
    j["sweep_seeds"] = sweep_seeds;
    return j;
  }

  static ExperimentConfig from_json(const json& j) {
    ExperimentConfig c;
    c.seed = j.value("seed", c.seed);
    if (j.contains("dataset_dir")) c.dataset_dir = j["dataset_dir"].get<std::string>();
    if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("volume_shape")) c.volume_shape = j["volume_shape"].get<Shape>();
    if (j.contains("splits")) {
      const auto& s = j["splits"];
      c.splits.source = s.value("source", c.splits.source);
      c.splits.target = s.value("target", c.splits.target);
      c.splits.validation = s.value("validation", c.splits.validation);
      c.splits.evaluation = s.value("evaluation", c.splits.evaluation);
    }
    if (j.contains("phantom")) {
      const auto& p = j["phantom"];
      c.phantom_ellipsoids = p.value("n_ellipsoids", c.phantom_ellipsoids);
      c.phantom_layers = p.value("intensity_layers", c.phantom_layers);
      c.phantom_smooth_sigma = p.value("smooth_sigma", c.phantom_smooth_sigma);
    }
    if (j.contains("scale")) {
      auto s = j["scale"].get<std::vector<Index>>();
      c.scale = ScaleFactor(s.at(0), s.at(1), s.at(2));
    }
    if (j.contains("network")) c.network = NetworkSpec::from_json(j["network"]);
    if (j.contains("optim")) {
      const auto& o = j["optim"];
      c.optim.lr_discriminator = o.value("lr_discriminator", c.optim.lr_discriminator);
      c.optim.lr_generator = o.value("lr_generator", c.optim.lr_generator);
      c.optim.beta1 = o.value("beta1", c.optim.beta1);
      c.optim.beta2 = o.value("beta2", c.optim.beta2);
      c.optim.adam_eps = o.value("adam_eps", c.optim.adam_eps);
      c.optim.batch = o.value("batch", c.optim.batch);
      c.optim.steps = o.value("steps", c.optim.steps);
      c.optim.val_interval = o.value("val_interval", c.optim.val_interval);
    }
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      c.weights.l1 = w.value("l1", c.weights.l1);
      c.weights.ssim = w.value("ssim", c.weights.ssim);
      c.weights.adv = w.value("adv", c.weights.adv);
      c.weights.cl_feature = w.value("cl_feature", c.weights.cl_feature);
      c.weights.cl_image = w.value("cl_image", c.weights.cl_image);
    }
    if (j.contains("contrastive")) {
      const auto& cc = j["contrastive"];
      c.contrastive.temperature = cc.value("temperature", c.contrastive.temperature);
      c.contrastive.epsilon = cc.value("epsilon", c.contrastive.epsilon);
    }
    if (j.contains("patch")) {
      auto p = j["patch"].at("lr").get<std::vector<Index>>();
      c.patch.lr = {p.at(0), p.at(1), p.at(2)};
    }
    if (j.contains("ssim_loss")) {
      const auto& s = j["ssim_loss"];
      c.ssim_loss.window = s.value("window", c.ssim_loss.window);
      c.ssim_loss.sigma = s.value("sigma", c.ssim_loss.sigma);
      c.ssim_loss.data_range = s.value("data_range", c.ssim_loss.data_range);
    }
    if (j.contains("fractions")) c.fractions = j["fractions"].get<std::vector<double>>();
    c.fraction = j.value("fraction", c.fraction);
    c.cl_on = j.value("cl_on", c.cl_on);
    if (j.contains("sweep_seeds")) c.sweep_seeds = j["sweep_seeds"].get<std::vector<std::uint64_t>>();
    c.network.upscale = c.scale;  // degradation defines the upscale path
    return c;
  }

  static ExperimentConfig load(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw config_error("cannot open config: " + path.string());
    return from_json(json::parse(f));
  }

  std::string fingerprint() const { return hex64(fnv1a64(to_json().dump())); }

  /// Effective weights with the contrastive ablation switch applied.
  LossWeights effective_weights() const {
    LossWeights w = weights;
    if (!cl_on) {
      w.cl_feature = 0.0;
      w.cl_image = 0.0;
    }
    return w;
  }

  /// `--set key.path=value` override on the serialized form.
  static ExperimentConfig with_overrides(ExperimentConfig base,
                                         const std::vector<std::string>& overrides) {
    json j = base.to_json();
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw config_error("override must be key=value: " + kv);
      const std::string key = kv.substr(0, eq);
      const std::string value = kv.substr(eq + 1);
      json* node = &j;
      std::istringstream path(key);
      std::string part;
      std::vector<std::string> parts;
      while (std::getline(path, part, '.')) parts.push_back(part);
      if (parts.empty()) throw config_error("empty override key");
      for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
      json parsed = json::parse(value, nullptr, false);
      (*node)[parts.back()] = parsed.is_discarded() ? json(value) : parsed;
    }
    return from_json(j);
  }
};

// ---------------------------------------------------------------------------

inline std::vector<std::string> participant_ids(Index n) {
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "p%03lld", static_cast<long long>(i));
    ids.emplace_back(buf);
  }
  return ids;
}

/// Generates phantoms, materializes degraded LR volumes for the groups read
/// on the LR grid, persists the split plan. Idempotent per config.
inline void cmd_build_dataset(const ExperimentConfig& cfg) {
  const std::string fp = cfg.fingerprint();
  const fs::path dir = cfg.dataset_dir;
  fs::create_directories(dir / "hr");
  fs::create_directories(dir / "lr");

  const auto ids = participant_ids(cfg.splits.total());
  const SplitPlan plan = make_splits(ids, cfg.splits, cfg.seed);

  auto needs_lr = [&plan](const std::string& id) {
    auto in = [&id](const std::vector<std::string>& g) {
      return std::find(g.begin(), g.end(), id) != g.end();
    };
    return in(plan.target) || in(plan.validation) || in(plan.evaluation);
  };

  for (const auto& id : ids) {
    PhantomSpec ps;
    ps.shape = cfg.volume_shape;
    ps.n_ellipsoids = cfg.phantom_ellipsoids;
    ps.intensity_layers = cfg.phantom_layers;
    ps.smooth_sigma = cfg.phantom_smooth_sigma;
    ps.seed = derive_seed(cfg.seed, "volume:" + id);
    const Volume3D hr = generate_phantom(ps);
    write_volume(dir / "hr" / (id + ".vol"), hr, fp);
    if (needs_lr(id)) write_volume(dir / "lr" / (id + ".vol"), kspace_truncate(hr, cfg.scale), fp);
  }

  json sj;
  sj["config_fingerprint"] = fp;
  sj["seed"] = cfg.seed;
  sj["scale"] = {cfg.scale[0], cfg.scale[1], cfg.scale[2]};
  sj["plan"] = plan.to_json();
  std::ofstream sf(dir / "splits.json", std::ios::trunc);
  sf << sj.dump(2) << "\n";

  json dj;
  dj["config_fingerprint"] = fp;
  dj["volume_shape"] = cfg.volume_shape;
  dj["n_participants"] = ids.size();
  dj["phantom"] = {{"n_ellipsoids", cfg.phantom_ellipsoids},
                   {"intensity_layers", cfg.phantom_layers},
                   {"smooth_sigma", cfg.phantom_smooth_sigma}};
  std::ofstream df(dir / "dataset.json", std::ios::trunc);
  df << dj.dump(2) << "\n";
}

struct TrainResult {
  fs::path checkpoint;
  double best_val_psnr = 0.0;
  std::string checkpoint_hash;
  Index parameter_count = 0;
  std::vector<StepRecord> trace;
};

inline double validation_psnr(const Networks& nets, const Dataset& data) {
  if (data.plan.validation.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& id : data.plan.validation) {
    const Volume3D& hr = data.hr_of(id);
    const Volume3D sr = infer(nets, data.lr_of(id));
    const auto [lo, hi] = hr.measured_range();
    acc += psnr(hr, sr, std::max(hi - lo, 1e-9));
  }
  return acc / static_cast<double>(data.plan.validation.size());
}

/// Full training run: alternating updates, periodic validation, checkpoint
/// selection by best validation PSNR, deterministic loss CSV plus a JSONL
/// log with timings.
inline TrainResult cmd_train(const ExperimentConfig& cfg) {
  cfg.optim.validate();
  const std::string fp = cfg.fingerprint();
  fs::create_directories(cfg.out_dir);

  Dataset data = Dataset::load(cfg.dataset_dir);
  for (std::size_t a = 0; a < 3; ++a)
    if (data.scale[a] != cfg.scale[a])
      throw config_error("dataset scale does not match config scale");

  const FractionSubset subset = subset_source(data.plan, cfg.fraction, cfg.seed);
  NetworkSpec nspec = cfg.network;
  nspec.upscale = cfg.scale;
  Networks nets(nspec, derive_seed(cfg.seed, "init"));
  Adam adam_g(nets.gen_params.items(), cfg.optim.lr_generator, cfg.optim.beta1, cfg.optim.beta2,
              cfg.optim.adam_eps);
  Adam adam_d(nets.disc_params.items(), cfg.optim.lr_discriminator, cfg.optim.beta1, cfg.optim.beta2,
              cfg.optim.adam_eps);
  BatchIterator it(data, subset, cfg.patch, cfg.optim.batch, derive_seed(cfg.seed, "data"));

  const LossWeights w = cfg.effective_weights();
  const fs::path ckpt_path = cfg.out_dir / "checkpoint.srck";
  const fs::path last_path = cfg.out_dir / "last.srck";

  std::ofstream log(cfg.out_dir / "train_log.jsonl", std::ios::trunc);
  std::ostringstream csv;
  csv << "# config_fingerprint=" << fp << "\n";
  csv << "step,g_total,l1_source,l1_cycle,l1_target,ssim_source,ssim_cycle,ssim_target,"
         "adv_target,adv_feature,adv_source,cl_feature,cl_image,d_source,d_feature,d_target,"
         "lr_discriminator,lr_generator\n";

  TrainResult result;
  result.checkpoint = ckpt_path;
  result.parameter_count = nets.parameter_count();
  double best = -1.0;

  auto save_best = [&](Index step) {
    CheckpointExtras ex;
    ex.step = step;
    ex.rng_state = it.rng_state();
    ex.fingerprint = fp;
    ex.best_val_psnr = best;
    save_checkpoint(ckpt_path, nets, adam_g, adam_d, ex);
    result.checkpoint_hash = hex64(nets.parameter_hash());
  };

  auto validate_now = [&](Index step) {
    const double v = validation_psnr(nets, data);
    if (v > best || best < 0.0) {
      best = v;
      result.best_val_psnr = v;
      save_best(step);
    }
    CheckpointExtras ex;
    ex.step = step;
    ex.rng_state = it.rng_state();
    ex.fingerprint = fp;
    ex.best_val_psnr = best;
    save_checkpoint(last_path, nets, adam_g, adam_d, ex);
  };

  try {
    for (Index step = 1; step <= cfg.optim.steps; ++step) {
      const auto batch = it.next();
      StepRecord rec = training_step(nets, adam_g, adam_d, batch.ys, batch.xt, w, cfg.contrastive,
                                     cfg.ssim_loss);
      rec.step = step;
      result.trace.push_back(rec);

      csv << step << "," << format_double(rec.g_total);
      for (const auto& [name, v] : rec.g_components) csv << "," << format_double(v);
      csv << "," << format_double(rec.d_source) << "," << format_double(rec.d_feature) << ","
          << format_double(rec.d_target) << "," << format_double(rec.lr_discriminator) << ","
          << format_double(rec.lr_generator) << "\n";

      json row;
      row["step"] = step;
      row["g_total"] = rec.g_total;
      for (const auto& [name, v] : rec.g_components) row[name] = v;
      row["d_source"] = rec.d_source;
      row["d_feature"] = rec.d_feature;
      row["d_target"] = rec.d_target;
      row["lr_discriminator"] = rec.lr_discriminator;
      row["lr_generator"] = rec.lr_generator;
      row["millis"] = rec.millis;
      log << row.dump() << "\n";

      if (step % cfg.optim.val_interval == 0 || step == cfg.optim.steps) validate_now(step);
    }
    if (cfg.optim.steps == 0) validate_now(0);
  } catch (const divergence_error& e) {
    std::ofstream(cfg.out_dir / "DIVERGED") << e.what() << "\n";
    throw divergence_error(std::string(e.what()) + "; last good checkpoint: " + last_path.string());
  }

  std::ofstream csvf(cfg.out_dir / "train_loss.csv", std::ios::trunc);
  csvf << csv.str();

  json summary;
  summary["config_fingerprint"] = fp;
  summary["config"] = cfg.to_json();
  summary["steps"] = cfg.optim.steps;
  summary["fraction"] = cfg.fraction;
  summary["cl_on"] = cfg.cl_on;
  summary["best_val_psnr"] = format_double(result.best_val_psnr);
  summary["checkpoint_hash"] = result.checkpoint_hash;
  summary["parameter_count"] = result.parameter_count;
  summary["lr_discriminator"] = format_double(cfg.optim.lr_discriminator);
  summary["lr_generator"] = format_double(cfg.optim.lr_generator);
  std::ofstream(cfg.out_dir / "summary.json") << summary.dump(2) << "\n";
  return result;
}

/// Per-volume SSIM/PSNR on the evaluation group for the checkpointed model
/// and the trilinear baseline, plus central error-map slices.
inline MetricsReport cmd_eval(const ExperimentConfig& cfg, const fs::path& checkpoint_path,
                              const fs::path& out_dir) {
  fs::create_directories(out_dir);
  Dataset data = Dataset::load(cfg.dataset_dir);
  const LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
  Networks nets(ck.spec, 0);
  Adam adam_g(nets.gen_params.items(), cfg.optim.lr_generator);
  Adam adam_d(nets.disc_params.items(), cfg.optim.lr_discriminator);
  restore_checkpoint(ck, nets, adam_g, adam_d);

  MetricsReport report;
  report.config_fingerprint = cfg.fingerprint();
  report.checkpoint_hash = hex64(nets.parameter_hash());
  report.parameter_count = nets.parameter_count();

  const std::array<Index, 3> factors{data.scale[0], data.scale[1], data.scale[2]};
  for (const auto& id : data.plan.evaluation) {
    const Volume3D& hr = data.hr_of(id);
    const Volume3D& lr = data.lr_of(id);
    const auto [lo, hi] = hr.measured_range();
    const double range = std::max(hi - lo, 1e-9);

    const Volume3D sr = infer(nets, lr);
    const Volume3D base = trilinear_upsample(lr, factors);

    VolumeMetrics m;
    m.id = id;
    m.kind = "model";
    m.psnr_db = psnr(hr, sr, range);
    m.ssim3d = ssim(hr, sr, range);
    m.ssim_slice = ssim_slicewise(hr, sr, range);
    report.rows.push_back(m);

    VolumeMetrics b;
    b.id = id;
    b.kind = "trilinear";
    b.psnr_db = psnr(hr, base, range);
    b.ssim3d = ssim(hr, base, range);
    b.ssim_slice = ssim_slicewise(hr, base, range);
    report.rows.push_back(b);

    write_slice_pgm(out_dir / ("errmap_model_" + id + ".pgm"), error_map(hr, sr), hr.nz() / 2,
                    report.config_fingerprint);
    write_slice_pgm(out_dir / ("errmap_trilinear_" + id + ".pgm"), error_map(hr, base), hr.nz() / 2,
                    report.config_fingerprint);
  }

  report.write_csv(out_dir / "eval_per_volume.csv");
  report.write_summary_csv(out_dir / "eval_summary.csv");
  std::ofstream(out_dir / "eval.json") << report.to_json().dump(2) << "\n";
  return report;
}

// ---------------------------------------------------------------------------
// sweep: fractions x {cl_on, cl_off} x seeds, resumable per cell

struct SweepCell {
  double fraction = 1.0;
  bool cl_on = true;
  std::uint64_t seed = 1;
  double psnr_mean = 0.0, psnr_std = 0.0, ssim_mean = 0.0, ssim_std = 0.0;
};

inline std::string cell_name(double fraction, bool cl_on, std::uint64_t seed) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "f%03d_cl%d_s%llu", static_cast<int>(std::lround(fraction * 100)),
                cl_on ? 1 : 0, static_cast<unsigned long long>(seed));
  return buf;
}

inline double median_of(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

inline SweepCell run_sweep_cell(const ExperimentConfig& base, double fraction, bool cl_on,
                                std::uint64_t seed) {
  ExperimentConfig cfg = base;
  cfg.fraction = fraction;
  cfg.cl_on = cl_on;
  cfg.seed = seed;
  cfg.out_dir = base.out_dir / "cells" / cell_name(fraction, cl_on, seed);

  const fs::path marker = cfg.out_dir / "cell_result.json";
  if (fs::exists(marker)) {
    std::ifstream f(marker);
    json j = json::parse(f, nullptr, false);
    if (!j.is_discarded() && j.value("config_fingerprint", "") == cfg.fingerprint()) {
      SweepCell c;
      c.fraction = fraction;
      c.cl_on = cl_on;
      c.seed = seed;
      c.psnr_mean = j.at("psnr_mean").get<double>();
      c.psnr_std = j.at("psnr_std").get<double>();
      c.ssim_mean = j.at("ssim_mean").get<double>();
      c.ssim_std = j.at("ssim_std").get<double>();
      return c;  // completed cell, resume
    }
  }

  const TrainResult tr = cmd_train(cfg);
  const MetricsReport report = cmd_eval(cfg, tr.checkpoint, cfg.out_dir / "eval");
  const auto p = aggregate_of(report.values("model", &VolumeMetrics::psnr_db));
  const auto s = aggregate_of(report.values("model", &VolumeMetrics::ssim3d));

  SweepCell c;
  c.fraction = fraction;
  c.cl_on = cl_on;
  c.seed = seed;
  c.psnr_mean = p.mean;
  c.psnr_std = p.stddev;
  c.ssim_mean = s.mean;
  c.ssim_std = s.stddev;

  json j;
  j["config_fingerprint"] = cfg.fingerprint();
  j["fraction"] = fraction;
  j["cl_on"] = cl_on;
  j["seed"] = seed;
  j["psnr_mean"] = c.psnr_mean;
  j["psnr_std"] = c.psnr_std;
  j["ssim_mean"] = c.ssim_mean;
  j["ssim_std"] = c.ssim_std;
  std::ofstream(marker) << j.dump(2) << "\n";
  return c;
}

inline void write_sweep_plot_script(const fs::path& dir, const std::string& fp) {
  std::ofstream py(dir / "plot_sweep.py", std::ios::trunc);
  py << "#!/usr/bin/env python3\n";
  py << "# config_fingerprint=" << fp << "\n";
  py << R"(import csv
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

rows = []
with open("sweep_summary.csv") as f:
    for row in csv.DictReader(r for r in f if not r.startswith("#")):
        rows.append(row)

for metric, fname in (("psnr_median", "psnr_vs_fraction.png"), ("ssim_median", "ssim_vs_fraction.png")):
    plt.figure(figsize=(5, 4))
    for flag, label, style in ((1, "with contrastive loss", "o-"), (0, "without contrastive loss", "s--")):
        pts = sorted((float(r["fraction"]), float(r[metric])) for r in rows if int(r["cl_on"]) == flag)
        if pts:
            plt.plot([p[0] for p in pts], [p[1] for p in pts], style, label=label)
    plt.xlabel("HR source fraction")
    plt.ylabel(metric.split("_")[0].upper())
    plt.legend()
    plt.grid(alpha=0.3)
    plt.tight_layout()
    plt.savefig(fname, dpi=150)
print("wrote psnr_vs_fraction.png and ssim_vs_fraction.png")
)";
}

/// HR-fraction x ablation grid with shared seeds; emits one CSV row per
/// cell and a median-over-seeds summary with a plotting script.
inline void cmd_sweep(const ExperimentConfig& base) {
  fs::create_directories(base.out_dir);
  const std::string fp = base.fingerprint();

  struct Task {
    double fraction;
    bool cl_on;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (double f : base.fractions)
    for (bool cl : {true, false})
      for (std::uint64_t s : base.sweep_seeds) tasks.push_back({f, cl, s});

  std::vector<SweepCell> cells(tasks.size());
  Index workers = 1;
  if (const char* env = std::getenv("SRCL_WORKERS")) workers = std::max<Index>(1, std::atoll(env));
  if (workers <= 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i)
      cells[i] = run_sweep_cell(base, tasks[i].fraction, tasks[i].cl_on, tasks[i].seed);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (Index t = 0; t < workers; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < tasks.size(); i = next.fetch_add(1))
          cells[i] = run_sweep_cell(base, tasks[i].fraction, tasks[i].cl_on, tasks[i].seed);
      });
    for (auto& th : pool) th.join();
  }

  std::ofstream csv(base.out_dir / "sweep.csv", std::ios::trunc);
  csv << "# config_fingerprint=" << fp << "\n";
  csv << "fraction,cl_on,seed,psnr_mean,psnr_std,ssim_mean,ssim_std\n";
  for (const auto& c : cells)
    csv << format_double(c.fraction) << "," << (c.cl_on ? 1 : 0) << "," << c.seed << ","
        << format_double(c.psnr_mean) << "," << format_double(c.psnr_std) << ","
        << format_double(c.ssim_mean) << "," << format_double(c.ssim_std) << "\n";

  std::ofstream summary(base.out_dir / "sweep_summary.csv", std::ios::trunc);
  summary << "# config_fingerprint=" << fp << "\n";
  summary << "fraction,cl_on,n_seeds,psnr_median,ssim_median\n";
  for (double f : base.fractions)
    for (bool cl : {true, false}) {
      std::vector<double> ps, ss;
      for (const auto& c : cells)
        if (std::abs(c.fraction - f) < 1e-12 && c.cl_on == cl) {
          ps.push_back(c.psnr_mean);
          ss.push_back(c.ssim_mean);
        }
      summary << format_double(f) << "," << (cl ? 1 : 0) << "," << ps.size() << ","
              << format_double(median_of(ps)) << "," << format_double(median_of(ss)) << "\n";
    }

  write_sweep_plot_script(base.out_dir, fp);
}

/// Standalone k-space degradation of a volume file.
inline void cmd_degrade(const fs::path& input, const fs::path& output, const ScaleFactor& f) {
  const Volume3D hr = read_volume(input);
  const Volume3D lr = kspace_truncate(hr, f);
  std::ostringstream tag;
  tag << "degrade:" << f[0] << "x" << f[1] << "x" << f[2];
  const std::string fp = hex64(fnv1a64(tag.str(), fnv1a64(hr.data.data(), static_cast<std::size_t>(hr.data.numel()) * sizeof(double))));
  if (output.has_parent_path()) fs::create_directories(output.parent_path());
  write_volume(output, lr, fp);
}

}  // namespace srcl
