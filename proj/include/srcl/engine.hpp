#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "srcl/autodiff.hpp"
#include "srcl/contrastive.hpp"
#include "srcl/networks.hpp"
#include "srcl/tensor.hpp"
#include "srcl/volume.hpp"

namespace srcl {

/// Relative weights of the generator objective's families.
struct LossWeights {
  double l1 = 1.0;
  double ssim = 1.0;
  double adv = 0.05;
  double cl_feature = 0.1;
  double cl_image = 0.1;

  void validate() const {
    for (double w : {l1, ssim, adv, cl_feature, cl_image})
      if (w < 0.0) throw config_error("loss weights must be nonnegative");
    if (l1 == 0.0 && ssim == 0.0 && adv == 0.0 && cl_feature == 0.0 && cl_image == 0.0)
      throw config_error("at least one generator loss weight must be positive");
  }
};

struct OptimSettings {
  double lr_discriminator = 5e-5;
  double lr_generator = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index batch = 4;
  Index steps = 300;
  Index val_interval = 50;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(lr_discriminator > 0.0) || !(lr_generator > 0.0))
      throw config_error("learning rates must be > 0");
    if (batch < 1 || steps < 0) throw config_error("batch must be >= 1 and steps >= 0");
  }
};

/// SSIM term of the training objective. The window is clamped to the
/// smallest spatial extent of the pair it is applied to.
struct SsimLossSpec {
  Index window = 11;
  double sigma = 1.5;
  double data_range = 1.0;

  Index fitted_window(const Shape& batch_shape) const {
    Index w = window;
    for (int a = 2; a < 5; ++a) w = std::min(w, batch_shape[a]);
    if (w % 2 == 0) --w;
    return std::max<Index>(1, w);
  }
};

/// All intermediate tensors of one training step, named as in the model's
/// three data flows.
struct FlowBundle {
  Variable ys, xt;                       // input batches (leaves)
  Variable f_s, ys_hat, x_st, f_sts, y_sts;  // source flows
  Variable f_t, xt_hat, yt_hat;          // target flow + inference head

  std::vector<std::pair<std::string, const Variable*>> named() const {
    return {{"f_s", &f_s},     {"ys_hat", &ys_hat}, {"x_st", &x_st},
            {"f_sts", &f_sts}, {"y_sts", &y_sts},   {"f_t", &f_t},
            {"xt_hat", &xt_hat}, {"yt_hat", &yt_hat}};
  }
};

/// Runs the three data flows. ys: [N, 1, HR grid], xt: [N, 1, LR grid];
/// HR grid must equal LR grid times the spec's upscale factors.
inline FlowBundle build_flows(const Networks& nets, const Tensor& ys, const Tensor& xt) {
  if (ys.rank() != 5 || xt.rank() != 5)
    throw config_error("build_flows expects rank-5 batches [N, 1, Z, Y, X]");
  if (ys.dim(0) != xt.dim(0))
    throw config_error("build_flows: batch size mismatch " + std::to_string(ys.dim(0)) + " vs " +
                       std::to_string(xt.dim(0)));
  for (int a = 0; a < 3; ++a)
    if (ys.dim(2 + a) != xt.dim(2 + a) * nets.spec.upscale[static_cast<std::size_t>(a)])
      throw config_error("build_flows: HR grid is not LR grid times the scale factor on axis " +
                         std::to_string(a));

  FlowBundle b;
  b.ys = Variable::leaf(ys, false);
  b.xt = Variable::leaf(xt, false);
  b.f_s = nets.hr_encode(b.ys);
  b.ys_hat = nets.sr_decode(b.f_s);
  b.x_st = nets.lr_decode(b.f_s);
  b.f_sts = nets.lr_encode(b.x_st);
  b.y_sts = nets.sr_decode(b.f_sts);
  b.f_t = nets.lr_encode(b.xt);
  b.xt_hat = nets.lr_decode(b.f_t);
  b.yt_hat = nets.sr_decode(b.f_t);

  for (const auto& [name, v] : b.named())
    if (!v->value().all_finite())
      throw divergence_error(std::string("non-finite activation in flow tensor ") + name);
  return b;
}

inline Variable flatten_batch(const Variable& x) {
  const Index n = x.value().dim(0);
  return reshape(x, {n, x.value().numel() / n});
}

/// Non-saturating generator-side adversarial term: mean softplus(-logit).
inline Variable adversarial_gen(const Variable& logits) { return mean_all(softplus(neg(logits))); }

/// Binary discriminator objective, non-saturating convention.
inline Variable adversarial_disc(const Variable& real_logits, const Variable& fake_logits) {
  return add(mean_all(softplus(neg(real_logits))), mean_all(softplus(fake_logits)));
}

struct GeneratorLoss {
  Variable total;
  // weighted contributions, fixed order; they sum to total
  std::vector<std::pair<std::string, double>> components;

  double component(const std::string& name) const {
    for (const auto& [k, v] : components)
      if (k == name) return v;
    throw config_error("unknown loss component: " + name);
  }
};

inline GeneratorLoss generator_loss(const Networks& nets, const FlowBundle& b, const LossWeights& w,
                                    const ContrastiveConfig& ccfg, const SsimLossSpec& ssim_spec = {}) {
  w.validate();
  GeneratorLoss out;

  auto push = [&out](const std::string& name, double weight, auto&& build) {
    if (weight > 0.0) {
      Variable term = mul_scalar(build(), weight);
      if (!std::isfinite(term.item()))
        throw divergence_error("non-finite generator loss component " + name);
      out.components.emplace_back(name, term.item());
      out.total = out.total.defined() ? add(out.total, term) : term;
    } else {
      out.components.emplace_back(name, 0.0);
    }
  };

  auto ssim_term = [&](const Variable& a, const Variable& ref) {
    const Index win = ssim_spec.fitted_window(ref.value().shape());
    return add_scalar(neg(ssim_mean(a, ref, win, ssim_spec.sigma, ssim_spec.data_range)), 1.0);
  };

  push("l1_source", w.l1, [&] { return l1_loss(b.ys_hat, b.ys); });
  push("l1_cycle", w.l1, [&] { return l1_loss(b.y_sts, b.ys); });
  push("l1_target", w.l1, [&] { return l1_loss(b.xt_hat, b.xt); });

  push("ssim_source", w.ssim, [&] { return ssim_term(b.ys_hat, b.ys); });
  push("ssim_cycle", w.ssim, [&] { return ssim_term(b.y_sts, b.ys); });
  push("ssim_target", w.ssim, [&] { return ssim_term(b.xt_hat, b.xt); });

  push("adv_target", w.adv, [&] { return adversarial_gen(nets.discriminate(DiscKind::target, b.x_st)); });
  push("adv_feature", w.adv, [&] { return adversarial_gen(nets.discriminate(DiscKind::feature, b.f_t)); });
  push("adv_source", w.adv, [&] { return adversarial_gen(nets.discriminate(DiscKind::source, b.yt_hat)); });

  push("cl_feature", w.cl_feature,
       [&] { return contrastive_loss(flatten_batch(b.f_sts), flatten_batch(b.f_s), ccfg); });
  push("cl_image", w.cl_image, [&] {
    return add(contrastive_loss(flatten_batch(b.y_sts), flatten_batch(b.ys), ccfg),
               contrastive_loss(flatten_batch(b.ys_hat), flatten_batch(b.ys), ccfg));
  });

  if (!out.total.defined()) out.total = Variable::leaf(Tensor::zeros({1}), false);
  return out;
}

struct DiscriminatorLoss {
  Variable source, feature, target;

  Variable total() const { return add(add(source, feature), target); }
};

/// Real/fake pairings per discriminator; every generator-produced tensor is
/// detached so gradients reach only discriminator parameters.
inline DiscriminatorLoss discriminator_loss(const Networks& nets, const FlowBundle& b) {
  DiscriminatorLoss d;
  d.target = adversarial_disc(nets.discriminate(DiscKind::target, b.xt),
                              nets.discriminate(DiscKind::target, detach(b.x_st)));
  d.feature = adversarial_disc(nets.discriminate(DiscKind::feature, detach(b.f_s)),
                               nets.discriminate(DiscKind::feature, detach(b.f_t)));
  d.source = adversarial_disc(nets.discriminate(DiscKind::source, b.ys),
                              nets.discriminate(DiscKind::source, detach(b.yt_hat)));
  for (auto [name, v] : {std::pair<const char*, Variable*>{"d_source", &d.source},
                         {"d_feature", &d.feature},
                         {"d_target", &d.target}})
    if (!std::isfinite(v->item())) throw divergence_error(std::string("non-finite ") + name + " loss");
  return d;
}

class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Variable>> params, double lr, double beta1 = 0.5,
       double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    slots_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      slots_[i].m = Tensor::zeros(params_[i].second.value().shape());
      slots_[i].v = Tensor::zeros(params_[i].second.value().shape());
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].second;
      if (p.grad().numel() == 0) continue;
      auto& s = slots_[i];
      s.m.array() = beta1_ * s.m.array() + (1.0 - beta1_) * p.grad().array();
      s.v.array() = beta2_ * s.v.array() + (1.0 - beta2_) * p.grad().array().square();
      p.mutable_value().array() -=
          lr_ * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + eps_);
    }
  }

  double lr() const { return lr_; }
  std::int64_t t() const { return t_; }
  void set_t(std::int64_t t) { t_ = t; }

  const std::vector<std::pair<std::string, Variable>>& params() const { return params_; }
  Tensor& moment_m(std::size_t i) { return slots_[i].m; }
  Tensor& moment_v(std::size_t i) { return slots_[i].v; }

 private:
  struct Slot {
    Tensor m, v;
  };
  std::vector<std::pair<std::string, Variable>> params_;
  std::vector<Slot> slots_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

struct StepRecord {
  Index step = 0;
  double g_total = 0.0;
  std::vector<std::pair<std::string, double>> g_components;
  double d_source = 0.0, d_feature = 0.0, d_target = 0.0;
  double lr_discriminator = 0.0, lr_generator = 0.0;
  double millis = 0.0;
};

/// One alternating update: all three discriminators, then the generators.
inline StepRecord training_step(Networks& nets, Adam& adam_g, Adam& adam_d, const Tensor& ys,
                                const Tensor& xt, const LossWeights& w, const ContrastiveConfig& ccfg,
                                const SsimLossSpec& ssim_spec = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  StepRecord rec;
  rec.lr_discriminator = adam_d.lr();
  rec.lr_generator = adam_g.lr();

  FlowBundle bundle = build_flows(nets, ys, xt);

  adam_d.zero_grad();
  adam_g.zero_grad();
  DiscriminatorLoss dl = discriminator_loss(nets, bundle);
  rec.d_source = dl.source.item();
  rec.d_feature = dl.feature.item();
  rec.d_target = dl.target.item();
  dl.total().backward();
  adam_d.step();

  adam_d.zero_grad();
  adam_g.zero_grad();
  GeneratorLoss gl = generator_loss(nets, bundle, w, ccfg, ssim_spec);
  rec.g_total = gl.total.item();
  rec.g_components = gl.components;
  if (!std::isfinite(rec.g_total)) throw divergence_error("non-finite generator loss");
  gl.total.backward();
  adam_g.step();

  rec.millis = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

/// Inference flow X_t -> f_t -> Y_t on a full volume; read-only.
inline Volume3D infer(const Networks& nets, const Volume3D& lr) {
  NoGradGuard ng;
  Tensor x({1, 1, lr.nz(), lr.ny(), lr.nx()});
  std::memcpy(x.data(), lr.data.data(), sizeof(double) * static_cast<std::size_t>(lr.data.numel()));
  Variable out = nets.sr_decode(nets.lr_encode(Variable::leaf(std::move(x), false)));
  const auto& shape = out.value().shape();
  Volume3D sr(Tensor::zeros({shape[2], shape[3], shape[4]}));
  std::memcpy(sr.data.data(), out.value().data(), sizeof(double) * static_cast<std::size_t>(sr.data.numel()));
  sr.spacing = {lr.spacing[0] / static_cast<double>(nets.spec.upscale[0]),
                lr.spacing[1] / static_cast<double>(nets.spec.upscale[1]),
                lr.spacing[2] / static_cast<double>(nets.spec.upscale[2])};
  return sr;
}

inline Tensor infer_batch(const Networks& nets, const Tensor& xt) {
  NoGradGuard ng;
  return nets.sr_decode(nets.lr_encode(Variable::leaf(xt, false))).value();
}

// ---------------------------------------------------------------------------
// checkpoint archive: magic, u64 header length, JSON header, raw f64 payload

namespace detail {
constexpr char kCheckpointMagic[8] = {'S', 'R', 'C', 'K', 'P', 'T', '1', '\n'};
}

struct CheckpointExtras {
  std::int64_t step = 0;
  std::string rng_state;
  std::string fingerprint;
  double best_val_psnr = 0.0;
};

inline void save_checkpoint(const std::filesystem::path& path, const Networks& nets, Adam& adam_g,
                            Adam& adam_d, const CheckpointExtras& extras) {
  json header;
  header["format"] = "srcl-checkpoint-1";
  header["spec"] = nets.spec.to_json();
  header["step"] = extras.step;
  header["rng_state"] = extras.rng_state;
  header["config_fingerprint"] = extras.fingerprint;
  header["best_val_psnr"] = extras.best_val_psnr;
  header["adam_g_t"] = adam_g.t();
  header["adam_d_t"] = adam_d.t();

  std::vector<const Tensor*> payload;
  json arrays = json::array();
  std::int64_t offset = 0;
  auto put = [&](const std::string& name, const Tensor& t) {
    json a;
    a["name"] = name;
    a["shape"] = t.shape();
    a["offset"] = offset;
    arrays.push_back(a);
    payload.push_back(&t);
    offset += t.numel();
  };
  for (const auto& [name, v] : nets.gen_params.items()) put("gen:" + name, v.value());
  for (const auto& [name, v] : nets.disc_params.items()) put("disc:" + name, v.value());
  for (std::size_t i = 0; i < adam_g.params().size(); ++i) {
    put("adam_g.m:" + adam_g.params()[i].first, adam_g.moment_m(i));
    put("adam_g.v:" + adam_g.params()[i].first, adam_g.moment_v(i));
  }
  for (std::size_t i = 0; i < adam_d.params().size(); ++i) {
    put("adam_d.m:" + adam_d.params()[i].first, adam_d.moment_m(i));
    put("adam_d.v:" + adam_d.params()[i].first, adam_d.moment_v(i));
  }
  header["arrays"] = arrays;

  const std::string hjson = header.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw config_error("cannot open checkpoint for writing: " + path.string());
  f.write(detail::kCheckpointMagic, 8);
  const std::uint64_t hlen = hjson.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(hjson.data(), static_cast<std::streamsize>(hjson.size()));
  for (const Tensor* t : payload)
    f.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->numel() * 8));
  if (!f) throw config_error("checkpoint write failed: " + path.string());
}

struct LoadedCheckpoint {
  NetworkSpec spec;
  CheckpointExtras extras;
  std::int64_t adam_g_t = 0, adam_d_t = 0;
  std::map<std::string, Tensor> arrays;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw config_error("cannot open checkpoint: " + path.string());
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
    throw config_error("not a checkpoint file: " + path.string());
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hjson(hlen, '\0');
  f.read(hjson.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw config_error("truncated checkpoint header: " + path.string());
  json header = json::parse(hjson);

  LoadedCheckpoint ck;
  ck.spec = NetworkSpec::from_json(header.at("spec"));
  ck.extras.step = header.value("step", 0);
  ck.extras.rng_state = header.value("rng_state", "");
  ck.extras.fingerprint = header.value("config_fingerprint", "");
  ck.extras.best_val_psnr = header.value("best_val_psnr", 0.0);
  ck.adam_g_t = header.value("adam_g_t", 0);
  ck.adam_d_t = header.value("adam_d_t", 0);

  for (const auto& a : header.at("arrays")) {
    const auto shape = a.at("shape").get<Shape>();
    Tensor t(shape);
    ck.arrays.emplace(a.at("name").get<std::string>(), std::move(t));
  }
  // payload follows header in array declaration order
  for (const auto& a : header.at("arrays")) {
    Tensor& t = ck.arrays.at(a.at("name").get<std::string>());
    f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
  }
  if (!f) throw config_error("truncated checkpoint payload: " + path.string());
  return ck;
}

/// Overwrites live parameters and optimizer moments from a loaded archive.
inline void restore_checkpoint(const LoadedCheckpoint& ck, Networks& nets, Adam& adam_g, Adam& adam_d) {
  auto fetch = [&ck](const std::string& name) -> const Tensor& {
    auto it = ck.arrays.find(name);
    if (it == ck.arrays.end()) throw config_error("checkpoint missing array: " + name);
    return it->second;
  };
  for (const auto& [name, v] : nets.gen_params.items()) {
    Variable live = v;  // handles share the node
    live.mutable_value() = fetch("gen:" + name);
  }
  for (const auto& [name, v] : nets.disc_params.items()) {
    Variable live = v;
    live.mutable_value() = fetch("disc:" + name);
  }
  for (std::size_t i = 0; i < adam_g.params().size(); ++i) {
    adam_g.moment_m(i) = fetch("adam_g.m:" + adam_g.params()[i].first);
    adam_g.moment_v(i) = fetch("adam_g.v:" + adam_g.params()[i].first);
  }
  for (std::size_t i = 0; i < adam_d.params().size(); ++i) {
    adam_d.moment_m(i) = fetch("adam_d.m:" + adam_d.params()[i].first);
    adam_d.moment_v(i) = fetch("adam_d.v:" + adam_d.params()[i].first);
  }
  adam_g.set_t(ck.adam_g_t);
  adam_d.set_t(ck.adam_d_t);
}

}  // namespace srcl
