#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "srcl/autodiff.hpp"
#include "srcl/conv3d.hpp"
#include "srcl/kspace.hpp"
#include "srcl/rng.hpp"
#include "srcl/tensor.hpp"

namespace srcl {

/// Architecture hyperparameters for the four generators and three
/// discriminators. Desk-scale defaults; paper_faithful pins the encoder
/// depth at six blocks.
struct NetworkSpec {
  Index base_channels = 16;
  Index n_encoder_blocks = 6;
  Index n_rcab_blocks = 4;
  Index ca_reduction = 4;
  double leaky_slope = 0.2;
  ScaleFactor upscale;
  Index disc_stages = 4;
  Index disc_base_channels = 16;
  bool paper_faithful = true;

  void validate() const {
    if (paper_faithful && n_encoder_blocks != 6)
      throw config_error("paper-faithful mode requires exactly 6 encoder blocks, got " +
                         std::to_string(n_encoder_blocks));
    if (base_channels < 1 || n_encoder_blocks < 1 || n_rcab_blocks < 1 || disc_stages < 1)
      throw config_error("network spec sizes must be >= 1");
    if (ca_reduction < 1) throw config_error("channel attention reduction must be >= 1");
    for (auto f : upscale.f)
      if (f < 1) throw config_error("upscale factors must be >= 1");
  }

  json to_json() const {
    json j;
    j["base_channels"] = base_channels;
    j["n_encoder_blocks"] = n_encoder_blocks;
    j["n_rcab_blocks"] = n_rcab_blocks;
    j["ca_reduction"] = ca_reduction;
    j["leaky_slope"] = leaky_slope;
    j["upscale"] = {upscale[0], upscale[1], upscale[2]};
    j["disc_stages"] = disc_stages;
    j["disc_base_channels"] = disc_base_channels;
    j["paper_faithful"] = paper_faithful;
    return j;
  }

  static NetworkSpec from_json(const json& j) {
    NetworkSpec s;
    s.base_channels = j.value("base_channels", s.base_channels);
    s.n_encoder_blocks = j.value("n_encoder_blocks", s.n_encoder_blocks);
    s.n_rcab_blocks = j.value("n_rcab_blocks", s.n_rcab_blocks);
    s.ca_reduction = j.value("ca_reduction", s.ca_reduction);
    s.leaky_slope = j.value("leaky_slope", s.leaky_slope);
    if (j.contains("upscale")) {
      auto u = j["upscale"].get<std::vector<Index>>();
      s.upscale = ScaleFactor(u.at(0), u.at(1), u.at(2));
    }
    s.disc_stages = j.value("disc_stages", s.disc_stages);
    s.disc_base_channels = j.value("disc_base_channels", s.disc_base_channels);
    s.paper_faithful = j.value("paper_faithful", s.paper_faithful);
    return s;
  }
};

/// Named learnable tensors in registration order. Registration order is a
/// pure function of the spec, which makes parameter hashes comparable.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  /// Kaiming fan-in Gaussian init scaled for the leaky slope.
  Variable create_conv(const std::string& name, Shape shape, Index fan_in, double slope) {
    const double stddev = std::sqrt(2.0 / ((1.0 + slope * slope) * static_cast<double>(fan_in)));
    Tensor t(shape);
    Rng rng(derive_seed(seed_, name));
    for (Index i = 0; i < t.numel(); ++i) t[i] = stddev * rng.normal();
    return add(name, std::move(t));
  }

  Variable create_zeros(const std::string& name, Shape shape) {
    return add(name, Tensor::zeros(std::move(shape)));
  }

  const std::vector<std::pair<std::string, Variable>>& items() const { return items_; }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& [name, v] : items_) n += v.value().numel();
    return n;
  }

  std::vector<Variable> variables() const {
    std::vector<Variable> out;
    out.reserve(items_.size());
    for (const auto& [name, v] : items_) out.push_back(v);
    return out;
  }

  Variable find(const std::string& name) const {
    for (const auto& [n, v] : items_)
      if (n == name) return v;
    throw config_error("unknown parameter: " + name);
  }

  std::uint64_t content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, v] : items_) {
      h = fnv1a64(name, h);
      h = fnv1a64(v.value().data(), static_cast<std::size_t>(v.value().numel()) * sizeof(double), h);
    }
    return h;
  }

 private:
  Variable add(const std::string& name, Tensor t) {
    Variable v = Variable::leaf(std::move(t), true);
    items_.emplace_back(name, v);
    return v;
  }

  std::uint64_t seed_;
  std::vector<std::pair<std::string, Variable>> items_;
};

struct Conv3dLayer {
  Variable w, b;
  std::array<Index, 3> stride{1, 1, 1};

  static Conv3dLayer make(ParamStore& ps, const std::string& name, Index cin, Index cout,
                          double slope, std::array<Index, 3> stride = {1, 1, 1}) {
    Conv3dLayer l;
    l.w = ps.create_conv(name + ".weight", {cout, cin, 3, 3, 3}, cin * 27, slope);
    l.b = ps.create_zeros(name + ".bias", {cout});
    l.stride = stride;
    return l;
  }

  Variable operator()(const Variable& x) const { return conv3d(x, w, b, stride); }
};

struct LinearLayer {
  Variable w, b;

  static LinearLayer make(ParamStore& ps, const std::string& name, Index in, Index out, double slope) {
    LinearLayer l;
    l.w = ps.create_conv(name + ".weight", {out, in}, in, slope);
    l.b = ps.create_zeros(name + ".bias", {out});
    return l;
  }

  Variable operator()(const Variable& x) const { return linear(x, w, b); }
};

/// Six identical conv+LeakyReLU modules; the HR variant strides its first
/// convolution by the per-axis factor to land on the LR grid.
struct Encoder {
  std::vector<Conv3dLayer> blocks;
  double slope = 0.2;
  std::array<Index, 3> first_stride{1, 1, 1};

  static Encoder make(ParamStore& ps, const std::string& name, const NetworkSpec& spec,
                      std::array<Index, 3> first_stride) {
    Encoder e;
    e.slope = spec.leaky_slope;
    e.first_stride = first_stride;
    for (Index i = 0; i < spec.n_encoder_blocks; ++i) {
      const Index cin = i == 0 ? 1 : spec.base_channels;
      const auto stride = i == 0 ? first_stride : std::array<Index, 3>{1, 1, 1};
      e.blocks.push_back(Conv3dLayer::make(ps, name + ".block" + std::to_string(i), cin,
                                           spec.base_channels, spec.leaky_slope, stride));
    }
    return e;
  }

  Variable operator()(const Variable& x) const {
    Variable h = x;
    for (const auto& blk : blocks) h = leaky_relu(blk(h), slope);
    return h;
  }
};

/// Squeeze-and-gate channel attention; the gate is a per-channel sigmoid.
struct ChannelAttention {
  LinearLayer squeeze, excite;
  double slope = 0.2;

  static ChannelAttention make(ParamStore& ps, const std::string& name, Index channels,
                               Index reduction, double slope) {
    ChannelAttention ca;
    ca.slope = slope;
    const Index hidden = std::max<Index>(1, channels / reduction);
    ca.squeeze = LinearLayer::make(ps, name + ".squeeze", channels, hidden, slope);
    ca.excite = LinearLayer::make(ps, name + ".excite", hidden, channels, slope);
    return ca;
  }

  Variable gate(const Variable& x) const {
    return sigmoid(excite(leaky_relu(squeeze(global_avg_pool(x)), slope)));
  }

  Variable operator()(const Variable& x) const { return scale_channels(x, gate(x)); }
};

/// Residual channel attention block.
struct Rcab {
  Conv3dLayer c1, c2;
  ChannelAttention ca;
  double slope = 0.2;

  static Rcab make(ParamStore& ps, const std::string& name, const NetworkSpec& spec) {
    Rcab r;
    r.slope = spec.leaky_slope;
    r.c1 = Conv3dLayer::make(ps, name + ".conv1", spec.base_channels, spec.base_channels, spec.leaky_slope);
    r.c2 = Conv3dLayer::make(ps, name + ".conv2", spec.base_channels, spec.base_channels, spec.leaky_slope);
    r.ca = ChannelAttention::make(ps, name + ".ca", spec.base_channels, spec.ca_reduction, spec.leaky_slope);
    return r;
  }

  Variable operator()(const Variable& x) const {
    return add(x, ca(c2(leaky_relu(c1(x), slope))));
  }
};

/// Shallow RCAN-style decoder: head conv, RCAB stack, tail conv with a long
/// skip, optional sub-voxel upsampling, final projection to one channel.
struct Decoder {
  Conv3dLayer head, tail, final_conv;
  std::vector<Rcab> blocks;
  bool upsample = false;
  Conv3dLayer up;
  std::array<Index, 3> factors{1, 1, 1};
  double slope = 0.2;

  static Decoder make(ParamStore& ps, const std::string& name, const NetworkSpec& spec, bool upsample) {
    Decoder d;
    d.slope = spec.leaky_slope;
    d.upsample = upsample;
    d.factors = {spec.upscale[0], spec.upscale[1], spec.upscale[2]};
    const Index c = spec.base_channels;
    d.head = Conv3dLayer::make(ps, name + ".head", c, c, spec.leaky_slope);
    for (Index i = 0; i < spec.n_rcab_blocks; ++i)
      d.blocks.push_back(Rcab::make(ps, name + ".rcab" + std::to_string(i), spec));
    d.tail = Conv3dLayer::make(ps, name + ".tail", c, c, spec.leaky_slope);
    if (upsample) {
      const Index fprod = d.factors[0] * d.factors[1] * d.factors[2];
      d.up = Conv3dLayer::make(ps, name + ".up", c, c * fprod, spec.leaky_slope);
    }
    d.final_conv = Conv3dLayer::make(ps, name + ".final", c, 1, spec.leaky_slope);
    return d;
  }

  Variable operator()(const Variable& f) const {
    Variable h = head(f);
    Variable r = h;
    for (const auto& blk : blocks) r = blk(r);
    r = add(tail(r), h);  // long skip
    if (upsample && (factors[0] > 1 || factors[1] > 1 || factors[2] > 1)) {
      r = leaky_relu(up(r), slope);
      r = voxel_shuffle(r, factors);
    }
    return final_conv(r);
  }
};

/// VGG-style critic: stride-2 conv stages with doubling channels, global
/// average pool and a linear head producing one unbounded logit per sample.
struct Discriminator {
  Conv3dLayer stem;
  std::vector<std::pair<Conv3dLayer, Conv3dLayer>> stages;
  LinearLayer fc;
  double slope = 0.2;
  Index in_channels = 1;

  static Discriminator make(ParamStore& ps, const std::string& name, const NetworkSpec& spec,
                            Index in_channels) {
    Discriminator d;
    d.slope = spec.leaky_slope;
    d.in_channels = in_channels;
    Index c = spec.disc_base_channels;
    d.stem = Conv3dLayer::make(ps, name + ".stem", in_channels, c, spec.leaky_slope);
    for (Index i = 0; i < spec.disc_stages; ++i) {
      const Index cout = std::min<Index>(c * 2, 8 * spec.disc_base_channels);
      d.stages.emplace_back(
          Conv3dLayer::make(ps, name + ".stage" + std::to_string(i) + ".conv", c, c, spec.leaky_slope),
          Conv3dLayer::make(ps, name + ".stage" + std::to_string(i) + ".down", c, cout, spec.leaky_slope,
                            {2, 2, 2}));
      c = cout;
    }
    d.fc = LinearLayer::make(ps, name + ".fc", c, 1, spec.leaky_slope);
    return d;
  }

  /// x: [N, in_channels, Z, Y, X] -> logits [N].
  Variable operator()(const Variable& x) const {
    if (x.value().rank() != 5)
      throw config_error("discriminator expects a rank-5 batch, got " + shape_str(x.value().shape()));
    if (x.value().dim(1) != in_channels)
      throw config_error("discriminator channel mismatch: expected " + std::to_string(in_channels) +
                         ", got " + std::to_string(x.value().dim(1)));
    Variable h = leaky_relu(stem(x), slope);
    for (const auto& [conv, down] : stages) {
      h = leaky_relu(conv(h), slope);
      h = leaky_relu(down(h), slope);
    }
    return reshape(fc(global_avg_pool(h)), {x.value().dim(0)});
  }
};

enum class DiscKind { source, feature, target };

inline const char* disc_name(DiscKind k) {
  switch (k) {
    case DiscKind::source: return "source";
    case DiscKind::feature: return "feature";
    default: return "target";
  }
}

/// The full model: two encoders, two decoders, three discriminators, with
/// separate parameter stores so optimizer updates cannot cross sides.
struct Networks {
  NetworkSpec spec;
  ParamStore gen_params;
  ParamStore disc_params;

  Encoder hr_encoder, lr_encoder;
  Decoder sr_decoder, lr_decoder;
  Discriminator d_source, d_feature, d_target;

  Networks(const NetworkSpec& s, std::uint64_t seed)
      : spec(s), gen_params(derive_seed(seed, "generator")), disc_params(derive_seed(seed, "discriminator")) {
    spec.validate();
    hr_encoder = Encoder::make(gen_params, "hr_encoder", spec, {spec.upscale[0], spec.upscale[1], spec.upscale[2]});
    lr_encoder = Encoder::make(gen_params, "lr_encoder", spec, {1, 1, 1});
    sr_decoder = Decoder::make(gen_params, "sr_decoder", spec, true);
    lr_decoder = Decoder::make(gen_params, "lr_decoder", spec, false);
    d_source = Discriminator::make(disc_params, "d_source", spec, 1);
    d_feature = Discriminator::make(disc_params, "d_feature", spec, spec.base_channels);
    d_target = Discriminator::make(disc_params, "d_target", spec, 1);
  }

  Variable lr_encode(const Variable& x) const {
    require_image_batch(x, "lr_encode");
    return lr_encoder(x);
  }

  Variable hr_encode(const Variable& y) const {
    require_image_batch(y, "hr_encode");
    for (int a = 0; a < 3; ++a)
      if (y.value().dim(2 + a) % spec.upscale[static_cast<std::size_t>(a)] != 0)
        throw config_error("hr_encode: axis " + std::to_string(a) + " length " +
                           std::to_string(y.value().dim(2 + a)) + " not divisible by factor " +
                           std::to_string(spec.upscale[static_cast<std::size_t>(a)]));
    return hr_encoder(y);
  }

  Variable sr_decode(const Variable& f) const {
    require_feature_batch(f, "sr_decode");
    return sr_decoder(f);
  }

  Variable lr_decode(const Variable& f) const {
    require_feature_batch(f, "lr_decode");
    return lr_decoder(f);
  }

  Variable discriminate(DiscKind kind, const Variable& x) const {
    switch (kind) {
      case DiscKind::source: return d_source(x);
      case DiscKind::feature: return d_feature(x);
      default: return d_target(x);
    }
  }

  Index parameter_count() const { return gen_params.parameter_count() + disc_params.parameter_count(); }

  std::uint64_t parameter_hash() const {
    std::uint64_t h = gen_params.content_hash();
    return fnv1a64(&h, sizeof(h), disc_params.content_hash());
  }

 private:
  void require_image_batch(const Variable& x, const char* what) const {
    if (x.value().rank() != 5 || x.value().dim(1) != 1)
      throw config_error(std::string(what) + " expects [N, 1, Z, Y, X], got " + shape_str(x.value().shape()));
  }
  void require_feature_batch(const Variable& f, const char* what) const {
    if (f.value().rank() != 5 || f.value().dim(1) != spec.base_channels)
      throw config_error(std::string(what) + " expects [N, " + std::to_string(spec.base_channels) +
                         ", Z, Y, X], got " + shape_str(f.value().shape()));
  }
};

}  // namespace srcl
