#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "srcl/rng.hpp"
#include "srcl/tensor.hpp"
#include "srcl/volume.hpp"

namespace srcl {

/// Synthetic multi-ellipsoid volume standing in for a T1w acquisition:
/// nested tissue-like intensity layers, smooth internal texture, softened
/// boundaries. Deterministic per seed, intensities in [0, 1].
struct PhantomSpec {
  Shape shape{32, 32, 32};
  Index n_ellipsoids = 6;
  Index intensity_layers = 3;
  double smooth_sigma = 0.8;
  std::uint64_t seed = 0;

  void validate() const {
    if (shape.size() != 3) throw config_error("phantom shape must be rank 3");
    for (Index d : shape)
      if (d < 16) throw config_error("phantom shape must be >= 16 per axis, got " + shape_str(shape));
    if (n_ellipsoids < 0 || intensity_layers < 1) throw config_error("degenerate phantom spec");
  }
};

namespace detail {

/// Normalized truncated-Gaussian blur along every axis; kernel mass is
/// renormalized at the borders so constants stay constant.
inline void gaussian_blur3(Tensor& t, double sigma) {
  if (sigma <= 0.0) return;
  const Index radius = static_cast<Index>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  for (Index i = -radius; i <= radius; ++i)
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (static_cast<double>(i) / sigma) * (static_cast<double>(i) / sigma));

  const Shape& s = t.shape();
  Tensor tmp(t.shape());
  for (int axis = 0; axis < 3; ++axis) {
    const Index len = s[axis];
    Index outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= s[a];
    for (int a = axis + 1; a < 3; ++a) inner *= s[a];
    for (Index o = 0; o < outer; ++o)
      for (Index i = 0; i < inner; ++i) {
        const Index base = o * len * inner + i;
        for (Index j = 0; j < len; ++j) {
          double acc = 0.0, wsum = 0.0;
          for (Index d = -radius; d <= radius; ++d) {
            const Index jj = j + d;
            if (jj < 0 || jj >= len) continue;
            const double w = k[static_cast<std::size_t>(d + radius)];
            acc += w * t[base + jj * inner];
            wsum += w;
          }
          tmp[base + j * inner] = acc / wsum;
        }
      }
    t = tmp;
  }
}

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> semi_axes;
  std::array<std::array<double, 3>, 3> rot;
  double level;

  bool contains(double z, double y, double x) const {
    const double d[3] = {z - center[0], y - center[1], x - center[2]};
    double q = 0.0;
    for (int r = 0; r < 3; ++r) {
      double proj = rot[r][0] * d[0] + rot[r][1] * d[1] + rot[r][2] * d[2];
      proj /= semi_axes[r];
      q += proj * proj;
    }
    return q <= 1.0;
  }
};

inline std::array<std::array<double, 3>, 3> random_rotation(Rng& rng) {
  // Gram-Schmidt on Gaussian vectors
  std::array<std::array<double, 3>, 3> m;
  for (auto& row : m)
    for (auto& v : row) v = rng.normal();
  auto norm = [](std::array<double, 3>& v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    for (auto& x : v) x /= n;
  };
  norm(m[0]);
  double d = m[1][0] * m[0][0] + m[1][1] * m[0][1] + m[1][2] * m[0][2];
  for (int i = 0; i < 3; ++i) m[1][i] -= d * m[0][i];
  norm(m[1]);
  m[2] = {m[0][1] * m[1][2] - m[0][2] * m[1][1], m[0][2] * m[1][0] - m[0][0] * m[1][2],
          m[0][0] * m[1][1] - m[0][1] * m[1][0]};
  return m;
}

}  // namespace detail

inline Volume3D generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const double background = 0.05;
  Volume3D vol(Tensor::constant(spec.shape, background));
  if (spec.n_ellipsoids == 0) {
    vol.intensity_range = {background, background};
    return vol;
  }

  Rng rng(derive_seed(spec.seed, "phantom"));
  const Index nz = spec.shape[0], ny = spec.shape[1], nx = spec.shape[2];

  std::vector<detail::Ellipsoid> shapes;
  for (Index e = 0; e < spec.n_ellipsoids; ++e) {
    detail::Ellipsoid el;
    el.center = {rng.uniform(0.2, 0.8) * static_cast<double>(nz),
                 rng.uniform(0.2, 0.8) * static_cast<double>(ny),
                 rng.uniform(0.2, 0.8) * static_cast<double>(nx)};
    el.semi_axes = {rng.uniform(0.12, 0.32) * static_cast<double>(nz),
                    rng.uniform(0.12, 0.32) * static_cast<double>(ny),
                    rng.uniform(0.12, 0.32) * static_cast<double>(nx)};
    el.rot = detail::random_rotation(rng);
    const Index layer = static_cast<Index>(e % spec.intensity_layers);
    const double lo = 0.3, hi = 0.9;
    el.level = spec.intensity_layers == 1
                   ? 0.6
                   : lo + (hi - lo) * static_cast<double>(layer) / static_cast<double>(spec.intensity_layers - 1);
    el.level += rng.uniform(-0.05, 0.05);
    shapes.push_back(el);
  }

  // smooth texture field, applied only inside ellipsoids
  Tensor texture(spec.shape);
  for (Index i = 0; i < texture.numel(); ++i) texture[i] = rng.uniform(-1.0, 1.0);
  detail::gaussian_blur3(texture, std::max(1.5, 2.0 * spec.smooth_sigma));
  const double tmax = std::max(1e-12, std::max(std::abs(texture.min()), std::abs(texture.max())));
  texture.array() *= 0.10 / tmax;

  for (Index z = 0; z < nz; ++z)
    for (Index y = 0; y < ny; ++y)
      for (Index x = 0; x < nx; ++x) {
        double v = background;
        bool inside = false;
        for (const auto& el : shapes)
          if (el.contains(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x))) {
            v = el.level;  // later ellipsoids paint over earlier ones
            inside = true;
          }
        if (inside) v += texture.at(z, y, x);
        vol.data.at(z, y, x) = v;
      }

  detail::gaussian_blur3(vol.data, spec.smooth_sigma);
  vol.data.array() = vol.data.array().min(1.0).max(0.0);
  vol.intensity_range = vol.measured_range();
  return vol;
}

}  // namespace srcl
