#pragma once

#include <unsupported/Eigen/FFT>

#include <array>
#include <complex>
#include <string>
#include <vector>

#include "srcl/tensor.hpp"
#include "srcl/volume.hpp"

namespace srcl {

/// Per-axis integer downsampling factors (fz, fy, fx).
struct ScaleFactor {
  std::array<Index, 3> f{2, 2, 2};

  ScaleFactor() = default;
  ScaleFactor(Index fz, Index fy, Index fx) : f{fz, fy, fx} {}

  Index operator[](std::size_t i) const { return f[i]; }
  Index product() const { return f[0] * f[1] * f[2]; }

  void validate_against(const Shape& shape) const {
    static const char* axis_names[3] = {"z", "y", "x"};
    for (std::size_t i = 0; i < 3; ++i) {
      if (f[i] < 1) throw config_error(std::string("scale factor on axis ") + axis_names[i] + " must be >= 1");
      if (shape[static_cast<Index>(i)] % f[i] != 0)
        throw config_error(std::string("axis ") + axis_names[i] + " length " +
                           std::to_string(shape[static_cast<Index>(i)]) +
                           " not divisible by factor " + std::to_string(f[i]));
    }
  }
};

namespace detail {

using Cplx = std::complex<double>;

/// In-place FFT along one axis of a raster-order rank-3 complex grid.
inline void fft_axis(std::vector<Cplx>& grid, const std::array<Index, 3>& dims, int axis, bool inverse) {
  const Index n = dims[static_cast<std::size_t>(axis)];
  Eigen::FFT<double> fft;
  std::vector<Cplx> line(static_cast<std::size_t>(n)), spec(static_cast<std::size_t>(n));

  const Index nz = dims[0], ny = dims[1], nx = dims[2];
  Index stride, outer0, outer1, s0, s1;
  if (axis == 0) { stride = ny * nx; outer0 = ny; outer1 = nx; s0 = nx; s1 = 1; }
  else if (axis == 1) { stride = nx; outer0 = nz; outer1 = nx; s0 = ny * nx; s1 = 1; }
  else { stride = 1; outer0 = nz; outer1 = ny; s0 = ny * nx; s1 = nx; }

  for (Index a = 0; a < outer0; ++a) {
    for (Index b = 0; b < outer1; ++b) {
      const Index base = a * s0 + b * s1;
      for (Index k = 0; k < n; ++k) line[static_cast<std::size_t>(k)] = grid[static_cast<std::size_t>(base + k * stride)];
      if (inverse)
        fft.inv(spec, line);  // scaled by 1/n
      else
        fft.fwd(spec, line);
      for (Index k = 0; k < n; ++k) grid[static_cast<std::size_t>(base + k * stride)] = spec[static_cast<std::size_t>(k)];
    }
  }
}

inline void fft3(std::vector<Cplx>& grid, const std::array<Index, 3>& dims, bool inverse) {
  for (int axis = 0; axis < 3; ++axis) fft_axis(grid, dims, axis, inverse);
}

/// Signed frequency of DFT bin k at length n; the Nyquist bin of an even
/// length maps to -n/2 (the negative edge).
inline Index bin_freq(Index k, Index n) { return k < (n + 1) / 2 ? k : k - n; }

/// DFT bin index of signed frequency at length n.
inline Index freq_bin(Index freq, Index n) { return freq >= 0 ? freq : freq + n; }

inline void require_fft_shape(const Shape& s) {
  for (Index i = 0; i < 3; ++i)
    if (s[i] < 4) throw config_error("FFT path requires every axis >= 4, got " + shape_str(s));
}

}  // namespace detail

/// Acquisition-consistent downsampling: forward DFT, retention of the
/// centered low-frequency block, inverse DFT at the reduced size.
///
/// The retained block along an axis of output length m covers signed
/// frequencies -m/2 .. m/2-1. For even m the two edge bins +-m/2 of the
/// input spectrum are folded with half weight into the output Nyquist bin,
/// which keeps the retained spectrum Hermitian and the output real.
/// Normalization preserves per-voxel intensity of band-limited content
/// (constant in, same constant out).
inline Volume3D kspace_truncate(const Volume3D& hr, const ScaleFactor& f) {
  detail::require_fft_shape(hr.shape());
  f.validate_against(hr.shape());
  const std::array<Index, 3> in_dims{hr.nz(), hr.ny(), hr.nx()};
  const std::array<Index, 3> out_dims{hr.nz() / f[0], hr.ny() / f[1], hr.nx() / f[2]};

  std::vector<detail::Cplx> spec(static_cast<std::size_t>(hr.data.numel()));
  for (Index i = 0; i < hr.data.numel(); ++i) spec[static_cast<std::size_t>(i)] = hr.data[i];
  detail::fft3(spec, in_dims, false);

  // Gather the centered block; per-axis weights fold even-length edges.
  const Index onz = out_dims[0], ony = out_dims[1], onx = out_dims[2];
  std::vector<detail::Cplx> out_spec(static_cast<std::size_t>(onz * ony * onx));
  const double norm = 1.0 / static_cast<double>(f.product());

  auto gather_axis = [](Index k_out, Index m, Index n) {
    // returns {freq, paired_freq or sentinel}; pairing only at an even-m edge
    const Index freq = detail::bin_freq(k_out, m);
    const bool edge = (m % 2 == 0) && (freq == -m / 2) && (m < n);
    return std::pair<Index, bool>(freq, edge);
  };

  for (Index kz = 0; kz < onz; ++kz) {
    auto [fz, ez] = gather_axis(kz, onz, in_dims[0]);
    for (Index ky = 0; ky < ony; ++ky) {
      auto [fy, ey] = gather_axis(ky, ony, in_dims[1]);
      for (Index kx = 0; kx < onx; ++kx) {
        auto [fx, ex] = gather_axis(kx, onx, in_dims[2]);
        detail::Cplx acc(0.0, 0.0);
        // sum over the +-edge frequencies on folded axes, half weight each
        for (int az = 0; az < (ez ? 2 : 1); ++az) {
          const Index gz = az == 0 ? fz : -fz;
          for (int ay = 0; ay < (ey ? 2 : 1); ++ay) {
            const Index gy = ay == 0 ? fy : -fy;
            for (int ax = 0; ax < (ex ? 2 : 1); ++ax) {
              const Index gx = ax == 0 ? fx : -fx;
              double w = 1.0;
              if (ez) w *= 0.5;
              if (ey) w *= 0.5;
              if (ex) w *= 0.5;
              const Index idx = (detail::freq_bin(gz, in_dims[0]) * in_dims[1] +
                                 detail::freq_bin(gy, in_dims[1])) * in_dims[2] +
                                detail::freq_bin(gx, in_dims[2]);
              acc += w * spec[static_cast<std::size_t>(idx)];
            }
          }
        }
        out_spec[static_cast<std::size_t>((kz * ony + ky) * onx + kx)] = acc * norm;
      }
    }
  }

  detail::fft3(out_spec, out_dims, true);

  Volume3D out(Tensor::zeros({onz, ony, onx}));
  const double max_abs = std::max(1e-300, std::max(std::abs(hr.data.min()), std::abs(hr.data.max())));
  double max_imag = 0.0;
  for (Index i = 0; i < out.data.numel(); ++i) {
    max_imag = std::max(max_imag, std::abs(out_spec[static_cast<std::size_t>(i)].imag()));
    out.data[i] = out_spec[static_cast<std::size_t>(i)].real();
  }
  if (max_imag > 1e-9 * max_abs)
    throw divergence_error("k-space truncation produced non-negligible imaginary part: " +
                           std::to_string(max_imag));
  out.spacing = {hr.spacing[0] * static_cast<double>(f[0]), hr.spacing[1] * static_cast<double>(f[1]),
                 hr.spacing[2] * static_cast<double>(f[2])};
  return out;
}

/// Same-size ideal low-pass with the identical retained block and edge
/// folding; kspace_truncate equals this followed by per-axis decimation.
inline Volume3D lowpass_equivalent(const Volume3D& hr, const ScaleFactor& f) {
  detail::require_fft_shape(hr.shape());
  f.validate_against(hr.shape());
  const std::array<Index, 3> dims{hr.nz(), hr.ny(), hr.nx()};
  const std::array<Index, 3> block{hr.nz() / f[0], hr.ny() / f[1], hr.nx() / f[2]};

  std::vector<detail::Cplx> spec(static_cast<std::size_t>(hr.data.numel()));
  for (Index i = 0; i < hr.data.numel(); ++i) spec[static_cast<std::size_t>(i)] = hr.data[i];
  detail::fft3(spec, dims, false);

  auto weight_axis = [](Index k, Index n, Index m) {
    const Index freq = detail::bin_freq(k, n);
    if (m == n) return 1.0;  // factor 1: axis untouched
    if (2 * freq >= m || 2 * freq <= -m) {
      if ((m % 2 == 0) && (freq == m / 2 || freq == -m / 2)) return 0.5;
      return 0.0;
    }
    return 1.0;
  };

  for (Index kz = 0; kz < dims[0]; ++kz) {
    const double wz = weight_axis(kz, dims[0], block[0]);
    for (Index ky = 0; ky < dims[1]; ++ky) {
      const double wy = weight_axis(ky, dims[1], block[1]);
      for (Index kx = 0; kx < dims[2]; ++kx) {
        const double wx = weight_axis(kx, dims[2], block[2]);
        spec[static_cast<std::size_t>((kz * dims[1] + ky) * dims[2] + kx)] *= wz * wy * wx;
      }
    }
  }

  detail::fft3(spec, dims, true);
  Volume3D out(Tensor::zeros({dims[0], dims[1], dims[2]}));
  for (Index i = 0; i < out.data.numel(); ++i) out.data[i] = spec[static_cast<std::size_t>(i)].real();
  out.spacing = hr.spacing;
  return out;
}

}  // namespace srcl
