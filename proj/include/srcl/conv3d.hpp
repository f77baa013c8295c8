#pragma once

#include <Eigen/Core>

#include <array>
#include <vector>

#include "srcl/autodiff.hpp"
#include "srcl/tensor.hpp"

namespace srcl {

struct ConvGeometry {
  Index batch, cin, cout;
  std::array<Index, 3> in{}, out{}, kernel{}, stride{}, pad{};

  Index patch_len() const { return cin * kernel[0] * kernel[1] * kernel[2]; }
  Index out_voxels() const { return out[0] * out[1] * out[2]; }
};

namespace detail {

using ColMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;  // col-major
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline ConvGeometry conv_geometry(const Shape& x_shape, const Shape& w_shape,
                                  const std::array<Index, 3>& stride, const std::array<Index, 3>& pad) {
  if (x_shape.size() != 5) throw config_error("conv3d expects input [N, C, Z, Y, X], got " + shape_str(x_shape));
  if (w_shape.size() != 5) throw config_error("conv3d expects weights [Cout, Cin, kz, ky, kx]");
  if (x_shape[1] != w_shape[1])
    throw config_error("conv3d channel mismatch: input has " + std::to_string(x_shape[1]) +
                       ", weights expect " + std::to_string(w_shape[1]));
  ConvGeometry g;
  g.batch = x_shape[0];
  g.cin = x_shape[1];
  g.cout = w_shape[0];
  g.in = {x_shape[2], x_shape[3], x_shape[4]};
  g.kernel = {w_shape[2], w_shape[3], w_shape[4]};
  g.stride = stride;
  g.pad = pad;
  for (int a = 0; a < 3; ++a) {
    const Index n = g.in[a] + 2 * g.pad[a] - g.kernel[a];
    if (n < 0 || g.stride[a] < 1) throw config_error("conv3d kernel does not fit input along axis " + std::to_string(a));
    g.out[a] = n / g.stride[a] + 1;
  }
  return g;
}

/// Gather the receptive fields of one sample into a patch-major column
/// matrix (patch_len x out_voxels); zero padding outside the input.
inline void im2col(const double* x, const ConvGeometry& g, ColMat& col) {
  col.resize(g.patch_len(), g.out_voxels());
  const Index iz = g.in[0], iy = g.in[1], ix = g.in[2];
  Index colidx = 0;
  for (Index oz = 0; oz < g.out[0]; ++oz) {
    const Index z0 = oz * g.stride[0] - g.pad[0];
    for (Index oy = 0; oy < g.out[1]; ++oy) {
      const Index y0 = oy * g.stride[1] - g.pad[1];
      for (Index ox = 0; ox < g.out[2]; ++ox, ++colidx) {
        const Index x0 = ox * g.stride[2] - g.pad[2];
        double* dst = col.data() + colidx * g.patch_len();
        for (Index c = 0; c < g.cin; ++c) {
          const double* plane = x + c * iz * iy * ix;
          for (Index kz = 0; kz < g.kernel[0]; ++kz) {
            const Index z = z0 + kz;
            for (Index ky = 0; ky < g.kernel[1]; ++ky) {
              const Index y = y0 + ky;
              const bool zy_ok = z >= 0 && z < iz && y >= 0 && y < iy;
              const double* row = plane + (z * iy + y) * ix;
              for (Index kx = 0; kx < g.kernel[2]; ++kx, ++dst) {
                const Index xx = x0 + kx;
                *dst = (zy_ok && xx >= 0 && xx < ix) ? row[xx] : 0.0;
              }
            }
          }
        }
      }
    }
  }
}

/// Scatter-add a column-matrix gradient back onto one input sample.
inline void col2im_add(const ColMat& col, const ConvGeometry& g, double* gx) {
  const Index iz = g.in[0], iy = g.in[1], ix = g.in[2];
  Index colidx = 0;
  for (Index oz = 0; oz < g.out[0]; ++oz) {
    const Index z0 = oz * g.stride[0] - g.pad[0];
    for (Index oy = 0; oy < g.out[1]; ++oy) {
      const Index y0 = oy * g.stride[1] - g.pad[1];
      for (Index ox = 0; ox < g.out[2]; ++ox, ++colidx) {
        const Index x0 = ox * g.stride[2] - g.pad[2];
        const double* src = col.data() + colidx * g.patch_len();
        for (Index c = 0; c < g.cin; ++c) {
          double* plane = gx + c * iz * iy * ix;
          for (Index kz = 0; kz < g.kernel[0]; ++kz) {
            const Index z = z0 + kz;
            for (Index ky = 0; ky < g.kernel[1]; ++ky) {
              const Index y = y0 + ky;
              const bool zy_ok = z >= 0 && z < iz && y >= 0 && y < iy;
              double* row = plane + (z * iy + y) * ix;
              for (Index kx = 0; kx < g.kernel[2]; ++kx, ++src) {
                const Index xx = x0 + kx;
                if (zy_ok && xx >= 0 && xx < ix) row[xx] += *src;
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 3D convolution: x [N, Cin, Z, Y, X], w [Cout, Cin, kz, ky, kx], b [Cout].
/// im2col + GEMM per sample; the batch loop accumulates weight gradients in
/// fixed sample order so repeated runs are bit-identical.
inline Variable conv3d(const Variable& x, const Variable& w, const Variable& b,
                       std::array<Index, 3> stride = {1, 1, 1}, std::array<Index, 3> pad = {1, 1, 1}) {
  using detail::ColMat;
  using detail::RowMat;
  const ConvGeometry g = detail::conv_geometry(x.value().shape(), w.value().shape(), stride, pad);
  if (b.value().numel() != g.cout) throw config_error("conv3d bias size mismatch");

  Tensor out({g.batch, g.cout, g.out[0], g.out[1], g.out[2]});
  const Index s = g.out_voxels();
  const Index in_stride = g.cin * g.in[0] * g.in[1] * g.in[2];
  Eigen::Map<const RowMat> wm(w.value().data(), g.cout, g.patch_len());
  Eigen::Map<const Eigen::VectorXd> bv(b.value().data(), g.cout);

  {
    ColMat col;
    for (Index n = 0; n < g.batch; ++n) {
      detail::im2col(x.value().data() + n * in_stride, g, col);
      Eigen::Map<RowMat> om(out.data() + n * g.cout * s, g.cout, s);
      om.noalias() = wm * col;
      om.colwise() += bv;
    }
  }

  auto xn = x.node(), wn = w.node(), bn = b.node();
  return make_op(std::move(out), {x, w, b}, [xn, wn, bn, g, s, in_stride](Node& self) {
    ColMat col;
    Eigen::Map<const RowMat> wm2(wn->value.data(), g.cout, g.patch_len());
    for (Index n = 0; n < g.batch; ++n) {
      Eigen::Map<const RowMat> gy(self.grad.data() + n * g.cout * s, g.cout, s);
      if (wn->requires_grad || bn->requires_grad) {
        detail::im2col(xn->value.data() + n * in_stride, g, col);
        if (wn->requires_grad) {
          Eigen::Map<RowMat> gw(wn->grad_buffer().data(), g.cout, g.patch_len());
          gw.noalias() += gy * col.transpose();
        }
        if (bn->requires_grad) {
          Eigen::Map<Eigen::VectorXd> gb(bn->grad_buffer().data(), g.cout);
          gb.noalias() += gy.rowwise().sum();
        }
      }
      if (xn->requires_grad) {
        ColMat gcol(g.patch_len(), s);
        gcol.noalias() = wm2.transpose() * gy;
        detail::col2im_add(gcol, g, xn->grad_buffer().data() + n * in_stride);
      }
    }
  });
}

/// Channel-to-space rearrangement: [N, C*fz*fy*fx, Z, Y, X] ->
/// [N, C, Z*fz, Y*fy, X*fx]. Pure permutation.
inline Variable voxel_shuffle(const Variable& x, const std::array<Index, 3>& f) {
  if (x.value().rank() != 5) throw config_error("voxel_shuffle expects rank-5 input");
  const Index n = x.value().dim(0), cin = x.value().dim(1);
  const Index fz = f[0], fy = f[1], fx = f[2], fprod = fz * fy * fx;
  if (cin % fprod != 0) throw config_error("voxel_shuffle channel count not divisible by factor product");
  const Index c = cin / fprod;
  const Index z = x.value().dim(2), y = x.value().dim(3), xx = x.value().dim(4);

  auto dst_index = [=](Index ni, Index ci, Index zi, Index yi, Index xi, Index dz, Index dy, Index dx) {
    const Index oz = zi * fz + dz, oy = yi * fy + dy, ox = xi * fx + dx;
    return (((ni * c + ci) * (z * fz) + oz) * (y * fy) + oy) * (xx * fx) + ox;
  };

  Tensor out({n, c, z * fz, y * fy, xx * fx});
  Index src = 0;
  for (Index ni = 0; ni < n; ++ni)
    for (Index ci = 0; ci < c; ++ci)
      for (Index dz = 0; dz < fz; ++dz)
        for (Index dy = 0; dy < fy; ++dy)
          for (Index dx = 0; dx < fx; ++dx)
            for (Index zi = 0; zi < z; ++zi)
              for (Index yi = 0; yi < y; ++yi)
                for (Index xi = 0; xi < xx; ++xi, ++src)
                  out[dst_index(ni, ci, zi, yi, xi, dz, dy, dx)] = x.value()[src];

  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, dst_index, n, c, fz, fy, fx, z, y, xx](Node& self) {
    Tensor g(xn->value.shape());
    Index src = 0;
    for (Index ni = 0; ni < n; ++ni)
      for (Index ci = 0; ci < c; ++ci)
        for (Index dz = 0; dz < fz; ++dz)
          for (Index dy = 0; dy < fy; ++dy)
            for (Index dx = 0; dx < fx; ++dx)
              for (Index zi = 0; zi < z; ++zi)
                for (Index yi = 0; yi < y; ++yi)
                  for (Index xi = 0; xi < xx; ++xi, ++src)
                    g[src] = self.grad[dst_index(ni, ci, zi, yi, xi, dz, dy, dx)];
    xn->accumulate(g);
  });
}

/// Valid-mode correlation with a fixed normalized 1D kernel along one
/// spatial axis (2, 3 or 4) of a rank-5 tensor. The kernel carries no
/// gradient; input gradient is the adjoint (full) correlation.
inline Variable window_pass(const Variable& x, const std::vector<double>& kernel, int axis) {
  if (x.value().rank() != 5) throw config_error("window_pass expects rank-5 input");
  if (axis < 2 || axis > 4) throw config_error("window_pass axis must be 2, 3 or 4");
  const Index w = static_cast<Index>(kernel.size());
  Shape out_shape = x.value().shape();
  out_shape[axis] -= w - 1;
  if (out_shape[axis] < 1) throw config_error("window_pass kernel larger than input axis");

  const Shape& in_shape = x.value().shape();
  // decompose flat index space around the filtered axis
  Index outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= in_shape[a];
  for (int a = axis + 1; a < 5; ++a) inner *= in_shape[a];
  const Index in_len = in_shape[axis], out_len = out_shape[axis];

  Tensor out(out_shape);
  for (Index o = 0; o < outer; ++o) {
    const double* src = x.value().data() + o * in_len * inner;
    double* dst = out.data() + o * out_len * inner;
    for (Index j = 0; j < out_len; ++j)
      for (Index i = 0; i < inner; ++i) {
        double acc = 0.0;
        for (Index t = 0; t < w; ++t) acc += kernel[static_cast<std::size_t>(t)] * src[(j + t) * inner + i];
        dst[j * inner + i] = acc;
      }
  }

  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, kernel, outer, inner, in_len, out_len, w](Node& self) {
    Tensor g = Tensor::zeros(xn->value.shape());
    for (Index o = 0; o < outer; ++o) {
      const double* gy = self.grad.data() + o * out_len * inner;
      double* gx = g.data() + o * in_len * inner;
      for (Index j = 0; j < out_len; ++j)
        for (Index t = 0; t < w; ++t) {
          const double kv = kernel[static_cast<std::size_t>(t)];
          for (Index i = 0; i < inner; ++i) gx[(j + t) * inner + i] += kv * gy[j * inner + i];
        }
    }
    xn->accumulate(g);
  });
}

/// Differentiable mean SSIM between two [N, C, Z, Y, X] batches with a
/// separable Gaussian window, valid-mode stats; mirrors metrics::ssim.
inline Variable ssim_mean(const Variable& a, const Variable& b, Index window, double sigma,
                          double data_range) {
  require_same_shape(a.value(), b.value(), "ssim_mean");
  std::vector<double> k(static_cast<std::size_t>(window));
  const double c = static_cast<double>(window - 1) / 2.0;
  double s = 0.0;
  for (Index i = 0; i < window; ++i) {
    const double d = static_cast<double>(i) - c;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    s += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= s;

  auto blur = [&k](const Variable& t) {
    return window_pass(window_pass(window_pass(t, k, 2), k, 3), k, 4);
  };

  const double c1 = 0.01 * data_range * 0.01 * data_range;
  const double c2 = 0.03 * data_range * 0.03 * data_range;

  Variable mu_a = blur(a);
  Variable mu_b = blur(b);
  Variable aa = blur(mul(a, a));
  Variable bb = blur(mul(b, b));
  Variable ab = blur(mul(a, b));

  Variable mu_ab = mul(mu_a, mu_b);
  Variable var_a = sub(aa, mul(mu_a, mu_a));
  Variable var_b = sub(bb, mul(mu_b, mu_b));
  Variable cov = sub(ab, mu_ab);

  Variable num = mul(add_scalar(mul_scalar(mu_ab, 2.0), c1), add_scalar(mul_scalar(cov, 2.0), c2));
  Variable den = mul(add_scalar(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), c1),
                     add_scalar(add(var_a, var_b), c2));
  return mean_all(div(num, den));
}

}  // namespace srcl
