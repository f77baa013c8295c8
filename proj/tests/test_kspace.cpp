#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "srcl/kspace.hpp"
#include "srcl/rng.hpp"
#include "srcl/volume.hpp"

using namespace srcl;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Independent O(n^2)-per-axis DFT oracle with the same retained-block and
// edge-folding convention, written directly from the definitions.
using CGrid = std::vector<std::complex<double>>;

CGrid dft3(const CGrid& in, const std::array<Index, 3>& dims, bool inverse) {
  CGrid cur = in;
  for (int axis = 0; axis < 3; ++axis) {
    const Index n = dims[static_cast<std::size_t>(axis)];
    CGrid next(cur.size());
    const Index nz = dims[0], ny = dims[1], nx = dims[2];
    for (Index z = 0; z < nz; ++z)
      for (Index y = 0; y < ny; ++y)
        for (Index x = 0; x < nx; ++x) {
          std::complex<double> acc(0, 0);
          const Index pos = axis == 0 ? z : axis == 1 ? y : x;
          for (Index t = 0; t < n; ++t) {
            const Index zz = axis == 0 ? t : z, yy = axis == 1 ? t : y, xx = axis == 2 ? t : x;
            const double ang = 2.0 * kPi * static_cast<double>(pos) * static_cast<double>(t) / static_cast<double>(n);
            const std::complex<double> w(std::cos(ang), inverse ? std::sin(ang) : -std::sin(ang));
            acc += cur[static_cast<std::size_t>((zz * ny + yy) * nx + xx)] * w;
          }
          if (inverse) acc /= static_cast<double>(n);
          next[static_cast<std::size_t>((z * ny + y) * nx + x)] = acc;
        }
    cur = next;
  }
  return cur;
}

Index signed_freq(Index k, Index n) { return k < (n + 1) / 2 ? k : k - n; }

Volume3D oracle_truncate(const Volume3D& hr, const ScaleFactor& f) {
  const std::array<Index, 3> in{hr.nz(), hr.ny(), hr.nx()};
  const std::array<Index, 3> out{hr.nz() / f[0], hr.ny() / f[1], hr.nx() / f[2]};
  CGrid grid(static_cast<std::size_t>(hr.data.numel()));
  for (Index i = 0; i < hr.data.numel(); ++i) grid[static_cast<std::size_t>(i)] = hr.data[i];
  CGrid spec = dft3(grid, in, false);

  auto fetch = [&](Index fz, Index fy, Index fx) {
    const Index bz = fz >= 0 ? fz : fz + in[0];
    const Index by = fy >= 0 ? fy : fy + in[1];
    const Index bx = fx >= 0 ? fx : fx + in[2];
    return spec[static_cast<std::size_t>((bz * in[1] + by) * in[2] + bx)];
  };

  CGrid reduced(static_cast<std::size_t>(out[0] * out[1] * out[2]));
  for (Index kz = 0; kz < out[0]; ++kz)
    for (Index ky = 0; ky < out[1]; ++ky)
      for (Index kx = 0; kx < out[2]; ++kx) {
        const Index fz = signed_freq(kz, out[0]);
        const Index fy = signed_freq(ky, out[1]);
        const Index fx = signed_freq(kx, out[2]);
        const bool ez = out[0] % 2 == 0 && fz == -out[0] / 2 && out[0] < in[0];
        const bool ey = out[1] % 2 == 0 && fy == -out[1] / 2 && out[1] < in[1];
        const bool ex = out[2] % 2 == 0 && fx == -out[2] / 2 && out[2] < in[2];
        std::complex<double> acc(0, 0);
        for (int az = 0; az < (ez ? 2 : 1); ++az)
          for (int ay = 0; ay < (ey ? 2 : 1); ++ay)
            for (int ax = 0; ax < (ex ? 2 : 1); ++ax) {
              double w = (ez ? 0.5 : 1.0) * (ey ? 0.5 : 1.0) * (ex ? 0.5 : 1.0);
              acc += w * fetch(az ? -fz : fz, ay ? -fy : fy, ax ? -fx : fx);
            }
        reduced[static_cast<std::size_t>((kz * out[1] + ky) * out[2] + kx)] =
            acc / static_cast<double>(f.product());
      }

  CGrid img = dft3(reduced, out, true);
  Volume3D o(Tensor::zeros({out[0], out[1], out[2]}));
  for (Index i = 0; i < o.data.numel(); ++i) o.data[i] = img[static_cast<std::size_t>(i)].real();
  return o;
}

Volume3D random_volume(Index nz, Index ny, Index nx, Rng& rng) {
  Volume3D v = Volume3D::zeros(nz, ny, nx);
  for (Index i = 0; i < v.data.numel(); ++i) v.data[i] = rng.uniform(-1.0, 1.0);
  return v;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  return (a.array() - b.array()).abs().maxCoeff();
}

}  // namespace

TEST_CASE("constant volumes stay constant at the reduced size") {
  Volume3D c = Volume3D::zeros(8, 8, 8);
  c.data.array().setConstant(0.37);
  const Volume3D out = kspace_truncate(c, ScaleFactor(2, 2, 2));
  CHECK(out.shape() == Shape{4, 4, 4});
  CHECK(max_abs_diff(out.data, Tensor::constant({4, 4, 4}, 0.37)) < 1e-12);
}

TEST_CASE("in-band cosine decimates to the expected samples") {
  Volume3D v = Volume3D::zeros(8, 8, 8);
  for (Index z = 0; z < 8; ++z)
    for (Index y = 0; y < 8; ++y)
      for (Index x = 0; x < 8; ++x) v.data.at(z, y, x) = std::cos(2.0 * kPi * static_cast<double>(x) / 8.0);
  const Volume3D out = kspace_truncate(v, ScaleFactor(2, 2, 2));
  const double expected[4] = {1.0, 0.0, -1.0, 0.0};
  for (Index z = 0; z < 4; ++z)
    for (Index y = 0; y < 4; ++y)
      for (Index x = 0; x < 4; ++x)
        CHECK(out.data.at(z, y, x) == doctest::Approx(expected[x]).epsilon(1e-9));
}

TEST_CASE("linearity of the truncation operator") {
  Rng rng(11);
  const Volume3D a = random_volume(8, 8, 8, rng);
  const Volume3D b = random_volume(8, 8, 8, rng);
  Volume3D combo = Volume3D::zeros(8, 8, 8);
  combo.data.array() = 2.5 * a.data.array() - 0.75 * b.data.array();
  const ScaleFactor f(2, 2, 2);
  const Volume3D lhs = kspace_truncate(combo, f);
  const Volume3D ta = kspace_truncate(a, f), tb = kspace_truncate(b, f);
  Tensor rhs(lhs.shape());
  rhs.array() = 2.5 * ta.data.array() - 0.75 * tb.data.array();
  CHECK(max_abs_diff(lhs.data, rhs) < 1e-10);
}

TEST_CASE("agrees with the direct DFT oracle on random volumes") {
  Rng rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    const Index nz = 8 + 4 * rng.uniform_int(0, 2);  // 8, 12, 16
    const Index ny = 8 + 4 * rng.uniform_int(0, 2);
    const Index nx = 8 + 4 * rng.uniform_int(0, 2);
    const Volume3D v = random_volume(nz, ny, nx, rng);
    SUBCASE("") {}
    const ScaleFactor f(rng.uniform_int(0, 1) ? 2 : 1, 2, 2);
    const Volume3D got = kspace_truncate(v, f);
    const Volume3D want = oracle_truncate(v, f);
    CHECK(max_abs_diff(got.data, want.data) < 1e-9);
    // DC preservation
    CHECK(got.data.mean() == doctest::Approx(v.data.mean()).epsilon(1e-9));
  }
}

TEST_CASE("shape contract and divisibility errors name the axis") {
  Rng rng(5);
  const Volume3D v = random_volume(8, 12, 16, rng);
  const Volume3D out = kspace_truncate(v, ScaleFactor(2, 2, 2));
  CHECK(out.shape() == Shape{4, 6, 8});

  CHECK_THROWS_AS(kspace_truncate(v, ScaleFactor(3, 2, 2)), config_error);
  try {
    kspace_truncate(v, ScaleFactor(2, 5, 2));
  } catch (const config_error& e) {
    CHECK(std::string(e.what()).find("axis y") != std::string::npos);
  }
  CHECK_THROWS_AS(kspace_truncate(Volume3D::zeros(2, 8, 8), ScaleFactor(1, 2, 2)), config_error);
}

TEST_CASE("lowpass keeps constants and kills out-of-band cosines") {
  Volume3D c = Volume3D::zeros(8, 8, 8);
  c.data.array().setConstant(1.25);
  const Volume3D lp = lowpass_equivalent(c, ScaleFactor(2, 2, 2));
  CHECK(max_abs_diff(lp.data, c.data) < 1e-12);

  Volume3D hi = Volume3D::zeros(8, 8, 8);
  for (Index z = 0; z < 8; ++z)
    for (Index y = 0; y < 8; ++y)
      for (Index x = 0; x < 8; ++x) hi.data.at(z, y, x) = std::cos(2.0 * kPi * 3.0 * static_cast<double>(x) / 8.0);
  const Volume3D killed = lowpass_equivalent(hi, ScaleFactor(2, 2, 2));
  CHECK(killed.data.array().abs().maxCoeff() < 1e-10);
}

TEST_CASE("truncation equals lowpass followed by decimation") {
  Rng rng(23);
  for (const ScaleFactor f : {ScaleFactor(2, 2, 2), ScaleFactor(1, 2, 2), ScaleFactor(2, 4, 2)}) {
    const Volume3D v = random_volume(8, 8, 8, rng);
    const Volume3D trunc = kspace_truncate(v, f);
    const Volume3D lp = lowpass_equivalent(v, f);
    Volume3D dec = Volume3D::zeros(8 / f[0], 8 / f[1], 8 / f[2]);
    for (Index z = 0; z < dec.nz(); ++z)
      for (Index y = 0; y < dec.ny(); ++y)
        for (Index x = 0; x < dec.nx(); ++x)
          dec.data.at(z, y, x) = lp.data.at(z * f[0], y * f[1], x * f[2]);
    CHECK(max_abs_diff(trunc.data, dec.data) < 1e-9);
  }
}

TEST_CASE("energy contraction on the retained spectrum") {
  // Parseval: mean square of the output (per-voxel band content) cannot
  // exceed that of the input.
  Rng rng(29);
  for (int rep = 0; rep < 5; ++rep) {
    const Volume3D v = random_volume(8, 8, 8, rng);
    const Volume3D lp = lowpass_equivalent(v, ScaleFactor(2, 2, 2));
    CHECK(lp.data.array().square().sum() <= v.data.array().square().sum() * (1.0 + 1e-12));
  }
}
