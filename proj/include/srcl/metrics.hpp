#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srcl/tensor.hpp"
#include "srcl/volume.hpp"

namespace srcl {

inline double psnr(const Volume3D& ref, const Volume3D& test, double data_range) {
  require_same_shape(ref.data, test.data, "psnr");
  if (!(data_range > 0.0)) throw config_error("psnr data_range must be > 0");
  const double mse = (ref.data.array() - test.data.array()).square().mean();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

struct SsimWindow {
  Index size = 11;
  double sigma = 1.5;

  std::vector<double> kernel() const {
    if (size < 1 || size % 2 == 0) throw config_error("SSIM window size must be odd and >= 1");
    std::vector<double> k(static_cast<std::size_t>(size));
    const double c = static_cast<double>(size - 1) / 2.0;
    double s = 0.0;
    for (Index i = 0; i < size; ++i) {
      const double d = static_cast<double>(i) - c;
      k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
      s += k[static_cast<std::size_t>(i)];
    }
    for (auto& v : k) v /= s;
    return k;
  }
};

namespace detail {

/// Valid-mode correlation with a normalized 1D kernel along one axis of a
/// rank-3 grid; the axis shrinks by size-1.
inline Tensor window_pass_axis(const Tensor& in, const std::vector<double>& k, int axis) {
  const Index w = static_cast<Index>(k.size());
  Shape out_shape = in.shape();
  out_shape[axis] -= w - 1;
  if (out_shape[axis] < 1) throw config_error("SSIM window larger than volume along axis " + std::to_string(axis));
  Tensor out(out_shape);
  const Index oz = out_shape[0], oy = out_shape[1], ox = out_shape[2];
  for (Index z = 0; z < oz; ++z)
    for (Index y = 0; y < oy; ++y)
      for (Index x = 0; x < ox; ++x) {
        double acc = 0.0;
        for (Index t = 0; t < w; ++t) {
          const Index zz = z + (axis == 0 ? t : 0);
          const Index yy = y + (axis == 1 ? t : 0);
          const Index xx = x + (axis == 2 ? t : 0);
          acc += k[static_cast<std::size_t>(t)] * in.at(zz, yy, xx);
        }
        out.at(z, y, x) = acc;
      }
  return out;
}

inline Tensor window_filter3(const Tensor& in, const std::vector<double>& k) {
  Tensor t = window_pass_axis(in, k, 0);
  t = window_pass_axis(t, k, 1);
  return window_pass_axis(t, k, 2);
}

inline Tensor mul_elems(const Tensor& a, const Tensor& b) {
  Tensor out(a.shape());
  out.array() = a.array() * b.array();
  return out;
}

}  // namespace detail

/// Mean local SSIM over valid window positions, 3D Gaussian window
/// (default 11 per axis, sigma 1.5), constants C1=(0.01 r)^2, C2=(0.03 r)^2.
/// Local moments follow the classic filtered-moment form without Bessel
/// correction.
inline double ssim(const Volume3D& ref, const Volume3D& test, double data_range,
                   const SsimWindow& window = {}) {
  require_same_shape(ref.data, test.data, "ssim");
  if (!(data_range > 0.0)) throw config_error("ssim data_range must be > 0");
  for (Index i = 0; i < 3; ++i)
    if (ref.shape()[i] < window.size)
      throw config_error("SSIM window " + std::to_string(window.size) + " larger than volume axis " +
                         std::to_string(ref.shape()[i]));
  const auto k = window.kernel();
  const Tensor mu_x = detail::window_filter3(ref.data, k);
  const Tensor mu_y = detail::window_filter3(test.data, k);
  const Tensor xx = detail::window_filter3(detail::mul_elems(ref.data, ref.data), k);
  const Tensor yy = detail::window_filter3(detail::mul_elems(test.data, test.data), k);
  const Tensor xy = detail::window_filter3(detail::mul_elems(ref.data, test.data), k);

  const double c1 = 0.01 * data_range * 0.01 * data_range;
  const double c2 = 0.03 * data_range * 0.03 * data_range;
  double acc = 0.0;
  for (Index i = 0; i < mu_x.numel(); ++i) {
    const double mx = mu_x[i], my = mu_y[i];
    const double vx = xx[i] - mx * mx;
    const double vy = yy[i] - my * my;
    const double cxy = xy[i] - mx * my;
    acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  }
  return acc / static_cast<double>(mu_x.numel());
}

/// Mean structure-and-contrast term (2 cov + C2)/(var_x + var_y + C2).
/// Approaches -1 for test = -ref on zero-mean structure.
inline double ssim_structure(const Volume3D& ref, const Volume3D& test, double data_range,
                             const SsimWindow& window = {}) {
  require_same_shape(ref.data, test.data, "ssim_structure");
  const auto k = window.kernel();
  const Tensor mu_x = detail::window_filter3(ref.data, k);
  const Tensor mu_y = detail::window_filter3(test.data, k);
  const Tensor xx = detail::window_filter3(detail::mul_elems(ref.data, ref.data), k);
  const Tensor yy = detail::window_filter3(detail::mul_elems(test.data, test.data), k);
  const Tensor xy = detail::window_filter3(detail::mul_elems(ref.data, test.data), k);
  const double c2 = 0.03 * data_range * 0.03 * data_range;
  double acc = 0.0;
  for (Index i = 0; i < mu_x.numel(); ++i) {
    const double vx = xx[i] - mu_x[i] * mu_x[i];
    const double vy = yy[i] - mu_y[i] * mu_y[i];
    const double cxy = xy[i] - mu_x[i] * mu_y[i];
    acc += (2.0 * cxy + c2) / (vx + vy + c2);
  }
  return acc / static_cast<double>(mu_x.numel());
}

/// Slice-wise SSIM: 2D windows applied per z-slice, averaged over slices.
inline double ssim_slicewise(const Volume3D& ref, const Volume3D& test, double data_range,
                             const SsimWindow& window = {}) {
  require_same_shape(ref.data, test.data, "ssim_slicewise");
  const Index nz = ref.nz();
  double acc = 0.0;
  for (Index z = 0; z < nz; ++z) {
    Volume3D r1 = Volume3D::zeros(1, ref.ny(), ref.nx());
    Volume3D t1 = Volume3D::zeros(1, ref.ny(), ref.nx());
    for (Index y = 0; y < ref.ny(); ++y)
      for (Index x = 0; x < ref.nx(); ++x) {
        r1.data.at(0, y, x) = ref.data.at(z, y, x);
        t1.data.at(0, y, x) = test.data.at(z, y, x);
      }
    // window degenerates to 1 along z
    SsimWindow wz = window;
    const auto k = wz.kernel();
    const Tensor mu_x = detail::window_pass_axis(detail::window_pass_axis(r1.data, k, 1), k, 2);
    const Tensor mu_y = detail::window_pass_axis(detail::window_pass_axis(t1.data, k, 1), k, 2);
    const Tensor xx = detail::window_pass_axis(detail::window_pass_axis(detail::mul_elems(r1.data, r1.data), k, 1), k, 2);
    const Tensor yy = detail::window_pass_axis(detail::window_pass_axis(detail::mul_elems(t1.data, t1.data), k, 1), k, 2);
    const Tensor xy = detail::window_pass_axis(detail::window_pass_axis(detail::mul_elems(r1.data, t1.data), k, 1), k, 2);
    const double c1 = 0.01 * data_range * 0.01 * data_range;
    const double c2 = 0.03 * data_range * 0.03 * data_range;
    double s = 0.0;
    for (Index i = 0; i < mu_x.numel(); ++i) {
      const double mx = mu_x[i], my = mu_y[i];
      const double vx = xx[i] - mx * mx;
      const double vy = yy[i] - my * my;
      const double cxy = xy[i] - mx * my;
      s += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    acc += s / static_cast<double>(mu_x.numel());
  }
  return acc / static_cast<double>(nz);
}

inline Volume3D error_map(const Volume3D& ref, const Volume3D& test) {
  require_same_shape(ref.data, test.data, "error_map");
  Volume3D out(Tensor::zeros(ref.shape()));
  out.data.array() = (ref.data.array() - test.data.array()).abs();
  out.spacing = ref.spacing;
  return out;
}

// ---------------------------------------------------------------------------

/// Stable formatting for every numeric value that lands in CSV/JSON output;
/// round-trips doubles exactly and renders infinities as "inf".
inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct VolumeMetrics {
  std::string id;
  std::string kind;  // "model" or "trilinear"
  double psnr_db = 0.0;
  double ssim3d = 0.0;
  double ssim_slice = 0.0;
};

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
};

inline Aggregate aggregate_of(const std::vector<double>& xs) {
  Aggregate a;
  if (xs.empty()) return a;
  double s = 0.0;
  for (double x : xs) s += x;
  a.mean = s / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double q = 0.0;
    for (double x : xs) q += (x - a.mean) * (x - a.mean);
    a.stddev = std::sqrt(q / static_cast<double>(xs.size() - 1));
  }
  return a;
}

/// Per-volume and aggregate quality records for one evaluation, plus the
/// bookkeeping that makes a run auditable.
struct MetricsReport {
  std::string config_fingerprint;
  std::string checkpoint_hash;
  Index parameter_count = 0;
  std::vector<VolumeMetrics> rows;

  std::vector<double> values(const std::string& kind, double VolumeMetrics::*field) const {
    std::vector<double> out;
    for (const auto& r : rows)
      if (r.kind == kind) out.push_back(r.*field);
    return out;
  }

  json to_json() const {
    json j;
    j["config_fingerprint"] = config_fingerprint;
    if (!checkpoint_hash.empty()) j["checkpoint_hash"] = checkpoint_hash;
    j["parameter_count"] = parameter_count;
    j["volumes"] = json::array();
    for (const auto& r : rows) {
      json row;
      row["id"] = r.id;
      row["kind"] = r.kind;
      row["psnr"] = format_double(r.psnr_db);
      row["ssim"] = format_double(r.ssim3d);
      row["ssim_slice"] = format_double(r.ssim_slice);
      j["volumes"].push_back(row);
    }
    json agg;
    for (const std::string kind : {"model", "trilinear"}) {
      if (values(kind, &VolumeMetrics::psnr_db).empty()) continue;
      const auto p = aggregate_of(values(kind, &VolumeMetrics::psnr_db));
      const auto s = aggregate_of(values(kind, &VolumeMetrics::ssim3d));
      agg[kind] = {{"psnr_mean", format_double(p.mean)},
                   {"psnr_std", format_double(p.stddev)},
                   {"ssim_mean", format_double(s.mean)},
                   {"ssim_std", format_double(s.stddev)}};
    }
    j["aggregate"] = agg;
    return j;
  }

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw config_error("cannot open for writing: " + path.string());
    f << "# config_fingerprint=" << config_fingerprint << "\n";
    f << "kind,id,psnr,ssim,ssim_slice\n";
    for (const auto& r : rows)
      f << r.kind << "," << r.id << "," << format_double(r.psnr_db) << ","
        << format_double(r.ssim3d) << "," << format_double(r.ssim_slice) << "\n";
  }

  void write_summary_csv(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw config_error("cannot open for writing: " + path.string());
    f << "# config_fingerprint=" << config_fingerprint << "\n";
    f << "kind,n,psnr_mean,psnr_std,ssim_mean,ssim_std\n";
    for (const std::string kind : {"model", "trilinear"}) {
      const auto ps = values(kind, &VolumeMetrics::psnr_db);
      if (ps.empty()) continue;
      const auto p = aggregate_of(ps);
      const auto s = aggregate_of(values(kind, &VolumeMetrics::ssim3d));
      f << kind << "," << ps.size() << "," << format_double(p.mean) << "," << format_double(p.stddev)
        << "," << format_double(s.mean) << "," << format_double(s.stddev) << "\n";
    }
  }
};

/// 8-bit PGM export of one z-slice, normalized to the volume's range.
inline void write_slice_pgm(const std::filesystem::path& path, const Volume3D& v, Index z,
                            const std::string& fingerprint = {}) {
  if (z < 0 || z >= v.nz()) throw config_error("slice index out of range");
  const auto [lo, hi] = v.measured_range();
  const double span = hi > lo ? hi - lo : 1.0;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw config_error("cannot open for writing: " + path.string());
  f << "P5\n";
  if (!fingerprint.empty()) f << "# config_fingerprint=" << fingerprint << "\n";
  f << v.nx() << " " << v.ny() << "\n255\n";
  for (Index y = 0; y < v.ny(); ++y)
    for (Index x = 0; x < v.nx(); ++x) {
      const double t = (v.data.at(z, y, x) - lo) / span;
      f.put(static_cast<char>(static_cast<int>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0))));
    }
}

}  // namespace srcl
