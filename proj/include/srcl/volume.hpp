#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srcl/tensor.hpp"

namespace srcl {

using json = nlohmann::ordered_json;

/// Real-valued 3D scalar field; the unit of all image data.
struct Volume3D {
  Tensor data;  // rank 3, (nz, ny, nx)
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::optional<std::pair<double, double>> intensity_range;

  Volume3D() = default;
  explicit Volume3D(Tensor t) : data(std::move(t)) {
    if (data.rank() != 3) throw config_error("Volume3D requires a rank-3 tensor, got " + shape_str(data.shape()));
  }

  static Volume3D zeros(Index nz, Index ny, Index nx) {
    return Volume3D(Tensor::zeros({nz, ny, nx}));
  }

  const Shape& shape() const { return data.shape(); }
  Index nz() const { return data.dim(0); }
  Index ny() const { return data.dim(1); }
  Index nx() const { return data.dim(2); }

  std::pair<double, double> measured_range() const { return {data.min(), data.max()}; }
};

namespace detail {

inline void write_file_bytes(const std::filesystem::path& p, const void* bytes, std::size_t n) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw config_error("cannot open for writing: " + p.string());
  f.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(n));
  if (!f) throw config_error("write failed: " + p.string());
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  if (!f) throw config_error("cannot open: " + p.string());
  const auto n = f.tellg();
  f.seekg(0);
  std::vector<char> buf(static_cast<std::size_t>(n));
  f.read(buf.data(), n);
  if (!f) throw config_error("read failed: " + p.string());
  return buf;
}

}  // namespace detail

/// Volume file pair: <stem>.vol holds raw little-endian float32 in raster
/// order, <stem>.volmeta a JSON header with shape/spacing/intensity range.
inline void write_volume(const std::filesystem::path& vol_path, const Volume3D& v,
                         const std::string& fingerprint = {}) {
  std::vector<float> raw(static_cast<std::size_t>(v.data.numel()));
  for (Index i = 0; i < v.data.numel(); ++i) raw[static_cast<std::size_t>(i)] = static_cast<float>(v.data[i]);
  detail::write_file_bytes(vol_path, raw.data(), raw.size() * sizeof(float));

  json meta;
  meta["shape"] = {v.nz(), v.ny(), v.nx()};
  meta["spacing"] = {v.spacing[0], v.spacing[1], v.spacing[2]};
  const auto range = v.intensity_range.value_or(v.measured_range());
  meta["intensity_range"] = {range.first, range.second};
  if (!fingerprint.empty()) meta["config_fingerprint"] = fingerprint;
  std::filesystem::path meta_path = vol_path;
  meta_path.replace_extension(".volmeta");
  std::ofstream f(meta_path, std::ios::trunc);
  if (!f) throw config_error("cannot open for writing: " + meta_path.string());
  f << meta.dump(2) << "\n";
}

inline Volume3D read_volume(const std::filesystem::path& vol_path) {
  std::filesystem::path meta_path = vol_path;
  meta_path.replace_extension(".volmeta");
  std::ifstream mf(meta_path);
  if (!mf) throw config_error("missing volume header: " + meta_path.string());
  json meta = json::parse(mf);
  const auto shape_v = meta.at("shape").get<std::vector<Index>>();
  if (shape_v.size() != 3) throw config_error("volume header shape must have 3 entries: " + meta_path.string());

  const auto raw = detail::read_file_bytes(vol_path);
  const Index n = numel_of({shape_v[0], shape_v[1], shape_v[2]});
  if (raw.size() != static_cast<std::size_t>(n) * sizeof(float))
    throw config_error("volume payload size mismatch: " + vol_path.string());

  Volume3D v(Tensor::zeros({shape_v[0], shape_v[1], shape_v[2]}));
  const auto* f32 = reinterpret_cast<const float*>(raw.data());
  for (Index i = 0; i < n; ++i) v.data[i] = static_cast<double>(f32[i]);
  if (meta.contains("spacing")) {
    auto sp = meta["spacing"].get<std::vector<double>>();
    if (sp.size() == 3) v.spacing = {sp[0], sp[1], sp[2]};
  }
  if (meta.contains("intensity_range")) {
    auto ir = meta["intensity_range"].get<std::vector<double>>();
    if (ir.size() == 2) v.intensity_range = {ir[0], ir[1]};
  }
  return v;
}

/// Center-aligned trilinear interpolation to shape * factors; the
/// reference baseline against which learned SR is reported.
inline Volume3D trilinear_upsample(const Volume3D& lr, const std::array<Index, 3>& factors) {
  const Index oz = lr.nz() * factors[0], oy = lr.ny() * factors[1], ox = lr.nx() * factors[2];
  Volume3D out = Volume3D::zeros(oz, oy, ox);

  auto src = [&](Index axis_len, Index out_len, Index o) {
    // map output voxel center to input coordinates
    const double c = (static_cast<double>(o) + 0.5) * static_cast<double>(axis_len) /
                         static_cast<double>(out_len) - 0.5;
    const double lo = std::clamp(c, 0.0, static_cast<double>(axis_len - 1));
    Index i0 = static_cast<Index>(std::floor(lo));
    i0 = std::min(i0, axis_len - 1);
    const Index i1 = std::min(i0 + 1, axis_len - 1);
    const double w = lo - static_cast<double>(i0);
    return std::tuple<Index, Index, double>(i0, i1, w);
  };

  for (Index z = 0; z < oz; ++z) {
    auto [z0, z1, wz] = src(lr.nz(), oz, z);
    for (Index y = 0; y < oy; ++y) {
      auto [y0, y1, wy] = src(lr.ny(), oy, y);
      for (Index x = 0; x < ox; ++x) {
        auto [x0, x1, wx] = src(lr.nx(), ox, x);
        const double c00 = lr.data.at(z0, y0, x0) * (1 - wx) + lr.data.at(z0, y0, x1) * wx;
        const double c01 = lr.data.at(z0, y1, x0) * (1 - wx) + lr.data.at(z0, y1, x1) * wx;
        const double c10 = lr.data.at(z1, y0, x0) * (1 - wx) + lr.data.at(z1, y0, x1) * wx;
        const double c11 = lr.data.at(z1, y1, x0) * (1 - wx) + lr.data.at(z1, y1, x1) * wx;
        const double c0 = c00 * (1 - wy) + c01 * wy;
        const double c1 = c10 * (1 - wy) + c11 * wy;
        out.data.at(z, y, x) = c0 * (1 - wz) + c1 * wz;
      }
    }
  }
  out.spacing = {lr.spacing[0] / static_cast<double>(factors[0]),
                 lr.spacing[1] / static_cast<double>(factors[1]),
                 lr.spacing[2] / static_cast<double>(factors[2])};
  return out;
}

}  // namespace srcl
