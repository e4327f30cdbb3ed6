#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>

#include "jlf/image.hpp"
#include "jlf/parallel.hpp"
#include "jlf/transform.hpp"

namespace jlf {

namespace detail {

// Continuous index components within 1e-7 of an integer are snapped to it so
// that lattice-aligned samples reproduce stored values exactly.
inline double snap(double t) {
  const double r = std::nearbyint(t);
  return std::abs(t - r) < 1e-7 ? r : t;
}

struct LinearCell {
  int base[3];
  double frac[3];
};

inline bool linear_cell(const Grid& g, const Vec3& world, LinearCell& cell) {
  const Vec3 t = g.continuous_index(world);
  for (int a = 0; a < 3; ++a) {
    const double s = snap(t[a]);
    if (!(s >= 0.0) || s > g.dims[a] - 1) return false;
    if (g.dims[a] == 1) {
      cell.base[a] = 0;
      cell.frac[a] = 0.0;
      continue;
    }
    int b = static_cast<int>(std::floor(s));
    if (b > g.dims[a] - 2) b = g.dims[a] - 2;
    cell.base[a] = b;
    cell.frac[a] = s - b;
  }
  return true;
}

}  // namespace detail

/// Trilinear sample at a world point; nullopt outside the voxel-centre hull.
template <typename T>
std::optional<double> sample_linear(const Image<T>& img, const Vec3& world) {
  detail::LinearCell c;
  const Grid& g = img.grid();
  if (!detail::linear_cell(g, world, c)) return std::nullopt;
  const int i1 = std::min(c.base[0] + 1, g.dims[0] - 1);
  const int j1 = std::min(c.base[1] + 1, g.dims[1] - 1);
  const int k1 = std::min(c.base[2] + 1, g.dims[2] - 1);
  const double fx = c.frac[0], fy = c.frac[1], fz = c.frac[2];
  auto v = [&](int i, int j, int k) { return static_cast<double>(img(i, j, k)); };
  const double c00 = (1 - fx) * v(c.base[0], c.base[1], c.base[2]) + fx * v(i1, c.base[1], c.base[2]);
  const double c10 = (1 - fx) * v(c.base[0], j1, c.base[2]) + fx * v(i1, j1, c.base[2]);
  const double c01 = (1 - fx) * v(c.base[0], c.base[1], k1) + fx * v(i1, c.base[1], k1);
  const double c11 = (1 - fx) * v(c.base[0], j1, k1) + fx * v(i1, j1, k1);
  const double c0 = (1 - fy) * c00 + fy * c10;
  const double c1 = (1 - fy) * c01 + fy * c11;
  return (1 - fz) * c0 + fz * c1;
}

/// Trilinear sample plus its exact (cell-wise) world-space gradient.
template <typename T>
bool sample_linear_gradient(const Image<T>& img, const Vec3& world, double& value, Vec3& gradient) {
  detail::LinearCell c;
  const Grid& g = img.grid();
  if (!detail::linear_cell(g, world, c)) return false;
  const int i0 = c.base[0], j0 = c.base[1], k0 = c.base[2];
  const int i1 = std::min(i0 + 1, g.dims[0] - 1);
  const int j1 = std::min(j0 + 1, g.dims[1] - 1);
  const int k1 = std::min(k0 + 1, g.dims[2] - 1);
  const double fx = c.frac[0], fy = c.frac[1], fz = c.frac[2];
  auto v = [&](int i, int j, int k) { return static_cast<double>(img(i, j, k)); };
  const double v000 = v(i0, j0, k0), v100 = v(i1, j0, k0), v010 = v(i0, j1, k0), v110 = v(i1, j1, k0);
  const double v001 = v(i0, j0, k1), v101 = v(i1, j0, k1), v011 = v(i0, j1, k1), v111 = v(i1, j1, k1);
  const double c00 = (1 - fx) * v000 + fx * v100, c10 = (1 - fx) * v010 + fx * v110;
  const double c01 = (1 - fx) * v001 + fx * v101, c11 = (1 - fx) * v011 + fx * v111;
  const double c0 = (1 - fy) * c00 + fy * c10, c1 = (1 - fy) * c01 + fy * c11;
  value = (1 - fz) * c0 + fz * c1;
  const double dx0 = (1 - fy) * (v100 - v000) + fy * (v110 - v010);
  const double dx1 = (1 - fy) * (v101 - v001) + fy * (v111 - v011);
  gradient[0] = g.dims[0] > 1 ? ((1 - fz) * dx0 + fz * dx1) / g.spacing[0] : 0.0;
  gradient[1] = g.dims[1] > 1 ? ((1 - fz) * (c10 - c00) + fz * (c11 - c01)) / g.spacing[1] : 0.0;
  gradient[2] = g.dims[2] > 1 ? (c1 - c0) / g.spacing[2] : 0.0;
  return true;
}

/// Trilinear sample with border extension: a point outside the voxel-centre
/// hull takes the value of the nearest hull point, and the gradient along a
/// clamped axis is zero.
template <typename T>
double sample_linear_clamped(const Image<T>& img, const Vec3& world, Vec3* gradient = nullptr) {
  const Grid& g = img.grid();
  const Vec3 t = g.continuous_index(world);
  int base[3];
  double frac[3];
  bool clamped[3];
  for (int a = 0; a < 3; ++a) {
    const double hi = g.dims[a] - 1;
    const double s = !(t[a] >= 0.0) ? 0.0 : std::min(t[a], hi);
    clamped[a] = s != t[a];
    base[a] = g.dims[a] == 1 ? 0 : std::min(static_cast<int>(std::floor(s)), g.dims[a] - 2);
    frac[a] = g.dims[a] == 1 ? 0.0 : s - base[a];
  }
  const int i0 = base[0], j0 = base[1], k0 = base[2];
  const int i1 = std::min(i0 + 1, g.dims[0] - 1);
  const int j1 = std::min(j0 + 1, g.dims[1] - 1);
  const int k1 = std::min(k0 + 1, g.dims[2] - 1);
  const double fx = frac[0], fy = frac[1], fz = frac[2];
  auto v = [&](int i, int j, int k) { return static_cast<double>(img(i, j, k)); };
  const double v000 = v(i0, j0, k0), v100 = v(i1, j0, k0), v010 = v(i0, j1, k0), v110 = v(i1, j1, k0);
  const double v001 = v(i0, j0, k1), v101 = v(i1, j0, k1), v011 = v(i0, j1, k1), v111 = v(i1, j1, k1);
  const double c00 = (1 - fx) * v000 + fx * v100, c10 = (1 - fx) * v010 + fx * v110;
  const double c01 = (1 - fx) * v001 + fx * v101, c11 = (1 - fx) * v011 + fx * v111;
  const double c0 = (1 - fy) * c00 + fy * c10, c1 = (1 - fy) * c01 + fy * c11;
  if (gradient) {
    const double dx0 = (1 - fy) * (v100 - v000) + fy * (v110 - v010);
    const double dx1 = (1 - fy) * (v101 - v001) + fy * (v111 - v011);
    Vec3& d = *gradient;
    d[0] = g.dims[0] > 1 && !clamped[0] ? ((1 - fz) * dx0 + fz * dx1) / g.spacing[0] : 0.0;
    d[1] = g.dims[1] > 1 && !clamped[1] ? ((1 - fz) * (c10 - c00) + fz * (c11 - c01)) / g.spacing[1] : 0.0;
    d[2] = g.dims[2] > 1 && !clamped[2] ? (c1 - c0) / g.spacing[2] : 0.0;
  }
  return (1 - fz) * c0 + fz * c1;
}

/// Nearest-neighbour lookup; nullopt outside the half-voxel-padded lattice.
template <typename T>
std::optional<T> sample_nearest(const Image<T>& img, const Vec3& world) {
  const Grid& g = img.grid();
  const Vec3 t = g.continuous_index(world);
  int idx[3];
  for (int a = 0; a < 3; ++a) {
    const double r = std::floor(detail::snap(t[a]) + 0.5);
    if (r < 0 || r > g.dims[a] - 1) return std::nullopt;
    idx[a] = static_cast<int>(r);
  }
  return img(idx[0], idx[1], idx[2]);
}

/// Resample `moving` onto `target`: out(x) = moving(transform(x)), trilinear.
/// Out-of-field samples take `padding` (default: minimum of moving).
template <typename Transform>
Volume warp_volume(const Volume& moving, const Transform& transform, const Grid& target,
                   std::optional<float> padding = std::nullopt) {
  target.validate();
  if (!transform.all_finite()) throw std::invalid_argument("warp_volume: non-finite transform");
  const float pad = padding.value_or(min_value(moving));
  Volume out(target, pad);
  parallel_for(0, target.dims[2], [&](int k) {
    for (int j = 0; j < target.dims[1]; ++j)
      for (int i = 0; i < target.dims[0]; ++i) {
        const auto s = sample_linear(moving, transform.apply(target.world(i, j, k)));
        if (s) out(i, j, k) = static_cast<float>(*s);
      }
  });
  return out;
}

/// Nearest-neighbour label resampling; padding label 0, legend passed through.
template <typename Transform>
LabelMap warp_labels(const LabelMap& moving, const Transform& transform, const Grid& target) {
  target.validate();
  if (!transform.all_finite()) throw std::invalid_argument("warp_labels: non-finite transform");
  LabelMap out(target, moving.legend(), 0);
  parallel_for(0, target.dims[2], [&](int k) {
    for (int j = 0; j < target.dims[1]; ++j)
      for (int i = 0; i < target.dims[0]; ++i) {
        const auto s = sample_nearest(static_cast<const Image<Label>&>(moving),
                                      transform.apply(target.world(i, j, k)));
        if (s) out(i, j, k) = *s;
      }
  });
  return out;
}

}  // namespace jlf
