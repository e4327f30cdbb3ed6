#pragma once

#include "jlf/image.hpp"

namespace jlf {

/// Separable Gaussian blur, sigma in voxels per axis, border replication.
/// Kernel radius is ceil(3 sigma); sigma <= 0 leaves that axis untouched.
Volume gaussian_smooth(const Volume& in, const Vec3& sigma_voxels);

inline Volume gaussian_smooth(const Volume& in, double sigma_voxels) {
  return gaussian_smooth(in, Vec3::Constant(sigma_voxels));
}

/// Laplacian of Gaussian in voxel units (7-point stencil on the blurred image).
Volume laplacian_of_gaussian(const Volume& in, double sigma_voxels);

/// Keeps every second voxel along axes with at least `min_dim` voxels;
/// spacing doubles along decimated axes, origin is unchanged.
Volume decimate(const Volume& in, int min_dim = 8);

/// One pyramid step: Gaussian blur with sigma = 0.7 * 2 voxels then decimation.
Volume pyramid_down(const Volume& in);

}  // namespace jlf
