#pragma once

#include <filesystem>

#include "jlf/transform.hpp"

namespace jlf {

/// {"type": "affine", "matrix": [16 numbers, row-major]}
void save_affine(const AffineTransform& transform, const std::filesystem::path& path);
AffineTransform load_affine(const std::filesystem::path& path);

/// Lattice metadata and the affine go to `path`; displacements go to a raw
/// little-endian float32 file next to it (x, y, z per control point, x-fastest).
void save_bspline(const BSplineGrid& grid, const std::filesystem::path& path);
BSplineGrid load_bspline(const std::filesystem::path& path);

}  // namespace jlf
