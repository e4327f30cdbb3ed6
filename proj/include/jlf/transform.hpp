#pragma once

#include <array>
#include <vector>

#include <Eigen/Core>

#include "jlf/image.hpp"

namespace jlf {

using Mat4 = Eigen::Matrix4d;
using Mat3 = Eigen::Matrix3d;

/// Homogeneous 4x4 map from target (fixed) world space into moving world space.
class AffineTransform {
 public:
  AffineTransform() : m_(Mat4::Identity()) {}
  explicit AffineTransform(const Mat4& m);

  static AffineTransform translation(const Vec3& t);
  /// Rotation by `radians` about `axis` through `center`.
  static AffineTransform rotation(const Vec3& center, const Vec3& axis, double radians);

  Vec3 apply(const Vec3& p) const { return m_.topLeftCorner<3, 3>() * p + m_.topRightCorner<3, 1>(); }
  Vec3 operator()(const Vec3& p) const { return apply(p); }

  const Mat4& matrix() const { return m_; }
  Mat3 linear() const { return m_.topLeftCorner<3, 3>(); }
  Vec3 offset() const { return m_.topRightCorner<3, 1>(); }

  AffineTransform inverse() const;

  /// (a * b)(x) = a(b(x)).
  friend AffineTransform operator*(const AffineTransform& a, const AffineTransform& b) {
    return AffineTransform(a.m_ * b.m_);
  }

  bool is_identity() const { return m_ == Mat4::Identity(); }
  bool all_finite() const { return m_.allFinite(); }

 private:
  Mat4 m_;
};

namespace bspline {

/// Uniform cubic B-spline basis pieces for local coordinate u in [0, 1).
inline void basis(double u, double w[4]) {
  const double u2 = u * u, u3 = u2 * u, v = 1.0 - u;
  w[0] = v * v * v / 6.0;
  w[1] = (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0;
  w[2] = (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0;
  w[3] = u3 / 6.0;
}

inline void basis_d1(double u, double w[4]) {
  const double u2 = u * u, v = 1.0 - u;
  w[0] = -0.5 * v * v;
  w[1] = 1.5 * u2 - 2.0 * u;
  w[2] = -1.5 * u2 + u + 0.5;
  w[3] = 0.5 * u2;
}

inline void basis_d2(double u, double w[4]) {
  w[0] = 1.0 - u;
  w[1] = 3.0 * u - 2.0;
  w[2] = -3.0 * u + 1.0;
  w[3] = u;
}

/// Centred cubic B-spline kernel (support [-2, 2]) and its derivative.
inline double kernel(double x) {
  const double a = x < 0 ? -x : x;
  if (a < 1.0) return 2.0 / 3.0 - a * a + 0.5 * a * a * a;
  if (a < 2.0) {
    const double b = 2.0 - a;
    return b * b * b / 6.0;
  }
  return 0.0;
}

inline double kernel_derivative(double x) {
  const double a = x < 0 ? -x : x;
  const double s = x < 0 ? -1.0 : 1.0;
  if (a < 1.0) return s * (-2.0 * a + 1.5 * a * a);
  if (a < 2.0) {
    const double b = 2.0 - a;
    return -s * 0.5 * b * b;
  }
  return 0.0;
}

}  // namespace bspline

/// Cubic B-spline free-form deformation: T(x) = A(x) + d(x), with d a tensor
/// product of control-point displacements (mm). Control points outside the
/// lattice contribute zero displacement.
class BSplineGrid {
 public:
  BSplineGrid() = default;
  BSplineGrid(std::array<int, 3> dims, Vec3 spacing, Vec3 origin, AffineTransform affine = {});

  /// Lattice covering `image` with one control point of margin below and two above.
  static BSplineGrid covering(const Grid& image, const Vec3& control_spacing,
                              AffineTransform affine = {});

  const std::array<int, 3>& dims() const { return dims_; }
  const Vec3& spacing() const { return spacing_; }
  const Vec3& origin() const { return origin_; }
  const AffineTransform& affine() const { return affine_; }
  void set_affine(const AffineTransform& a) { affine_ = a; }

  std::size_t size() const { return displacements_.size(); }
  std::size_t offset(int i, int j, int k) const {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(dims_[0]) *
                                             (static_cast<std::size_t>(j) +
                                              static_cast<std::size_t>(dims_[1]) * k);
  }
  Vec3 knot(int i, int j, int k) const {
    return origin_ + Vec3(i, j, k).cwiseProduct(spacing_);
  }

  std::vector<Vec3>& displacements() { return displacements_; }
  const std::vector<Vec3>& displacements() const { return displacements_; }
  Vec3& at(int i, int j, int k) { return displacements_[offset(i, j, k)]; }
  const Vec3& at(int i, int j, int k) const { return displacements_[offset(i, j, k)]; }

  Vec3 displacement(const Vec3& p) const;
  Vec3 apply(const Vec3& p) const { return affine_.apply(p) + displacement(p); }
  Vec3 operator()(const Vec3& p) const { return apply(p); }

  /// Jacobian of the displacement field d at p (rows: component, cols: axis).
  Mat3 displacement_jacobian(const Vec3& p) const;

  /// Second derivatives of component c: H(a, b) = d2 d_c / dx_a dx_b.
  std::array<Mat3, 3> displacement_hessians(const Vec3& p) const;

  /// Exact dyadic subdivision: half the spacing, identical displacement field.
  BSplineGrid refined() const;

  bool all_finite() const;

 private:
  std::array<int, 3> dims_{4, 4, 4};
  Vec3 spacing_ = Vec3::Ones();
  Vec3 origin_ = Vec3::Zero();
  AffineTransform affine_;
  std::vector<Vec3> displacements_ = std::vector<Vec3>(64, Vec3::Zero());
};

}  // namespace jlf
