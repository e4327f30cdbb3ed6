#include "jlf/transform.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Geometry>
#include <Eigen/LU>

namespace jlf {

AffineTransform::AffineTransform(const Mat4& m) : m_(m) {
  if (!m_.allFinite()) throw std::invalid_argument("affine: non-finite entries");
  if (m_(3, 0) != 0.0 || m_(3, 1) != 0.0 || m_(3, 2) != 0.0 || m_(3, 3) != 1.0)
    throw std::invalid_argument("affine: last row must be (0, 0, 0, 1)");
  if (std::abs(m_.topLeftCorner<3, 3>().determinant()) <= 1e-12)
    throw std::invalid_argument("affine: linear part is singular");
}

AffineTransform AffineTransform::translation(const Vec3& t) {
  Mat4 m = Mat4::Identity();
  m.topRightCorner<3, 1>() = t;
  return AffineTransform(m);
}

AffineTransform AffineTransform::rotation(const Vec3& center, const Vec3& axis, double radians) {
  const Mat3 r = Eigen::AngleAxisd(radians, axis.normalized()).toRotationMatrix();
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = center - r * center;
  return AffineTransform(m);
}

AffineTransform AffineTransform::inverse() const {
  const Mat3 inv = linear().inverse();
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = inv;
  m.topRightCorner<3, 1>() = -inv * offset();
  return AffineTransform(m);
}

BSplineGrid::BSplineGrid(std::array<int, 3> dims, Vec3 spacing, Vec3 origin, AffineTransform affine)
    : dims_(dims), spacing_(std::move(spacing)), origin_(std::move(origin)), affine_(affine) {
  for (int a = 0; a < 3; ++a) {
    if (dims_[a] < 4) throw std::invalid_argument("bspline grid: need >= 4 control points per axis");
    if (!(spacing_[a] > 0.0)) throw std::invalid_argument("bspline grid: spacing must be positive");
  }
  displacements_.assign(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2], Vec3::Zero());
}

BSplineGrid BSplineGrid::covering(const Grid& image, const Vec3& control_spacing,
                                  AffineTransform affine) {
  image.validate();
  std::array<int, 3> dims{};
  for (int a = 0; a < 3; ++a) {
    if (!(control_spacing[a] > 0.0)) throw std::invalid_argument("bspline grid: bad spacing");
    dims[a] = static_cast<int>(std::floor(image.extent()[a] / control_spacing[a])) + 4;
  }
  return BSplineGrid(dims, control_spacing, image.origin - control_spacing, affine);
}

namespace {

struct Support {
  int base[3];
  double u[3];
};

Support locate(const Vec3& p, const Vec3& origin, const Vec3& spacing) {
  Support s{};
  for (int a = 0; a < 3; ++a) {
    const double t = (p[a] - origin[a]) / spacing[a];
    const double f = std::floor(t);
    s.base[a] = static_cast<int>(f) - 1;
    s.u[a] = t - f;
  }
  return s;
}

}  // namespace

Vec3 BSplineGrid::displacement(const Vec3& p) const {
  const Support s = locate(p, origin_, spacing_);
  double wx[4], wy[4], wz[4];
  bspline::basis(s.u[0], wx);
  bspline::basis(s.u[1], wy);
  bspline::basis(s.u[2], wz);
  Vec3 d = Vec3::Zero();
  for (int c = 0; c < 4; ++c) {
    const int k = s.base[2] + c;
    if (k < 0 || k >= dims_[2]) continue;
    for (int b = 0; b < 4; ++b) {
      const int j = s.base[1] + b;
      if (j < 0 || j >= dims_[1]) continue;
      const double wyz = wy[b] * wz[c];
      for (int a = 0; a < 4; ++a) {
        const int i = s.base[0] + a;
        if (i < 0 || i >= dims_[0]) continue;
        d += (wx[a] * wyz) * displacements_[offset(i, j, k)];
      }
    }
  }
  return d;
}

Mat3 BSplineGrid::displacement_jacobian(const Vec3& p) const {
  const Support s = locate(p, origin_, spacing_);
  double w[3][4], dw[3][4];
  for (int a = 0; a < 3; ++a) {
    bspline::basis(s.u[a], w[a]);
    bspline::basis_d1(s.u[a], dw[a]);
    for (double& v : dw[a]) v /= spacing_[a];
  }
  Mat3 jac = Mat3::Zero();
  for (int c = 0; c < 4; ++c) {
    const int k = s.base[2] + c;
    if (k < 0 || k >= dims_[2]) continue;
    for (int b = 0; b < 4; ++b) {
      const int j = s.base[1] + b;
      if (j < 0 || j >= dims_[1]) continue;
      for (int a = 0; a < 4; ++a) {
        const int i = s.base[0] + a;
        if (i < 0 || i >= dims_[0]) continue;
        const Vec3& q = displacements_[offset(i, j, k)];
        jac.col(0) += dw[0][a] * w[1][b] * w[2][c] * q;
        jac.col(1) += w[0][a] * dw[1][b] * w[2][c] * q;
        jac.col(2) += w[0][a] * w[1][b] * dw[2][c] * q;
      }
    }
  }
  return jac;
}

std::array<Mat3, 3> BSplineGrid::displacement_hessians(const Vec3& p) const {
  const Support s = locate(p, origin_, spacing_);
  // basis value, first and second derivative per axis
  double w[3][3][4];
  for (int a = 0; a < 3; ++a) {
    bspline::basis(s.u[a], w[a][0]);
    bspline::basis_d1(s.u[a], w[a][1]);
    bspline::basis_d2(s.u[a], w[a][2]);
    for (int m = 0; m < 4; ++m) {
      w[a][1][m] /= spacing_[a];
      w[a][2][m] /= spacing_[a] * spacing_[a];
    }
  }
  std::array<Mat3, 3> h{Mat3::Zero(), Mat3::Zero(), Mat3::Zero()};
  for (int c = 0; c < 4; ++c) {
    const int k = s.base[2] + c;
    if (k < 0 || k >= dims_[2]) continue;
    for (int b = 0; b < 4; ++b) {
      const int j = s.base[1] + b;
      if (j < 0 || j >= dims_[1]) continue;
      for (int a = 0; a < 4; ++a) {
        const int i = s.base[0] + a;
        if (i < 0 || i >= dims_[0]) continue;
        const Vec3& q = displacements_[offset(i, j, k)];
        const int idx[3] = {a, b, c};
        for (int r = 0; r < 3; ++r) {
          for (int t = r; t < 3; ++t) {
            double coeff = 1.0;
            for (int ax = 0; ax < 3; ++ax) {
              const int order = (ax == r) + (ax == t);
              coeff *= w[ax][order][idx[ax]];
            }
            for (int comp = 0; comp < 3; ++comp) h[comp](r, t) += coeff * q[comp];
          }
        }
      }
    }
  }
  for (auto& m : h) {
    m(1, 0) = m(0, 1);
    m(2, 0) = m(0, 2);
    m(2, 1) = m(1, 2);
  }
  return h;
}

BSplineGrid BSplineGrid::refined() const {
  // Subdivision mask per axis: c'[2i] = (c[i-1] + 6 c[i] + c[i+1]) / 8,
  // c'[2i+1] = (c[i] + c[i+1]) / 2, stored with one extra knot below.
  std::array<int, 3> nd{2 * dims_[0] + 1, 2 * dims_[1] + 1, 2 * dims_[2] + 1};
  BSplineGrid out(nd, spacing_ / 2.0, origin_ - spacing_ / 2.0, affine_);

  std::vector<Vec3> cur = displacements_;
  std::array<int, 3> cd = dims_;
  for (int axis = 0; axis < 3; ++axis) {
    std::array<int, 3> od = cd;
    od[axis] = 2 * cd[axis] + 1;
    std::vector<Vec3> next(static_cast<std::size_t>(od[0]) * od[1] * od[2], Vec3::Zero());
    auto src = [&](int i, int j, int k) -> Vec3 {
      int idx[3] = {i, j, k};
      if (idx[axis] < 0 || idx[axis] >= cd[axis]) return Vec3::Zero();
      return cur[static_cast<std::size_t>(i) + static_cast<std::size_t>(cd[0]) *
                                                   (static_cast<std::size_t>(j) +
                                                    static_cast<std::size_t>(cd[1]) * k)];
    };
    for (int k = 0; k < od[2]; ++k)
      for (int j = 0; j < od[1]; ++j)
        for (int i = 0; i < od[0]; ++i) {
          int idx[3] = {i, j, k};
          const int m = idx[axis] - 1;  // fine index relative to the old origin
          auto at = [&](int old) {
            int s[3] = {i, j, k};
            s[axis] = old;
            return src(s[0], s[1], s[2]);
          };
          Vec3 v;
          if (m % 2 == 0) {
            const int c = m / 2;
            v = (at(c - 1) + 6.0 * at(c) + at(c + 1)) / 8.0;
          } else {
            const int c = (m - 1) / 2;  // m = -1 -> c = -1
            v = (at(c) + at(c + 1)) / 2.0;
          }
          next[static_cast<std::size_t>(i) +
               static_cast<std::size_t>(od[0]) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(od[1]) * k)] = v;
        }
    cur = std::move(next);
    cd = od;
  }
  out.displacements_ = std::move(cur);
  return out;
}

bool BSplineGrid::all_finite() const {
  for (const auto& d : displacements_)
    if (!d.allFinite()) return false;
  return affine_.matrix().allFinite();
}

}  // namespace jlf
