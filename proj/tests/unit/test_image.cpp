#include <random>

#include "doctest.h"
#include "jlf/image.hpp"
#include "jlf/resample.hpp"
#include "jlf/transform.hpp"

using namespace jlf;

namespace {

Volume ramp(const Grid& g) {
  Volume v(g);
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) v(i, j, k) = static_cast<float>(i + 10 * j + 100 * k);
  return v;
}

}  // namespace

TEST_CASE("voxel_to_world") {
  Grid g;
  g.dims = {8, 8, 8};
  CHECK(voxel_to_world(g, {3, 4, 5}) == Vec3(3, 4, 5));
  CHECK(voxel_to_world(g, {0, 0, 0}) == g.origin);

  g.origin = Vec3(10, 0, 0);
  g.spacing = Vec3(0.5, 0.5, 2);
  const Vec3 w = voxel_to_world(g, {2, 2, 1});
  CHECK(w.x() == doctest::Approx(10 + 2 * 0.5));
  CHECK(w.y() == doctest::Approx(2 * 0.5));
  CHECK(w.z() == doctest::Approx(1 * 2.0));
  CHECK(voxel_to_world(g, {0, 0, 0}) == g.origin);
  CHECK_THROWS_AS(voxel_to_world(g, {8, 0, 0}), std::out_of_range);
  CHECK_THROWS_AS(voxel_to_world(g, {0, -1, 0}), std::out_of_range);
}

TEST_CASE("offset and index are inverse") {
  Grid g;
  g.dims = {5, 3, 4};
  for (std::size_t o = 0; o < g.size(); ++o) CHECK(g.offset(g.index(o)) == o);
}

TEST_CASE("grid validation") {
  Grid g;
  g.dims = {0, 1, 1};
  CHECK_THROWS(Volume(g));
  g.dims = {2, 2, 2};
  g.spacing = Vec3(1, -1, 1);
  CHECK_THROWS(Volume(g));
  g.spacing = Vec3::Ones();
  CHECK_THROWS(Volume(g, std::vector<float>(7)));
}

TEST_CASE("check_legend and check_finite") {
  Grid g;
  g.dims = {2, 2, 2};
  LabelMap m(g, binary_legend(), 0);
  m[3] = 5;
  CHECK_THROWS(check_legend(m));
  m[3] = 1;
  CHECK_NOTHROW(check_legend(m));
  Volume v(g, 1.f);
  v[2] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS(check_finite(v));
}

TEST_CASE("warp_volume identity reproduces the input") {
  Grid g;
  g.dims = {6, 5, 4};
  g.spacing = Vec3(1.5, 1, 2);
  g.origin = Vec3(-3, 2, 1);
  const Volume v = ramp(g);
  CHECK(warp_volume(v, AffineTransform(), g) == v);
}

TEST_CASE("warp_volume translation by one voxel shifts the ramp") {
  Grid g;
  g.dims = {8, 6, 5};
  g.spacing = Vec3(2, 1, 1);
  const Volume v = ramp(g);
  // out(x) = in(x - 2 mm) along x
  const Volume out = warp_volume(v, AffineTransform::translation(Vec3(-2, 0, 0)), g);
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 1; i < g.dims[0]; ++i) CHECK(out(i, j, k) == v(i - 1, j, k));
  CHECK(out(0, 0, 0) == min_value(v));
}

TEST_CASE("zero-displacement B-spline matches the affine warp") {
  Grid g;
  g.dims = {9, 7, 6};
  const Volume v = ramp(g);
  const AffineTransform a = AffineTransform::rotation(g.center(), Vec3::UnitZ(), 0.1) *
                            AffineTransform::translation(Vec3(0.3, -0.2, 0.1));
  const BSplineGrid grid = BSplineGrid::covering(g, Vec3::Constant(3), a);
  CHECK(warp_volume(v, grid, g) == warp_volume(v, a, g));
}

TEST_CASE("warp_labels shifts labels and keeps the legend") {
  Grid g;
  g.dims = {7, 7, 7};
  Legend legend{{0, "background"}, {1, "vertebra"}, {2, "rib"}};
  LabelMap m(g, legend, 0);
  m(3, 3, 3) = 1;
  m(4, 3, 3) = 2;
  CHECK(warp_labels(m, AffineTransform(), g) == m);
  const LabelMap s = warp_labels(m, AffineTransform::translation(Vec3(0, -1, 0)), g);
  CHECK(s.legend() == legend);
  for (int k = 0; k < 7; ++k)
    for (int j = 1; j < 7; ++j)
      for (int i = 0; i < 7; ++i) CHECK(s(i, j, k) == m(i, j - 1, k));
}

TEST_CASE("affine inverse and composition") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  Mat4 m = Mat4::Identity();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) += 0.2 * u(rng);
  const AffineTransform a(m);
  const Vec3 p(1, 2, 3);
  CHECK((a.inverse()(a(p)) - p).norm() < 1e-12);
  CHECK(((a * a.inverse()).matrix() - Mat4::Identity()).norm() < 1e-12);
}

TEST_CASE("B-spline refinement keeps the displacement field") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1);
  Grid g;
  g.dims = {12, 10, 8};
  BSplineGrid grid = BSplineGrid::covering(g, Vec3::Constant(4));
  for (auto& d : grid.displacements()) d = Vec3(n(rng), n(rng), n(rng));
  const BSplineGrid fine = grid.refined();
  for (int t = 0; t < 50; ++t) {
    const Vec3 p(11 * std::abs(n(rng)) / 3, 9 * std::abs(n(rng)) / 3, 7 * std::abs(n(rng)) / 3);
    CHECK((grid.displacement(p) - fine.displacement(p)).norm() < 1e-10);
  }
}

TEST_CASE("displacement jacobian matches finite differences") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1);
  Grid g;
  g.dims = {10, 10, 10};
  BSplineGrid grid = BSplineGrid::covering(g, Vec3(3, 4, 5));
  for (auto& d : grid.displacements()) d = Vec3(n(rng), n(rng), n(rng));
  const Vec3 p(4.3, 5.1, 2.7);
  const Mat3 j = grid.displacement_jacobian(p);
  const double h = 1e-6;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = h;
    const Vec3 fd = (grid.displacement(p + e) - grid.displacement(p - e)) / (2 * h);
    for (int c = 0; c < 3; ++c) CHECK(j(c, a) == doctest::Approx(fd[c]).epsilon(1e-6));
  }
}
