#include <cmath>
#include <random>

#include "doctest.h"
#include "jlf/registration.hpp"
#include "jlf/resample.hpp"

using namespace jlf;

namespace {

Volume blobs(int n, Vec3 shift = Vec3::Zero(), double noise = 0.0) {
  Grid g;
  g.dims = {n, n, n};
  Volume v(g);
  const std::array<Vec3, 3> centres = {Vec3(0.35, 0.4, 0.5) * n, Vec3(0.65, 0.55, 0.45) * n,
                                       Vec3(0.5, 0.7, 0.6) * n};
  const std::array<double, 3> amp = {300, 200, 120};
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const Vec3 p = Vec3(i, j, k) - shift;
        double s = 20;
        for (int b = 0; b < 3; ++b) s += amp[b] * std::exp(-(p - centres[b]).squaredNorm() / (2 * 0.015 * n * n));
        v(i, j, k) = static_cast<float>(s);
      }
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0, noise > 0 ? noise : 1);
  if (noise > 0)
    for (std::size_t o = 0; o < v.size(); ++o) v[o] += static_cast<float>(nd(rng));
  return v;
}

double entropy_of(std::initializer_list<double> p) {
  double h = 0;
  for (double x : p)
    if (x > 0) h -= x * std::log(x);
  return h;
}

// Second derivatives of d at p from one-sided 4-point differences, which are
// exact on a single cubic piece.
std::array<Mat3, 3> one_sided_hessians(const BSplineGrid& grid, const Vec3& p) {
  const Vec3 h = 0.2 * grid.spacing();
  const double c1[4] = {-11.0 / 6, 3.0, -1.5, 1.0 / 3};
  const double c2[4] = {2.0, -5.0, 4.0, -1.0};
  std::array<Mat3, 3> out;
  for (auto& m : out) m.setZero();
  for (int a = 0; a < 3; ++a)
    for (int b = a; b < 3; ++b) {
      Vec3 acc = Vec3::Zero();
      if (a == b) {
        for (int s = 0; s < 4; ++s) {
          Vec3 q = p;
          q[a] += s * h[a];
          acc += c2[s] * grid.displacement(q);
        }
        acc /= h[a] * h[a];
      } else {
        for (int s = 0; s < 4; ++s)
          for (int t = 0; t < 4; ++t) {
            Vec3 q = p;
            q[a] += s * h[a];
            q[b] += t * h[b];
            acc += c1[s] * c1[t] * grid.displacement(q);
          }
        acc /= h[a] * h[b];
      }
      for (int c = 0; c < 3; ++c) {
        out[c](a, b) = acc[c];
        out[c](b, a) = acc[c];
      }
    }
  return out;
}

double fd_bending_energy(const BSplineGrid& grid, const Grid& domain) {
  double total = 0;
  int count = 0;
  const Vec3 lo = domain.origin, hi = domain.origin + domain.extent();
  for (int k = 0; k < grid.dims()[2]; ++k)
    for (int j = 0; j < grid.dims()[1]; ++j)
      for (int i = 0; i < grid.dims()[0]; ++i) {
        const Vec3 p = grid.knot(i, j, k);
        if ((p.array() < lo.array() - 1e-9).any() || (p.array() > hi.array() + 1e-9).any()) continue;
        for (const Mat3& h : one_sided_hessians(grid, p)) total += h.squaredNorm();
        ++count;
      }
  return count ? total / count : 0.0;
}

BSplineGrid random_grid(std::mt19937_64& rng, const Grid& domain, const Vec3& spacing, double scale) {
  std::normal_distribution<double> n(0, scale);
  BSplineGrid grid = BSplineGrid::covering(domain, spacing);
  for (auto& d : grid.displacements()) d = Vec3(n(rng), n(rng), n(rng));
  return grid;
}

}  // namespace

TEST_CASE("box-kernel histogram on a 2x2x2 pair matches a hand tally") {
  Grid g;
  g.dims = {2, 2, 2};
  Volume f(g, std::vector<float>{0, 1, 2, 3, 0, 1, 2, 3});
  Volume m(g, std::vector<float>{0, 0, 1, 1, 2, 3, 3, 3});
  const JointHistogram h = joint_histogram(f, m, 4, HistogramKernel::box);
  Eigen::MatrixXd tally = Eigen::MatrixXd::Zero(4, 4);
  for (int v = 0; v < 8; ++v) tally(static_cast<int>(f[v]), static_cast<int>(m[v])) += 1.0 / 8;
  CHECK((h.p - tally).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(h.fixed_marginal.sum() == doctest::Approx(1.0));
}

TEST_CASE("cubic histogram of identical two-valued images stays near the diagonal") {
  Grid g;
  g.dims = {4, 4, 4};
  Volume v(g, 10.f);
  for (std::size_t o = 0; o < v.size() / 2; ++o) v[o] = 90.f;
  const JointHistogram h = joint_histogram(v, v, 16);
  CHECK(h.p.sum() == doctest::Approx(1.0).epsilon(1e-12));
  double off = 0;
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c)
      if (std::abs(r - c) > 1) off += h.p(r, c);
  CHECK(off < 1e-12);
  CHECK(h.p(0, 0) > 0.2);
  CHECK(h.p(15, 15) > 0.2);
}

TEST_CASE("histogram mass sums to one") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(-5, 5);
  Grid g;
  g.dims = {5, 6, 7};
  Volume a(g), b(g);
  for (std::size_t o = 0; o < a.size(); ++o) {
    a[o] = u(rng);
    b[o] = u(rng);
  }
  for (auto k : {HistogramKernel::box, HistogramKernel::cubic})
    CHECK(joint_histogram(a, b, 32, k).p.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("constant image is a degenerate range") {
  Grid g;
  g.dims = {3, 3, 3};
  Volume c(g, 4.f), r(g, 0.f);
  r[5] = 1.f;
  CHECK_THROWS_AS(joint_histogram(c, r), DegenerateRangeError);
  CHECK_THROWS_AS(joint_histogram(r, c), DegenerateRangeError);
}

TEST_CASE("NMI identities") {
  Grid g;
  g.dims = {6, 6, 6};
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0, 100);
  Volume v(g);
  for (std::size_t o = 0; o < v.size(); ++o) v[o] = u(rng);
  CHECK(nmi(joint_histogram(v, v, 64, HistogramKernel::box)) == 2.0);

  Eigen::VectorXd a(4), b(4);
  a << 0.2, 0.5, 0.2, 0.1;
  b << 0.1, 0.4, 0.25, 0.25;
  const Eigen::MatrixXd product = a * b.transpose();
  CHECK(std::abs(nmi(JointHistogram::from_counts(product * 1000)) - 1.0) < 1e-9);

  Eigen::MatrixXd p(2, 2);
  p << 0.4, 0.1, 0.1, 0.4;
  const double oracle = (entropy_of({0.5, 0.5}) * 2) / entropy_of({0.4, 0.1, 0.1, 0.4});
  CHECK(nmi(JointHistogram::from_counts(p)) == doctest::Approx(oracle).epsilon(1e-14));
}

TEST_CASE("entropy conventions") {
  Eigen::VectorXd p(3);
  p << 0.0, 0.5, 0.5;
  CHECK(entropy(p) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("bending energy of zero and affine fields vanishes") {
  Grid domain;
  domain.dims = {20, 18, 16};
  BSplineGrid grid = BSplineGrid::covering(domain, Vec3(4, 4, 4));
  CHECK(bending_energy(grid, domain) == 0.0);
  const Mat3 a = (Mat3() << 0.01, 0.02, -0.01, 0.03, 0.0, 0.01, -0.02, 0.01, 0.02).finished();
  for (int k = 0; k < grid.dims()[2]; ++k)
    for (int j = 0; j < grid.dims()[1]; ++j)
      for (int i = 0; i < grid.dims()[0]; ++i) grid.at(i, j, k) = a * grid.knot(i, j, k) + Vec3(1, 2, 3);
  CHECK(bending_energy(grid, domain) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  for (const auto& g : bending_energy_gradient(grid, domain)) CHECK(g.norm() < 1e-9);
}

TEST_CASE("bending energy matches a finite-difference oracle") {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 3; ++t) {
    Grid domain;
    domain.dims = {14 + 2 * t, 12, 10 + t};
    domain.spacing = Vec3(1.0, 1.5, 2.0);
    const BSplineGrid grid = random_grid(rng, domain, Vec3(4, 5, 6), 1.0);
    const double analytic = bending_energy(grid, domain);
    const double fd = fd_bending_energy(grid, domain);
    CHECK(analytic == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("bending energy gradient matches central differences") {
  std::mt19937_64 rng(8);
  Grid domain;
  domain.dims = {12, 12, 12};
  BSplineGrid grid = random_grid(rng, domain, Vec3(4, 4, 4), 0.5);
  const auto g = bending_energy_gradient(grid, domain);
  std::uniform_int_distribution<std::size_t> pick(0, grid.size() - 1);
  for (int t = 0; t < 20; ++t) {
    const std::size_t c = pick(rng);
    for (int a = 0; a < 3; ++a) {
      const double h = 1e-4;
      const Vec3 keep = grid.displacements()[c];
      grid.displacements()[c][a] = keep[a] + h;
      const double up = bending_energy(grid, domain);
      grid.displacements()[c][a] = keep[a] - h;
      const double down = bending_energy(grid, domain);
      grid.displacements()[c] = keep;
      CHECK(g[c][a] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6).scale(1e-8));
    }
  }
}

TEST_CASE("cost reduces to NMI for alpha 0 and weighs the penalty") {
  const Volume v = blobs(16);
  RegistrationParams p;
  p.alpha = 0.0;
  CHECK(cost(v, v, AffineTransform(), p) == doctest::Approx(2.0).epsilon(1e-12));
  p.alpha = 0.005;
  CHECK(cost(v, v, AffineTransform(), p) == doctest::Approx(1.99).epsilon(1e-12));
  const BSplineGrid zero = BSplineGrid::covering(v.grid(), Vec3::Constant(5));
  CHECK(cost(v, v, zero, p) == doctest::Approx(1.99).epsilon(1e-12));
}

TEST_CASE("cost decreases along a translation sweep") {
  const Volume v = blobs(20);
  RegistrationParams p;
  double previous = cost(v, v, AffineTransform(), p);
  for (double t : {0.5, 1.0, 2.0, 3.0}) {
    const double c = cost(v, v, AffineTransform::translation(Vec3(t, 0, 0)), p);
    CHECK(c < previous);
    previous = c;
  }
}

TEST_CASE("analytic cost gradient agrees with finite differences") {
  const Volume f = blobs(16);
  const Volume m = blobs(16, Vec3(0.7, -0.4, 0.3));
  RegistrationParams p;
  p.alpha = 0.01;
  p.bins = 32;
  std::mt19937_64 rng(3);
  BSplineGrid grid = random_grid(rng, f.grid(), Vec3::Constant(5), 0.3);
  double value = 0;
  const auto g = cost_gradient(f, m, grid, p, &value);
  CHECK(value == doctest::Approx(parzen_cost(f, m, grid, p)).epsilon(1e-12));
  double dot = 0, na = 0, nf = 0;
  for (std::size_t c = 0; c < grid.size(); c += 3)
    for (int a = 0; a < 3; ++a) {
      const double h = 1e-4;
      const Vec3 keep = grid.displacements()[c];
      grid.displacements()[c][a] = keep[a] + h;
      const double up = parzen_cost(f, m, grid, p);
      grid.displacements()[c][a] = keep[a] - h;
      const double down = parzen_cost(f, m, grid, p);
      grid.displacements()[c] = keep;
      const double fd = (up - down) / (2 * h);
      dot += fd * g[c][a];
      na += g[c][a] * g[c][a];
      nf += fd * fd;
    }
  CHECK(dot / std::sqrt(na * nf) > 0.999);
  CHECK(std::sqrt(na / nf) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("affine registration of an image with itself returns the identity") {
  for (double noise : {0.0, 5.0}) {
    const Volume v = blobs(24, Vec3::Zero(), noise);
    RegistrationParams p;
    p.levels = 2;
    const AffineResult r = affine_register(v, v, p);
    CHECK((r.transform.matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-3);
    for (const auto& level : r.cost_history)
      for (std::size_t i = 1; i < level.size(); ++i) CHECK(level[i] >= level[i - 1]);
  }
}

TEST_CASE("symmetric affine averages forward and inverse estimates") {
  const Volume f = blobs(24);
  const Volume m = blobs(24, Vec3(1.5, 0, 0));
  RegistrationParams p;
  p.levels = 2;
  p.symmetric_affine = true;
  const AffineResult r = affine_register(f, m, p);
  CHECK(r.transform.offset().x() == doctest::Approx(1.5).epsilon(0.2));
}

TEST_CASE("B-spline registration of an aligned pair keeps small displacements") {
  const Volume v = blobs(24);
  RegistrationParams p;
  p.levels = 2;
  p.bspline_iterations = 15;
  const BSplineResult r = bspline_register(v, v, AffineTransform(), p);
  double worst = 0;
  for (const auto& d : r.grid.displacements()) worst = std::max(worst, d.norm());
  CHECK(worst < 0.5);
  for (const auto& level : r.cost_history)
    for (std::size_t i = 1; i < level.size(); ++i) CHECK(level[i] >= level[i - 1]);
}

TEST_CASE("a hundredfold alpha yields a smoother field") {
  const Volume f = blobs(24);
  std::mt19937_64 rng(12);
  const BSplineGrid warp = random_grid(rng, f.grid(), Vec3::Constant(8), 1.0);
  const Volume m = warp_volume(f, warp, f.grid());
  RegistrationParams p;
  p.levels = 2;
  p.bspline_iterations = 15;
  p.alpha = 0.002;
  const double loose = bending_energy(bspline_register(f, m, AffineTransform(), p).grid, f.grid());
  p.alpha = 0.2;
  const double stiff = bending_energy(bspline_register(f, m, AffineTransform(), p).grid, f.grid());
  CHECK(stiff < loose);
}

TEST_CASE("parameter validation") {
  RegistrationParams p;
  p.alpha = 1.5;
  CHECK_THROWS(p.validate());
  p = {};
  p.levels = 0;
  CHECK_THROWS(p.validate());
  p = {};
  p.bins = 1;
  CHECK_THROWS(p.validate());
}
