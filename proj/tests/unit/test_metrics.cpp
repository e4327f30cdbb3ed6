#include <cmath>
#include <random>

#include "doctest.h"
#include "jlf/metrics.hpp"

using namespace jlf;

namespace {

Image<Label> empty_mask(std::array<int, 3> dims, Vec3 spacing = Vec3::Ones()) {
  Grid g;
  g.dims = dims;
  g.spacing = spacing;
  return Image<Label>(g, 0);
}

// Surface oracle: foreground voxel with a 6-neighbour that is background or outside.
std::vector<Vec3> brute_surface(const Image<Label>& m) {
  const Grid& g = m.grid();
  std::vector<Vec3> out;
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        if (!m(i, j, k)) continue;
        bool s = false;
        const int d[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
        for (const auto& e : d) {
          const VoxelIndex n{i + e[0], j + e[1], k + e[2]};
          if (!g.contains(n) || !m(n)) s = true;
        }
        if (s) out.push_back(g.world(i, j, k));
      }
  return out;
}

std::vector<double> brute_distances(const std::vector<Vec3>& seg, const std::vector<Vec3>& gt) {
  std::vector<double> d;
  for (const auto& p : seg) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : gt) best = std::min(best, (p - q).norm());
    d.push_back(best);
  }
  return d;
}

}  // namespace

TEST_CASE("dice") {
  auto a = empty_mask({10, 10, 2});
  auto b = a;
  CHECK(dice(a, b) == 100.0);
  for (int i = 0; i < 100; ++i) a[i] = 1;
  CHECK(dice(a, a) == 100.0);
  CHECK(dice(a, b) == 0.0);
  for (int i = 20; i < 120; ++i) b[i] = 1;
  CHECK(dice(a, b) == doctest::Approx(2.0 * 80 / 200 * 100).epsilon(1e-15));
  CHECK(dice(a, b) == doctest::Approx(80.0));
  auto other = empty_mask({5, 5, 5});
  CHECK_THROWS(dice(a, other));
}

TEST_CASE("surface voxels") {
  auto m = empty_mask({5, 5, 5});
  CHECK(surface_voxels(m).empty());
  m(2, 2, 2) = 1;
  REQUIRE(surface_voxels(m).size() == 1);
  CHECK(surface_voxels(m).points[0] == Vec3(2, 2, 2));
  for (int k = 1; k < 4; ++k)
    for (int j = 1; j < 4; ++j)
      for (int i = 1; i < 4; ++i) m(i, j, k) = 1;
  const SurfaceSet s = surface_voxels(m);
  CHECK(s.size() == 26);
  for (const auto& p : s.points) CHECK(p != Vec3(2, 2, 2));
}

TEST_CASE("parallel planes 2 mm apart") {
  auto a = empty_mask({6, 6, 8}, Vec3(1, 1, 0.5));
  auto b = a;
  for (int j = 0; j < 6; ++j)
    for (int i = 0; i < 6; ++i) {
      a(i, j, 1) = 1;
      b(i, j, 5) = 1;
    }
  const SurfaceSet sa = surface_voxels(a), sb = surface_voxels(b);
  CHECK(std::abs(asd(sa, sb) - 2.0) < 1e-9);
  CHECK(std::abs(asd_max(sa, sb) - 2.0) < 1e-9);
  CHECK(std::abs(asd_symmetric(sa, sb) - 2.0) < 1e-9);
  CHECK(asd(sa, sa) == 0.0);
  CHECK(asd_max(sa, sa) == 0.0);
}

TEST_CASE("a single outlier drives the maximum") {
  auto gt = empty_mask({30, 12, 12});
  for (int k = 2; k < 10; ++k)
    for (int j = 2; j < 10; ++j)
      for (int i = 2; i < 10; ++i) gt(i, j, k) = 1;
  auto seg = gt;
  seg(19, 5, 5) = 1;
  const SurfaceSet ss = surface_voxels(seg), sg = surface_voxels(gt);
  CHECK(asd_max(ss, sg) == doctest::Approx(10.0));
  CHECK(asd(ss, sg) < 1.0);
}

TEST_CASE("empty surfaces are undefined") {
  auto a = empty_mask({4, 4, 4});
  auto b = a;
  b(1, 1, 1) = 1;
  CHECK_THROWS_AS(asd(surface_voxels(a), surface_voxels(b)), UndefinedMetricError);
  CHECK_THROWS_AS(asd_max(surface_voxels(b), surface_voxels(a)), UndefinedMetricError);
}

TEST_CASE("surface distances match brute force on random masks") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> dim(2, 12);
  std::uniform_real_distribution<double> sp(0.5, 2.0);
  for (int t = 0; t < 25; ++t) {
    const std::array<int, 3> dims{dim(rng), dim(rng), dim(rng)};
    const Vec3 spacing(sp(rng), sp(rng), sp(rng));
    auto a = empty_mask(dims, spacing), b = empty_mask(dims, spacing);
    std::bernoulli_distribution pa(0.3), pb(0.4);
    for (std::size_t o = 0; o < a.size(); ++o) {
      a[o] = pa(rng);
      b[o] = pb(rng);
    }
    a[0] = 1;
    b[b.size() - 1] = 1;
    const auto oa = brute_surface(a), ob = brute_surface(b);
    const SurfaceSet sa = surface_voxels(a), sb = surface_voxels(b);
    REQUIRE(sa.size() == oa.size());
    const auto d = surface_distances(sa, sb);
    const auto od = brute_distances(oa, ob);
    REQUIRE(d.size() == od.size());
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(d[i] == od[i]);
  }
}

TEST_CASE("kd-tree nearest distance") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-10, 10);
  std::vector<Vec3> pts;
  for (int i = 0; i < 300; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  const KdTree tree(pts);
  for (int t = 0; t < 200; ++t) {
    const Vec3 q(u(rng), u(rng), u(rng));
    double best = 1e9;
    for (const auto& p : pts) best = std::min(best, (p - q).norm());
    CHECK(tree.nearest_distance(q) == best);
  }
  CHECK_THROWS(KdTree({}).nearest_distance(Vec3::Zero()));
}

TEST_CASE("evaluate with substructures") {
  auto gt = empty_mask({12, 12, 12});
  for (int k = 2; k < 10; ++k)
    for (int j = 2; j < 10; ++j)
      for (int i = 2; i < 10; ++i) gt(i, j, k) = 1;
  auto left = empty_mask({12, 12, 12}), right = left;
  for (std::size_t o = 0; o < gt.size(); ++o) (gt.grid().index(o).i < 6 ? left : right)[o] = 1;
  const CaseReport r = evaluate(gt, gt, {{"VB", left}, {"TP", right}}, {}, "c");
  CHECK(r.case_id == "c");
  for (const auto& name : {"WV", "VB", "TP"}) {
    CHECK(r.regions.at(name).dice == 100.0);
    CHECK(r.regions.at(name).asd == 0.0);
    CHECK(r.regions.at(name).asd_max == 0.0);
  }
  const CaseReport empty = evaluate(empty_mask({12, 12, 12}), gt);
  CHECK(empty.regions.at("WV").dice == 0.0);
  CHECK(std::isnan(empty.regions.at("WV").asd));
}

TEST_CASE("summaries") {
  Summary s = summarize({4.0});
  CHECK(s.mean == 4.0);
  CHECK(s.std == 0.0);
  CHECK(s.n == 1);

  s = summarize({90.0, 80.0, std::nan("")});
  CHECK(s.mean == 85.0);
  CHECK(s.std == doctest::Approx(std::sqrt(50.0)));
  CHECK(s.n == 2);

  EvalReport rep;
  rep.cases.push_back({"a", {{"WV", {90.0, 1.0, 3.0}}, {"TP", {70.0, 2.0, 8.0}}}});
  rep.cases.push_back({"b", {{"WV", {80.0, 3.0, 5.0}}, {"TP", {60.0, 4.0, 6.0}}}});
  CHECK(rep.regions() == std::vector<std::string>{"WV", "TP"});
  const Summary d = rep.summary("WV", &RegionMetrics::dice);
  CHECK(d.mean == 85.0);
  CHECK(d.std == doctest::Approx(std::sqrt(((90 - 85.0) * (90 - 85.0) + (80 - 85.0) * (80 - 85.0)) / 1)));
  const Summary m = rep.summary("TP", &RegionMetrics::asd_max);
  CHECK(m.mean == 7.0);
  CHECK(m.std == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("csv and markdown layout") {
  EvalReport rep;
  rep.cases.push_back({"a", {{"WV", {90.0, 1.0, 3.0}}}});
  rep.cases.push_back({"b", {{"WV", {80.0, std::nan(""), std::nan("")}}}});
  const std::string csv = to_csv(rep);
  CHECK(csv.rfind("case,DC-WV,ASD-WV,ASDmax-WV\n", 0) == 0);
  CHECK(csv.find("b,80") != std::string::npos);
  CHECK(csv.find("n/a") != std::string::npos);
  CHECK(csv.find("\nmean,85") != std::string::npos);
  CHECK(csv.find("\nstd,") != std::string::npos);
  const std::string md = to_markdown({rep});
  CHECK(md.find("85.0 (7.1)") != std::string::npos);
}
