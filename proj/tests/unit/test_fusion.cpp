#include <algorithm>
#include <random>

#include "doctest.h"
#include "jlf/fusion.hpp"

using namespace jlf;

namespace {

Grid cube(int n) {
  Grid g;
  g.dims = {n, n, n};
  return g;
}

Volume texture(const Grid& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 100);
  Volume v(g);
  for (std::size_t o = 0; o < v.size(); ++o) v[o] = u(rng);
  return v;
}

const Legend kJoint{{0, "background"}, {1, "vertebra"}, {2, "rib"}};

}  // namespace

TEST_CASE("fusion weight examples") {
  FusionWeights w = fusion_weights(DependencyMatrix::Constant(1, 1, 3.0));
  CHECK(w.size() == 1);
  CHECK(std::abs(w[0] - 1.0) < 1e-12);

  for (int n : {2, 3, 7}) {
    w = fusion_weights(DependencyMatrix::Identity(n, n));
    for (int i = 0; i < n; ++i) CHECK(std::abs(w[i] - 1.0 / n) < 1e-12);
  }

  DependencyMatrix m = DependencyMatrix::Zero(2, 2);
  m(0, 0) = 1;
  m(1, 1) = 4;
  w = fusion_weights(m);
  CHECK(std::abs(w[0] - 0.8) < 1e-12);
  CHECK(std::abs(w[1] - 0.2) < 1e-12);
}

TEST_CASE("weights sum to one on random SPD matrices") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0, 1);
  for (int t = 0; t < 200; ++t) {
    const int k = 2 + t % 6;
    Eigen::MatrixXd a(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) a(i, j) = n(rng);
    const DependencyMatrix m = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(k, k);
    CHECK(std::abs(fusion_weights(m).sum() - 1.0) < 1e-10);
  }
}

TEST_CASE("non-SPD input raises ConditioningError") {
  DependencyMatrix m(2, 2);
  m << 1, 3, 3, 1;
  CHECK_THROWS_AS(fusion_weights(m), ConditioningError);
}

TEST_CASE("best_patch_offset") {
  const Grid g = cube(11);
  const Volume t = texture(g, 1);
  FusionParams p;
  p.patch_radius = 1;
  p.search_radius = 2;
  const VoxelIndex x{5, 5, 5};

  SUBCASE("atlas equal to target") {
    const WarpedAtlas a{t, LabelMap(g, kJoint, 0), "a"};
    CHECK(best_patch_offset(t, a, x, p) == VoxelIndex{0, 0, 0});
  }
  SUBCASE("atlas shifted by one voxel") {
    Volume s(g);
    for (int k = 0; k < 11; ++k)
      for (int j = 0; j < 11; ++j)
        for (int i = 0; i < 11; ++i) s(i, j, k) = t.clamped(i + 1, j, k);
    const WarpedAtlas a{s, LabelMap(g, kJoint, 0), "a"};
    CHECK(best_patch_offset(t, a, x, p) == VoxelIndex{-1, 0, 0});
  }
  SUBCASE("constant patches tie at zero") {
    const Volume c(g, 5.f);
    const WarpedAtlas a{Volume(g, 9.f), LabelMap(g, kJoint, 0), "a"};
    CHECK(best_patch_offset(c, a, x, p) == VoxelIndex{0, 0, 0});
  }
}

TEST_CASE("dependency matrix") {
  const Grid g = cube(5);
  FusionParams p;
  p.patch_radius = 1;
  p.search_radius = 0;
  p.beta = 2;
  p.epsilon = 0.1;
  const VoxelIndex x{2, 2, 2};

  SUBCASE("hand computation on constant patches") {
    const Volume t(g, 0.f);
    const std::vector<WarpedAtlas> atlases{{Volume(g, 1.f), LabelMap(g, kJoint, 0), "a"},
                                           {Volume(g, 2.f), LabelMap(g, kJoint, 0), "b"}};
    const DependencyMatrix m = dependency_matrix(t, atlases, x, p);
    const double m11 = std::pow(27.0 * 1 * 1, 2), m22 = std::pow(27.0 * 2 * 2, 2), m12 = std::pow(27.0 * 1 * 2, 2);
    const double ridge = 0.1 * (m11 + m22) / 2;
    CHECK(m(0, 0) == doctest::Approx(m11 + ridge).epsilon(1e-14));
    CHECK(m(1, 1) == doctest::Approx(m22 + ridge).epsilon(1e-14));
    CHECK(m(0, 1) == doctest::Approx(m12).epsilon(1e-14));
    CHECK(m(1, 0) == m(0, 1));
  }
  SUBCASE("identical patches give a scaled identity") {
    const Volume t = texture(g, 3);
    const std::vector<WarpedAtlas> atlases(3, WarpedAtlas{t, LabelMap(g, kJoint, 0), "a"});
    const DependencyMatrix m = dependency_matrix(t, atlases, x, p);
    CHECK((m - 0.1 * Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-15);
    const FusionWeights w = fusion_weights(m);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(w[i] - 1.0 / 3) < 1e-12);
  }
  SUBCASE("symmetric for random inputs") {
    p.search_radius = 1;
    const Volume t = texture(g, 5);
    std::vector<WarpedAtlas> atlases;
    for (int a = 0; a < 4; ++a) atlases.push_back({texture(g, 10 + a), LabelMap(g, kJoint, 0), "a"});
    const DependencyMatrix m = dependency_matrix(t, atlases, x, p);
    CHECK((m - m.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("uniform-weight votes") {
  const Grid g = cube(6);
  const Volume t = texture(g, 7);
  FusionParams p;
  p.patch_radius = 1;
  p.search_radius = 1;
  const VoxelIndex x{3, 3, 3};

  std::vector<WarpedAtlas> atlases(3, WarpedAtlas{t, LabelMap(g, kJoint, 0), "a"});
  for (int a = 0; a < 3; ++a) atlases[a].source_id = "a" + std::to_string(a);

  SUBCASE("votes 1, 1, 2 give 1") {
    atlases[0].labels(x) = 1;
    atlases[1].labels(x) = 1;
    atlases[2].labels(x) = 2;
    CHECK(fuse_labels(atlases, t, p)(x) == 1);
  }
  SUBCASE("vertebra, rib, rib gives rib") {
    atlases[0].labels(x) = 1;
    atlases[1].labels(x) = 2;
    atlases[2].labels(x) = 2;
    const LabelMap fused = fuse_labels(atlases, t, p);
    CHECK(fused(x) == 2);
    CHECK(extract_structure(fused, 1)(x) == 0);
  }
  SUBCASE("unanimous label") {
    for (auto& a : atlases) a.labels(x) = 2;
    const LabelMap fused = fuse_labels(atlases, t, p);
    CHECK(fused(x) == 2);
    CHECK(count_foreground(fused) == 1);
  }
  SUBCASE("two-way tie goes to background") {
    atlases.pop_back();
    atlases[0].labels(x) = 1;
    CHECK(fuse_labels(atlases, t, p)(x) == 0);
  }
  SUBCASE("two-way tie between labels goes to the smaller id") {
    atlases.pop_back();
    atlases[0].labels(x) = 2;
    atlases[1].labels(x) = 1;
    CHECK(fuse_labels(atlases, t, p)(x) == 1);
  }
}

TEST_CASE("fusion is invariant under atlas permutation") {
  const Grid g = cube(9);
  const Volume t = texture(g, 31);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> lab(0, 2);
  std::vector<WarpedAtlas> atlases;
  for (int a = 0; a < 4; ++a) {
    LabelMap l(g, kJoint, 0);
    for (std::size_t o = 0; o < l.size(); ++o) l[o] = static_cast<Label>(lab(rng));
    atlases.push_back({texture(g, 40 + a), l, "atlas" + std::to_string(a)});
  }
  FusionParams p;
  p.patch_radius = 1;
  p.search_radius = 1;
  const LabelMap ref = fuse_labels(atlases, t, p);
  std::vector<int> order{0, 1, 2, 3};
  while (std::next_permutation(order.begin(), order.end())) {
    std::vector<WarpedAtlas> perm;
    for (int i : order) perm.push_back(atlases[i]);
    REQUIRE(fuse_labels(perm, t, p) == ref);
  }
}

TEST_CASE("extract_structure") {
  const Grid g = cube(4);
  LabelMap m(g, kJoint, 0);
  CHECK(count_foreground(extract_structure(m, 1)) == 0);
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> lab(0, 2);
  for (std::size_t o = 0; o < m.size(); ++o) m[o] = static_cast<Label>(lab(rng));
  const LabelMap rib = extract_structure(m, 2);
  for (std::size_t o = 0; o < m.size(); ++o) CHECK(rib[o] == (m[o] == 2 ? 2 : 0));
  CHECK(rib.legend() == Legend{{0, "background"}, {2, "rib"}});
}

TEST_CASE("fusion input validation") {
  const Grid g = cube(4);
  FusionParams p;
  p.patch_radius = 0;
  CHECK_THROWS(p.validate());
  Grid other = cube(5);
  const WarpedAtlas bad{Volume(g), LabelMap(other, kJoint, 0), "x"};
  CHECK_THROWS(bad.validate());
  CHECK_THROWS(fuse_labels({}, Volume(g), FusionParams{}));
}
