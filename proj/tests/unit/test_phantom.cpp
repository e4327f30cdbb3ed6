#include <cmath>

#include "doctest.h"
#include "jlf/phantom.hpp"
#include "json.hpp"

using namespace jlf;

namespace {

PhantomSpec quiet() {
  PhantomSpec s;
  s.noise = 0.0;
  s.smoothing = 0.0;
  return s;
}

std::size_t count(const LabelMap& m, Label l) {
  std::size_t n = 0;
  for (std::size_t o = 0; o < m.size(); ++o) n += m[o] == l;
  return n;
}

bool six_adjacent(const LabelMap& m, Label a, Label b) {
  const Grid& g = m.grid();
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i + 1 < g.dims[0]; ++i) {
        const Label p = m(i, j, k);
        if ((p == a && m(i + 1, j, k) == b) || (p == b && m(i + 1, j, k) == a)) return true;
        if (j + 1 < g.dims[1] && ((p == a && m(i, j + 1, k) == b) || (p == b && m(i, j + 1, k) == a))) return true;
        if (k + 1 < g.dims[2] && ((p == a && m(i, j, k + 1) == b) || (p == b && m(i, j, k + 1) == a))) return true;
      }
  return false;
}

}  // namespace

TEST_CASE("phantoms are deterministic") {
  PhantomSpec s;
  s.deform_magnitude = 1.0;
  s.deform_seed = 9;
  const Phantom a = make_phantom(s), b = make_phantom(s);
  CHECK(a.image == b.image);
  CHECK(a.labels == b.labels);
  s.seed = 2;
  CHECK(!(make_phantom(s).image == a.image));
  CHECK(make_phantom(s).labels == a.labels);
}

TEST_CASE("label census") {
  const Phantom p = make_phantom(quiet());
  CHECK(p.labels.legend() == Legend{{0, "background"}, {1, "vertebra"}, {2, "rib"}});
  CHECK(count(p.labels, kVertebra) > 2000);
  CHECK(count(p.labels, kRib) > 300);
  CHECK(count(p.labels, 3) == 0);

  PhantomSpec n = quiet();
  n.dims = {80, 56, 64};
  n.neighbour_spacing = 18.0;
  const Phantom q = make_phantom(n);
  CHECK(count(q.labels, kVertebraSuperior) > 1000);
  CHECK(count(q.labels, kVertebraInferior) == count(q.labels, kVertebraSuperior));
}

TEST_CASE("rib gap controls contact") {
  PhantomSpec s = quiet();
  s.rib_gap = 0.0;
  CHECK(six_adjacent(make_phantom(s).labels, kVertebra, kRib));
  s.rib_gap = 2.0;
  CHECK(!six_adjacent(make_phantom(s).labels, kVertebra, kRib));
}

TEST_CASE("noise-free labels follow the analytic body") {
  const PhantomSpec s = quiet();
  const Phantom p = make_phantom(s);
  const Grid& g = p.labels.grid();
  const Vec3 c = g.center();
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const Vec3 q = (g.world(i, j, k) - c - Vec3(0, s.body_offset, 0)).cwiseQuotient(s.body_radii);
        const double r = q.norm();
        // within one voxel of the ellipsoid surface either answer is allowed
        if (r < 1.0 - 1.0 / s.body_radii.minCoeff()) CHECK(p.labels(i, j, k) == kVertebra);
        if (r < 1.0 - 1.0 / s.body_radii.minCoeff()) CHECK(p.image(i, j, k) > s.tissue);
      }
  CHECK(p.image(0, 0, 0) == doctest::Approx(s.tissue));
  const VoxelIndex centre{40, static_cast<int>(std::lround(27.5 + s.body_offset)), 18};
  CHECK(p.image(centre) == doctest::Approx(s.bone));
}

TEST_CASE("zero deformation reproduces the base") {
  PhantomSpec s = quiet();
  const Phantom base = make_phantom(s);
  s.deform_seed = 5;
  CHECK(make_phantom(s).labels == base.labels);
  s.deform_magnitude = 1.5;
  CHECK(!(make_phantom(s).labels == base.labels));
}

TEST_CASE("atlas family") {
  const PhantomSpec s = quiet();
  const auto fam = make_atlas_family(s, 5, 1.5, 42);
  REQUIRE(fam.size() == 5);
  for (std::size_t a = 0; a < fam.size(); ++a) {
    CHECK(fam[a].spec.deform_seed == derive_seed(42, a));
    for (std::size_t b = 0; b < a; ++b) CHECK(!(fam[a].joint == fam[b].joint));
    CHECK(fam[a].vertebra == vertebra_only(fam[a].joint));
  }
  const auto again = make_atlas_family(s, 5, 1.5, 42);
  CHECK(again[3].image == fam[3].image);
  CHECK_THROWS(make_atlas_family(s, 0, 1.0, 1));
}

TEST_CASE("vertebra_only drops the rib") {
  const LabelMap joint = make_phantom(quiet()).labels;
  const LabelMap v = vertebra_only(joint);
  CHECK(v.legend().count(kRib) == 0);
  CHECK(count(v, kRib) == 0);
  for (std::size_t o = 0; o < joint.size(); ++o)
    if (joint[o] != kRib) CHECK(v[o] == joint[o]);
}

TEST_CASE("substructures partition the grid") {
  const PhantomSpec s = quiet();
  const auto subs = make_substructures(s);
  REQUIRE(subs.size() == 3);
  const std::size_t n = subs.at("VB").size();
  for (std::size_t o = 0; o < n; ++o) CHECK(subs.at("VB")[o] + subs.at("TP")[o] + subs.at("SP")[o] == 1);
}

TEST_CASE("phantom parameters json round trip and validation") {
  PhantomSpec s;
  s.shift = Vec3(1.25, -0.5, 0.75);
  s.rotation_z_deg = 2.5;
  s.seed = 1234567890123ULL;
  s.rib_gap = 6.0;
  const PhantomSpec r = parse_phantom_spec(dump_phantom_spec(s));
  CHECK(dump_phantom_spec(r) == dump_phantom_spec(s));
  CHECK(r.shift == s.shift);
  CHECK(r.seed == s.seed);
  CHECK(parse_phantom_spec("{}").dims == PhantomSpec{}.dims);
  CHECK_THROWS(parse_phantom_spec(R"({"rib_gap": -1})"));
  CHECK_THROWS(parse_phantom_spec(R"({"bone": 10, "tissue": 40})"));
  CHECK_THROWS(parse_phantom_spec(R"({"dims": [30, 30, 30]})"));
}

TEST_CASE("derive_seed") {
  CHECK(derive_seed(1, 0) == derive_seed(1, 0));
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  // SplitMix64 reference: seed 0, first output.
  CHECK(derive_seed(0, 0) == 0xe220a8397b1dcdafULL);
}
