#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "jlf/transform_io.hpp"

using namespace jlf;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("jlfseg_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("affine files round trip exactly") {
  const fs::path dir = scratch_dir("affine");
  const AffineTransform a =
      AffineTransform::rotation(Vec3(1.5, -2, 7), Vec3(0.3, 0.4, 1).normalized(), 0.37) *
      AffineTransform::translation(Vec3(0.1, 1e-9, -123.456789));
  save_affine(a, dir / "a.json");
  CHECK(load_affine(dir / "a.json").matrix() == a.matrix());

  std::ofstream(dir / "wrong.json") << R"({"type": "bspline"})";
  CHECK_THROWS(load_affine(dir / "wrong.json"));
  std::ofstream(dir / "short.json") << R"({"type": "affine", "matrix": [1, 0, 0]})";
  CHECK_THROWS(load_affine(dir / "short.json"));
  CHECK_THROWS(load_affine(dir / "absent.json"));
}

TEST_CASE("b-spline files round trip") {
  const fs::path dir = scratch_dir("bspline");
  BSplineGrid g({5, 6, 4}, Vec3(8, 7.5, 10), Vec3(-9, -11, -12), AffineTransform::translation(Vec3(1, 2, 3)));
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n(0, 2);
  for (Vec3& d : g.displacements()) d = Vec3(n(rng), n(rng), n(rng));
  save_bspline(g, dir / "b.json");
  CHECK(fs::file_size(dir / "b.disp.raw") == g.size() * 12);

  const BSplineGrid r = load_bspline(dir / "b.json");
  CHECK(r.dims() == g.dims());
  CHECK(r.spacing() == g.spacing());
  CHECK(r.origin() == g.origin());
  CHECK(r.affine().matrix() == g.affine().matrix());
  CHECK(r.displacements() == g.displacements());

  // Little-endian float32, x component of the first control point first.
  std::ifstream raw(dir / "b.disp.raw", std::ios::binary);
  unsigned char b[4];
  raw.read(reinterpret_cast<char*>(b), 4);
  const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  CHECK(std::bit_cast<float>(bits) == static_cast<float>(g.displacements()[0][0]));

  fs::resize_file(dir / "b.disp.raw", 40);
  CHECK_THROWS(load_bspline(dir / "b.json"));
}
