#include "jlf/transform_io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "json.hpp"

namespace jlf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json matrix_json(const Mat4& m) {
  json a = json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) a.push_back(m(r, c));
  return a;
}

Mat4 matrix_from(const json& a) {
  if (!a.is_array() || a.size() != 16) throw std::runtime_error("transform: matrix needs 16 numbers");
  Mat4 m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = a.at(4 * r + c).get<double>();
  return m;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("transform: cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("transform: malformed " + path.string() + ": " + e.what());
  }
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("transform: cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

void save_affine(const AffineTransform& transform, const fs::path& path) {
  write_json({{"type", "affine"}, {"matrix", matrix_json(transform.matrix())}}, path);
}

AffineTransform load_affine(const fs::path& path) {
  const json j = read_json(path);
  if (j.value("type", "") != "affine") throw std::runtime_error("transform: not an affine file");
  return AffineTransform(matrix_from(j.at("matrix")));
}

void save_bspline(const BSplineGrid& grid, const fs::path& path) {
  fs::path raw = path;
  raw.replace_extension(".disp.raw");
  json j = {{"type", "bspline"},
            {"dims", {grid.dims()[0], grid.dims()[1], grid.dims()[2]}},
            {"spacing", {grid.spacing()[0], grid.spacing()[1], grid.spacing()[2]}},
            {"origin", {grid.origin()[0], grid.origin()[1], grid.origin()[2]}},
            {"affine", matrix_json(grid.affine().matrix())},
            {"displacements", raw.filename().string()}};
  write_json(j, path);

  std::vector<char> bytes;
  bytes.reserve(grid.size() * 12);
  for (const Vec3& d : grid.displacements())
    for (int a = 0; a < 3; ++a) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(d[a]));
      for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  std::ofstream out(raw, std::ios::binary);
  if (!out) throw std::runtime_error("transform: cannot write " + raw.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

BSplineGrid load_bspline(const fs::path& path) {
  const json j = read_json(path);
  if (j.value("type", "") != "bspline") throw std::runtime_error("transform: not a bspline file");
  std::array<int, 3> dims{};
  Vec3 spacing, origin;
  for (int a = 0; a < 3; ++a) {
    dims[a] = j.at("dims").at(a).get<int>();
    spacing[a] = j.at("spacing").at(a).get<double>();
    origin[a] = j.at("origin").at(a).get<double>();
  }
  BSplineGrid grid(dims, spacing, origin, AffineTransform(matrix_from(j.at("affine"))));

  const fs::path raw = path.parent_path() / j.at("displacements").get<std::string>();
  std::ifstream in(raw, std::ios::binary);
  if (!in) throw std::runtime_error("transform: cannot open " + raw.string());
  std::vector<unsigned char> bytes(grid.size() * 12);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size())
    throw std::runtime_error("transform: truncated displacement file " + raw.string());
  for (std::size_t c = 0; c < grid.size(); ++c)
    for (int a = 0; a < 3; ++a) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[12 * c + 4 * a + b]) << (8 * b);
      grid.displacements()[c][a] = std::bit_cast<float>(bits);
    }
  return grid;
}

}  // namespace jlf
