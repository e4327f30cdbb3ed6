#include "jlf/phantom.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>

#include "json.hpp"

#include "jlf/filters.hpp"
#include "jlf/parallel.hpp"
#include "jlf/transform.hpp"

namespace jlf {

using nlohmann::json;

void PhantomSpec::validate() const {
  Grid{dims, spacing, Vec3::Zero()}.validate();
  if (rib_gap < 0.0) throw std::invalid_argument("phantom: rib gap must be >= 0");
  if (!(bone > tissue)) throw std::invalid_argument("phantom: bone must be brighter than tissue");
  if (noise < 0.0 || smoothing < 0.0 || deform_magnitude < 0.0)
    throw std::invalid_argument("phantom: noise, smoothing and deform magnitude must be >= 0");
  if (!(deform_spacing > 0.0)) throw std::invalid_argument("phantom: deform spacing must be positive");
  if ((body_radii.array() <= 0.0).any() || !(process_radius > 0.0) || !(rib_radius > 0.0))
    throw std::invalid_argument("phantom: radii must be positive");
  // Everything must fit inside the field of view with one voxel to spare.
  const Vec3 half = 0.5 * Vec3(dims[0] - 1, dims[1] - 1, dims[2] - 1).cwiseProduct(spacing);
  const double tip = tp_length + process_radius;
  const double rib_start = tip + rib_gap * spacing[0] + rib_radius;
  const double lateral = rib_start + std::abs(rib_direction[0]) + rib_radius;
  const double anterior = std::max(body_offset + body_radii[1], arch_y + rib_direction[1] + rib_radius);
  const double posterior = -arch_y + sp_length + process_radius;
  const double axial = std::max(body_radii[2], process_radius) + neighbour_spacing;
  if (lateral + std::abs(shift[0]) > half[0] - spacing[0] || anterior + std::abs(shift[1]) > half[1] - spacing[1] ||
      posterior + std::abs(shift[1]) > half[1] - spacing[1] || axial + std::abs(shift[2]) > half[2] - spacing[2])
    throw std::invalid_argument("phantom: structures do not fit inside the grid");
}

namespace {

json vec_json(const Vec3& v) { return {v[0], v[1], v[2]}; }
Vec3 vec_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

PhantomSpec parse_phantom_spec(const std::string& text) {
  const json j = json::parse(text);
  PhantomSpec s;
  if (j.contains("dims")) s.dims = {j["dims"].at(0).get<int>(), j["dims"].at(1).get<int>(), j["dims"].at(2).get<int>()};
  if (j.contains("spacing")) s.spacing = vec_from(j["spacing"]);
  if (j.contains("shift")) s.shift = vec_from(j["shift"]);
  if (j.contains("body_radii")) s.body_radii = vec_from(j["body_radii"]);
  if (j.contains("rib_direction")) s.rib_direction = vec_from(j["rib_direction"]);
  auto num = [&](const char* key, double& field) {
    if (j.contains(key)) field = j[key].get<double>();
  };
  num("rotation_z_deg", s.rotation_z_deg);
  num("body_offset", s.body_offset);
  num("pedicle_x", s.pedicle_x);
  num("arch_y", s.arch_y);
  num("process_radius", s.process_radius);
  num("tp_length", s.tp_length);
  num("sp_length", s.sp_length);
  num("rib_radius", s.rib_radius);
  num("rib_gap", s.rib_gap);
  num("neighbour_spacing", s.neighbour_spacing);
  num("bone", s.bone);
  num("tissue", s.tissue);
  num("smoothing", s.smoothing);
  num("noise", s.noise);
  num("deform_magnitude", s.deform_magnitude);
  num("deform_spacing", s.deform_spacing);
  if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("deform_seed")) s.deform_seed = j["deform_seed"].get<std::uint64_t>();
  s.validate();
  return s;
}

std::string dump_phantom_spec(const PhantomSpec& s) {
  const json j = {{"dims", {s.dims[0], s.dims[1], s.dims[2]}},
                  {"spacing", vec_json(s.spacing)},
                  {"shift", vec_json(s.shift)},
                  {"rotation_z_deg", s.rotation_z_deg},
                  {"body_radii", vec_json(s.body_radii)},
                  {"body_offset", s.body_offset},
                  {"pedicle_x", s.pedicle_x},
                  {"arch_y", s.arch_y},
                  {"process_radius", s.process_radius},
                  {"tp_length", s.tp_length},
                  {"sp_length", s.sp_length},
                  {"rib_radius", s.rib_radius},
                  {"rib_gap", s.rib_gap},
                  {"rib_direction", vec_json(s.rib_direction)},
                  {"neighbour_spacing", s.neighbour_spacing},
                  {"bone", s.bone},
                  {"tissue", s.tissue},
                  {"smoothing", s.smoothing},
                  {"noise", s.noise},
                  {"seed", s.seed},
                  {"deform_magnitude", s.deform_magnitude},
                  {"deform_spacing", s.deform_spacing},
                  {"deform_seed", s.deform_seed}};
  return j.dump(2);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

// Box-Muller on mt19937_64 so the stream is identical on every platform.
class Normal {
 public:
  explicit Normal(std::uint64_t seed) : gen_(seed) {}
  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform(), u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

struct Shapes {
  const PhantomSpec& s;

  bool vertebra(const Vec3& p) const {
    const Vec3 q = (p - Vec3(0, s.body_offset, 0)).cwiseQuotient(s.body_radii);
    if (q.squaredNorm() <= 1.0) return true;
    const double r = s.process_radius;
    for (double side : {-1.0, 1.0})
      if (segment_distance(p, {side * s.pedicle_x, 0, 0}, {side * s.pedicle_x, s.arch_y, 0}) <= r) return true;
    if (segment_distance(p, {-s.tp_length, s.arch_y, 0}, {s.tp_length, s.arch_y, 0}) <= r) return true;
    return segment_distance(p, {0, s.arch_y, 0}, {0, s.arch_y - s.sp_length, 0}) <= r;
  }

  bool rib(const Vec3& p) const {
    const double start = s.tp_length + s.process_radius + s.rib_gap * s.spacing[0] + s.rib_radius;
    for (double side : {-1.0, 1.0}) {
      const Vec3 p0(side * start, s.arch_y, 0);
      const Vec3 p1 = p0 + Vec3(side * s.rib_direction[0], s.rib_direction[1], s.rib_direction[2]);
      if (segment_distance(p, p0, p1) <= s.rib_radius) return true;
    }
    return false;
  }

  Label label(const Vec3& p) const {
    if (vertebra(p)) return kVertebra;
    if (s.neighbour_spacing > 0.0) {
      if (vertebra(p - Vec3(0, 0, s.neighbour_spacing))) return kVertebraSuperior;
      if (vertebra(p + Vec3(0, 0, s.neighbour_spacing))) return kVertebraInferior;
    }
    return rib(p) ? kRib : 0;
  }
};

// Maps a grid point to structure coordinates: random warp, then the inverse
// of the rigid placement.
struct Placement {
  Grid grid;
  Vec3 center;
  Mat3 rotation_inv;
  std::optional<BSplineGrid> warp;

  explicit Placement(const PhantomSpec& s) {
    grid = Grid{s.dims, s.spacing, Vec3::Zero()};
    center = grid.center() + s.shift;
    const double a = s.rotation_z_deg * std::numbers::pi / 180.0;
    Mat3 r;
    r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
    rotation_inv = r.transpose();
    if (s.deform_magnitude > 0.0) {
      warp = BSplineGrid::covering(grid, Vec3::Constant(s.deform_spacing));
      Normal normal(s.deform_seed);
      for (Vec3& d : warp->displacements())
        for (int c = 0; c < 3; ++c) d[c] = s.deform_magnitude * normal();
    }
  }

  Vec3 local(const Vec3& y) const {
    const Vec3 w = warp ? Vec3(y + warp->displacement(y)) : y;
    return rotation_inv * (w - center);
  }
};

Legend phantom_legend(const PhantomSpec& s) {
  Legend l{{0, "background"}, {kVertebra, "vertebra"}, {kRib, "rib"}};
  if (s.neighbour_spacing > 0.0) {
    l[kVertebraSuperior] = "vertebra_superior";
    l[kVertebraInferior] = "vertebra_inferior";
  }
  return l;
}

}  // namespace

Phantom make_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Placement place(spec);
  const Shapes shapes{spec};
  const Grid& g = place.grid;

  LabelMap labels(g, phantom_legend(spec), 0);
  Volume occupancy(g, 0.0f);
  parallel_for(0, g.dims[2], [&](int k) {
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        labels(i, j, k) = shapes.label(place.local(g.world(i, j, k)));
        int inside = 0;
        for (int c = 0; c < 8; ++c) {
          const Vec3 sub = g.world(i + ((c & 1) ? 0.25 : -0.25), j + ((c & 2) ? 0.25 : -0.25),
                                   k + ((c & 4) ? 0.25 : -0.25));
          inside += shapes.label(place.local(sub)) != 0;
        }
        occupancy(i, j, k) = static_cast<float>(inside / 8.0);
      }
  });

  Volume image(g, 0.0f);
  for (std::size_t v = 0; v < g.size(); ++v)
    image[v] = static_cast<float>(spec.tissue + occupancy[v] * (spec.bone - spec.tissue));
  if (spec.smoothing > 0.0) image = gaussian_smooth(image, spec.smoothing);
  if (spec.noise > 0.0) {
    Normal normal(spec.seed);
    for (std::size_t v = 0; v < g.size(); ++v) image[v] = static_cast<float>(image[v] + spec.noise * normal());
  }
  return {std::move(image), std::move(labels)};
}

std::map<std::string, LabelMap> make_substructures(const PhantomSpec& spec) {
  spec.validate();
  const Placement place(spec);
  const Grid& g = place.grid;
  std::map<std::string, LabelMap> out;
  for (const char* name : {"VB", "TP", "SP"}) out.emplace(name, LabelMap(g, binary_legend(1, name), 0));
  const double split_y = spec.arch_y + 4.0;
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const Vec3 p = place.local(g.world(i, j, k));
        const char* region = p[1] >= split_y ? "VB" : std::abs(p[0]) >= spec.pedicle_x + 1.0 ? "TP" : "SP";
        out.at(region)(i, j, k) = 1;
      }
  return out;
}

LabelMap vertebra_only(const LabelMap& joint) {
  Legend legend = joint.legend();
  legend.erase(kRib);
  LabelMap out(joint.grid(), legend, 0);
  for (std::size_t v = 0; v < joint.size(); ++v) out[v] = joint[v] == kRib ? 0 : joint[v];
  return out;
}

std::vector<AtlasPhantom> make_atlas_family(const PhantomSpec& base, int n, double deform_magnitude,
                                            std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("atlas family: n must be >= 1");
  if (deform_magnitude < 0.0) throw std::invalid_argument("atlas family: magnitude must be >= 0");
  std::vector<AtlasPhantom> out(n);
  for (int i = 0; i < n; ++i) {
    PhantomSpec s = base;
    s.deform_magnitude = deform_magnitude;
    s.deform_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    Phantom p = make_phantom(s);
    out[i].spec = s;
    out[i].image = std::move(p.image);
    out[i].vertebra = vertebra_only(p.labels);
    out[i].joint = std::move(p.labels);
  }
  return out;
}

}  // namespace jlf
