#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "jlf/image.hpp"

namespace jlf {

/// Synthetic vertebra with a rib beside each transverse-process tip. Lengths
/// are in mm relative to the structure centre; x is lateral, y runs from
/// posterior (negative, spinous process) to anterior (positive, body), z is
/// the spine axis.
struct PhantomSpec {
  std::array<int, 3> dims{80, 56, 36};
  Vec3 spacing = Vec3::Ones();
  /// Structure centre offset from the grid centre (mm).
  Vec3 shift = Vec3::Zero();
  double rotation_z_deg = 0.0;

  Vec3 body_radii{9.0, 7.0, 8.0};
  double body_offset = 6.0;       // body centre at y = +body_offset
  double pedicle_x = 5.0;
  double arch_y = -6.0;           // lamina and transverse processes lie on y = arch_y
  double process_radius = 3.0;
  double tp_length = 15.0;        // capsule axis half-length along x
  double sp_length = 12.0;
  double rib_radius = 2.5;
  double rib_gap = 2.0;           // voxels between process tip and rib surface
  Vec3 rib_direction{6.0, 24.0, 0.0};
  /// z distance of the superior/inferior neighbour vertebrae; 0 disables them.
  double neighbour_spacing = 0.0;

  double bone = 400.0;
  double tissue = 40.0;
  double smoothing = 1.0;  // voxels
  double noise = 10.0;
  std::uint64_t seed = 1;

  double deform_magnitude = 0.0;  // std of control displacements (mm)
  double deform_spacing = 16.0;   // control spacing (mm)
  std::uint64_t deform_seed = 0;

  void validate() const;
};

PhantomSpec parse_phantom_spec(const std::string& json_text);
std::string dump_phantom_spec(const PhantomSpec& spec);

/// Legend ids.
inline constexpr Label kVertebra = 1;
inline constexpr Label kRib = 2;
inline constexpr Label kVertebraSuperior = 3;
inline constexpr Label kVertebraInferior = 4;

struct Phantom {
  Volume image;
  LabelMap labels;  // joint legend: background, vertebra, rib (+ neighbours)
};

Phantom make_phantom(const PhantomSpec& spec);

/// VB / TP / SP partition of space in structure coordinates.
std::map<std::string, LabelMap> make_substructures(const PhantomSpec& spec);

/// Joint labels with every rib voxel relabelled 0 and the rib dropped from the legend.
LabelMap vertebra_only(const LabelMap& joint);

struct AtlasPhantom {
  PhantomSpec spec;
  Volume image;
  LabelMap joint;
  LabelMap vertebra;
};

/// n copies of `base` under independent random smooth warps of the given
/// magnitude; member i draws its warp from a stream derived from (seed, i).
std::vector<AtlasPhantom> make_atlas_family(const PhantomSpec& base, int n, double deform_magnitude,
                                            std::uint64_t seed);

/// SplitMix64 step, used to derive independent seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace jlf
