#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "jlf/image.hpp"

namespace jlf {

namespace fs = std::filesystem;

enum class NiftiErrorCode {
  io,
  truncated,
  bad_header_size,
  big_endian,
  bad_magic,
  bad_dimension,
  unsupported_datatype,
  bad_labels,
};

class NiftiError : public std::runtime_error {
 public:
  NiftiError(NiftiErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  NiftiErrorCode code() const { return code_; }

 private:
  NiftiErrorCode code_;
};

namespace nifti {
inline constexpr int kHeaderSize = 348;
inline constexpr int kVoxOffset = 352;
inline constexpr short kUint8 = 2;
inline constexpr short kInt16 = 4;
inline constexpr short kFloat32 = 16;
}  // namespace nifti

/// Decoded single-file NIfTI-1: geometry plus scaled intensities and the
/// on-disk datatype.
struct NiftiImage {
  Grid grid;
  short datatype = nifti::kFloat32;
  std::vector<double> values;  // scl_slope/scl_inter already applied
};

NiftiImage read_nifti_raw(const fs::path& path);

/// Float32 file -> Volume; integer file -> LabelMap (legend from the sidecar
/// when present, generated "label_<id>" names otherwise).
std::variant<Volume, LabelMap> read_nifti(const fs::path& path);

Volume read_volume(const fs::path& path);
LabelMap read_labels(const fs::path& path);

/// float32 payload.
void write_nifti(const Volume& volume, const fs::path& path);
/// uint8 when every id fits, int16 otherwise; legend goes to the sidecar.
void write_nifti(const LabelMap& labels, const fs::path& path);

/// `<dir>/<stem>.labels.json` for `<dir>/<stem>.nii`.
fs::path legend_sidecar_path(const fs::path& nifti_path);
void write_legend(const Legend& legend, const fs::path& path);
std::optional<Legend> read_legend(const fs::path& path);

// ---------------------------------------------------------------------------
// Atlas manifest

enum class ManifestErrorCode { malformed, missing_file, legend_conflict };

class ManifestError : public std::runtime_error {
 public:
  ManifestError(ManifestErrorCode code, const std::string& what, fs::path path = {})
      : std::runtime_error(what), code_(code), path_(std::move(path)) {}
  ManifestErrorCode code() const { return code_; }
  const fs::path& path() const { return path_; }

 private:
  ManifestErrorCode code_;
  fs::path path_;
};

struct AtlasEntry {
  std::string id;
  fs::path image;
  fs::path labels;
  Legend legend;
};

struct TargetEntry {
  std::string id;
  fs::path image;
  std::optional<fs::path> ground_truth;
  std::map<std::string, fs::path> substructures;
};

struct AtlasManifest {
  std::vector<AtlasEntry> atlases;
  std::vector<TargetEntry> targets;
  Legend legend;  // union of the atlas legends
};

/// Parses the manifest, resolves paths relative to its directory, probes every
/// referenced file and checks that legends agree on shared ids.
AtlasManifest load_manifest(const fs::path& path);

/// Writes paths relative to the manifest's directory when possible.
void save_manifest(const AtlasManifest& manifest, const fs::path& path);

}  // namespace jlf
