#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "jlf/fusion.hpp"
#include "jlf/metrics.hpp"
#include "jlf/nifti_io.hpp"
#include "jlf/phantom.hpp"
#include "jlf/postprocess.hpp"
#include "jlf/registration.hpp"

namespace jlf {

enum class AtlasMode { vertebra_only, joint_vertebra_rib, bundled };

std::string to_string(AtlasMode mode);
AtlasMode parse_atlas_mode(const std::string& text);

enum class Stage { config, load, registration, fusion, postprocess, evaluation, write };

/// Process exit code for a failure in `stage` (config 1 ... write 7).
int exit_code(Stage stage);
std::string to_string(Stage stage);

class PipelineError : public std::runtime_error {
 public:
  PipelineError(Stage stage, const std::string& what)
      : std::runtime_error("[" + to_string(stage) + "] " + what), stage_(stage) {}
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

struct RunConfig {
  std::filesystem::path manifest;
  AtlasMode mode = AtlasMode::joint_vertebra_rib;
  Label target_label = kVertebra;
  RegistrationParams registration;
  bool deformable = true;  // B-spline stage after the affine
  FusionParams fusion;
  PostprocessParams postprocess;
  EvalOptions evaluation;
  std::filesystem::path output_dir = "out";
  int jobs = 0;  // 0: library default
  std::filesystem::path trace_dir;  // empty: no per-stage dumps
  std::uint64_t seed = 0;

  void validate() const;
};

/// Relative paths resolve against `base_dir`. Missing fields keep defaults.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
std::string dump_run_config(const RunConfig& config);

// ---------------------------------------------------------------------------
// In-memory stages

struct AtlasInput {
  std::string id;
  Volume image;
  LabelMap labels;
};

struct RegisteredAtlas {
  std::string id;
  AffineTransform affine;
  BSplineGrid deformation;  // affine embedded; zero displacements when not deformable
  Volume image;             // warped onto the target grid
  LabelMap labels;          // all atlas labels, warped
  bool converged = false;
};

/// Affine then (optionally) B-spline registration of every atlas to `target`,
/// atlases in parallel.
std::vector<RegisteredAtlas> register_atlases(const Volume& target, const std::vector<AtlasInput>& atlases,
                                              const RegistrationParams& params, bool deformable = true);

/// Labels an atlas contributes in `mode`: the target label only, the target
/// plus every "rib*" label, or every "vertebra*" label.
LabelMap select_labels(const LabelMap& labels, AtlasMode mode, Label target_label);

struct Segmentation {
  LabelMap consensus;
  PostprocessResult post;
  std::vector<Label> structure_ids;  // parallel to post.masks
  /// Trace file stems: "label<id>", plus "_part<k>" for split neighbour labels.
  std::vector<std::string> structure_tags;
  LabelMap mask;                      // final binary mask of the target label
};

Segmentation segment_registered(const Volume& target, const std::vector<RegisteredAtlas>& atlases,
                                AtlasMode mode, Label target_label, const FusionParams& fusion,
                                const PostprocessParams& postprocess);

/// Ground truth reduced to the target label, plus substructure masks.
CaseReport evaluate_case(const LabelMap& mask, const LabelMap& ground_truth, Label target_label,
                         const std::map<std::string, LabelMap>& substructures, const EvalOptions& options,
                         const std::string& case_id);

// ---------------------------------------------------------------------------
// File-level drivers

struct CaseOutput {
  std::string id;
  LabelMap mask;
  std::optional<CaseReport> report;
};

struct RunOutput {
  std::vector<CaseOutput> cases;
  EvalReport report;  // cases with ground truth only
};

/// Whole pipeline for every manifest target. Writes under config.output_dir:
/// <case>/transforms, <case>/warped, <case>/consensus.nii, <case>/mask.nii,
/// evaluation.csv / evaluation.md (when ground truth exists), run_summary.json.
RunOutput run_segment(const RunConfig& config);

struct ComparisonRow {
  std::string case_id;
  RegionMetrics v;
  RegionMetrics vr;
  double delta_dice = 0.0;     // vr - v
  double delta_asd = 0.0;
  double delta_asd_max = 0.0;
  bool vr_reduces_asd_max = false;
};

struct Comparison {
  EvalReport v;
  EvalReport vr;
  std::vector<ComparisonRow> rows;  // whole-structure metrics per case
};

Comparison compare_reports(const EvalReport& v, const EvalReport& vr);
std::string comparison_markdown(const Comparison& c);
std::string comparison_csv(const Comparison& c);

/// Runs both configurations, sharing registrations when they agree on
/// everything but the atlas mode. Writes comparison.md / comparison.csv plus
/// each run's artifacts under <output_dir>/<mode>.
Comparison run_compare(const RunConfig& config_v, const RunConfig& config_vr);

// ---------------------------------------------------------------------------
// Overlays

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // RGB, row-major, top row first

  std::array<std::uint8_t, 3> at(int x, int y) const {
    const std::size_t o = 3 * (static_cast<std::size_t>(y) * width + x);
    return {pixels[o], pixels[o + 1], pixels[o + 2]};
  }
};

/// Slice `index` along `axis` with the target windowed to its min/max and the
/// in-slice contours of gt (yellow), the vertebra-only result (red) and the
/// joint result (blue), drawn in that order. Empty masks draw nothing.
RgbImage render_overlay(const Volume& target, const Image<Label>& gt, const Image<Label>& mask_v,
                        const Image<Label>& mask_vr, int axis, int index);

/// 8-bit RGB PNG.
void write_png(const RgbImage& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const RgbImage& image);

// ---------------------------------------------------------------------------
// Phantom suites

struct SuiteSpec {
  PhantomSpec base;
  int targets = 10;
  int atlases = 5;
  double atlas_deform = 1.5;   // mm
  double target_deform = 1.5;  // mm
  double shift_jitter = 2.0;   // mm, uniform per axis
  double rotation_jitter = 3.0;  // degrees about z
  std::uint64_t seed = 7;
};

struct PhantomCase {
  std::string id;
  PhantomSpec spec;
  Phantom phantom;
  std::map<std::string, LabelMap> substructures;
};

struct PhantomSuite {
  std::vector<AtlasPhantom> atlases;
  std::vector<PhantomCase> targets;
};

PhantomSuite make_phantom_suite(const SuiteSpec& spec);

/// NIfTI files plus manifest.json under `dir`; returns the manifest path.
std::filesystem::path write_phantom_suite(const PhantomSuite& suite, const std::filesystem::path& dir);

}  // namespace jlf
