#include "jlf/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

#include <tbb/global_control.h>

#include "json.hpp"

#include "jlf/parallel.hpp"
#include "jlf/resample.hpp"
#include "jlf/transform_io.hpp"

namespace jlf {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(AtlasMode mode) {
  switch (mode) {
    case AtlasMode::vertebra_only: return "vertebra-only";
    case AtlasMode::joint_vertebra_rib: return "joint-vertebra-rib";
    case AtlasMode::bundled: return "bundled";
  }
  return "?";
}

AtlasMode parse_atlas_mode(const std::string& text) {
  if (text == "vertebra-only" || text == "V") return AtlasMode::vertebra_only;
  if (text == "joint-vertebra-rib" || text == "VR") return AtlasMode::joint_vertebra_rib;
  if (text == "bundled") return AtlasMode::bundled;
  throw std::invalid_argument("unknown atlas mode '" + text + "'");
}

int exit_code(Stage stage) { return static_cast<int>(stage) + 1; }

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::config: return "config";
    case Stage::load: return "load";
    case Stage::registration: return "registration";
    case Stage::fusion: return "fusion";
    case Stage::postprocess: return "postprocess";
    case Stage::evaluation: return "evaluation";
    case Stage::write: return "write";
  }
  return "?";
}

namespace {

template <typename Fn>
auto in_stage(Stage stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(stage, e.what());
  }
}

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

std::optional<tbb::global_control> limit_threads(int jobs) {
  if (jobs <= 0) return std::nullopt;
  return std::make_optional<tbb::global_control>(tbb::global_control::max_allowed_parallelism,
                                                 static_cast<std::size_t>(jobs));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void RunConfig::validate() const {
  registration.validate();
  fusion.validate();
  postprocess.level_set.validate();
  if (postprocess.perceptron_epochs < 1) throw std::invalid_argument("config: perceptron epochs must be >= 1");
  if (target_label == 0) throw std::invalid_argument("config: target label must be non-zero");
  if (jobs < 0) throw std::invalid_argument("config: jobs must be >= 0");
  if (manifest.empty()) throw std::invalid_argument("config: manifest path required");
}

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
  const json j = json::parse(text);
  RunConfig c;
  auto path = [&](const char* key, fs::path& field) {
    if (!j.contains(key)) return;
    fs::path p = j[key].get<std::string>();
    field = p.empty() || p.is_absolute() ? p : base_dir / p;
  };
  path("manifest", c.manifest);
  path("output_dir", c.output_dir);
  path("trace_dir", c.trace_dir);
  if (!j.contains("output_dir")) c.output_dir = base_dir / c.output_dir;
  if (j.contains("mode")) c.mode = parse_atlas_mode(j["mode"].get<std::string>());
  if (j.contains("target_label")) c.target_label = j["target_label"].get<Label>();
  if (j.contains("jobs")) c.jobs = j["jobs"].get<int>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("registration")) {
    const json& r = j["registration"];
    RegistrationParams& p = c.registration;
    p.alpha = r.value("alpha", p.alpha);
    p.bins = r.value("bins", p.bins);
    p.levels = r.value("levels", p.levels);
    p.control_spacing = r.value("control_spacing", p.control_spacing);
    p.affine_iterations = r.value("affine_iterations", p.affine_iterations);
    p.bspline_iterations = r.value("bspline_iterations", p.bspline_iterations);
    p.tolerance = r.value("tolerance", p.tolerance);
    p.affine_step = r.value("affine_step", p.affine_step);
    p.bspline_step = r.value("bspline_step", p.bspline_step);
    p.symmetric_affine = r.value("symmetric_affine", p.symmetric_affine);
    c.deformable = r.value("deformable", c.deformable);
  }
  if (j.contains("fusion")) {
    const json& f = j["fusion"];
    c.fusion.patch_radius = f.value("patch_radius", c.fusion.patch_radius);
    c.fusion.search_radius = f.value("search_radius", c.fusion.search_radius);
    c.fusion.beta = f.value("beta", c.fusion.beta);
    c.fusion.epsilon = f.value("epsilon", c.fusion.epsilon);
  }
  if (j.contains("postprocess")) {
    const json& p = j["postprocess"];
    c.postprocess.perceptron_epochs = p.value("perceptron_epochs", c.postprocess.perceptron_epochs);
    if (p.contains("level_set")) {
      const json& l = p["level_set"];
      LevelSetParams& ls = c.postprocess.level_set;
      ls.iterations = l.value("iterations", ls.iterations);
      ls.time_step = l.value("time_step", ls.time_step);
      ls.smoothing_weight = l.value("smoothing_weight", ls.smoothing_weight);
      ls.edge_weight = l.value("edge_weight", ls.edge_weight);
      ls.band = l.value("band", ls.band);
      ls.log_sigma = l.value("log_sigma", ls.log_sigma);
    }
  }
  if (j.contains("evaluation")) c.evaluation.symmetric_asd = j["evaluation"].value("symmetric_asd", false);
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

std::string dump_run_config(const RunConfig& c) {
  const auto& r = c.registration;
  const auto& l = c.postprocess.level_set;
  const json j = {
      {"manifest", c.manifest.string()},
      {"mode", to_string(c.mode)},
      {"target_label", c.target_label},
      {"output_dir", c.output_dir.string()},
      {"trace_dir", c.trace_dir.string()},
      {"jobs", c.jobs},
      {"seed", c.seed},
      {"registration",
       {{"alpha", r.alpha}, {"bins", r.bins}, {"levels", r.levels}, {"control_spacing", r.control_spacing},
        {"affine_iterations", r.affine_iterations}, {"bspline_iterations", r.bspline_iterations},
        {"tolerance", r.tolerance}, {"affine_step", r.affine_step}, {"bspline_step", r.bspline_step},
        {"symmetric_affine", r.symmetric_affine}, {"deformable", c.deformable}}},
      {"fusion",
       {{"patch_radius", c.fusion.patch_radius}, {"search_radius", c.fusion.search_radius},
        {"beta", c.fusion.beta}, {"epsilon", c.fusion.epsilon}}},
      {"postprocess",
       {{"perceptron_epochs", c.postprocess.perceptron_epochs},
        {"level_set",
         {{"iterations", l.iterations}, {"time_step", l.time_step}, {"smoothing_weight", l.smoothing_weight},
          {"edge_weight", l.edge_weight}, {"band", l.band}, {"log_sigma", l.log_sigma}}}}},
      {"evaluation", {{"symmetric_asd", c.evaluation.symmetric_asd}}}};
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// In-memory stages

std::vector<RegisteredAtlas> register_atlases(const Volume& target, const std::vector<AtlasInput>& atlases,
                                              const RegistrationParams& params, bool deformable) {
  std::vector<RegisteredAtlas> out(atlases.size());
  parallel_for(0, static_cast<int>(atlases.size()), [&](int a) {
    const AtlasInput& in = atlases[a];
    RegisteredAtlas& r = out[a];
    r.id = in.id;
    const AffineResult affine = affine_register(target, in.image, params);
    r.affine = affine.transform;
    r.converged = affine.converged;
    if (deformable) {
      BSplineResult b = bspline_register(target, in.image, affine.transform, params);
      r.deformation = std::move(b.grid);
      r.converged = r.converged && b.converged;
    } else {
      r.deformation = BSplineGrid::covering(target.grid(), target.grid().spacing * 5.0, affine.transform);
    }
    r.image = warp_volume(in.image, r.deformation, target.grid());
    r.labels = warp_labels(in.labels, r.deformation, target.grid());
  });
  return out;
}

LabelMap select_labels(const LabelMap& labels, AtlasMode mode, Label target_label) {
  const auto it = labels.legend().find(target_label);
  if (it == labels.legend().end())
    throw std::invalid_argument("atlas legend lacks target label " + std::to_string(target_label));
  Legend keep{{0, "background"}, {target_label, it->second}};
  for (const auto& [id, name] : labels.legend()) {
    if (id == 0) continue;
    const bool rib = name.rfind("rib", 0) == 0;
    const bool vertebra = name.rfind("vertebra", 0) == 0;
    if ((mode == AtlasMode::joint_vertebra_rib && rib) || (mode == AtlasMode::bundled && vertebra))
      keep.emplace(id, name);
  }
  LabelMap out(labels.grid(), keep, 0);
  for (std::size_t v = 0; v < labels.size(); ++v) out[v] = keep.count(labels[v]) ? labels[v] : 0;
  return out;
}

Segmentation segment_registered(const Volume& target, const std::vector<RegisteredAtlas>& atlases,
                                AtlasMode mode, Label target_label, const FusionParams& fusion,
                                const PostprocessParams& postprocess) {
  Segmentation s;
  s.consensus = in_stage(Stage::fusion, [&] {
    std::vector<WarpedAtlas> warped;
    for (const auto& a : atlases) warped.push_back({a.image, select_labels(a.labels, mode, target_label), a.id});
    return fuse_labels(warped, target, fusion);
  });
  in_stage(Stage::postprocess, [&] {
    std::vector<LabelMap> masks;
    for (const auto& [id, name] : s.consensus.legend()) {
      if (id == 0) continue;
      const Label label = static_cast<Label>(id);
      const std::string tag = "label" + std::to_string(id);
      LabelMap structure = extract_structure(s.consensus, label);
      if (label == target_label) {
        s.structure_ids.push_back(label);
        s.structure_tags.push_back(tag);
        masks.push_back(std::move(structure));
        continue;
      }
      // Neighbour labels may cover several disjoint objects (left and right
      // ribs); each part gets its own front so island removal keeps them all.
      auto parts = connected_components(structure);
      for (std::size_t k = 0; k < parts.size(); ++k) {
        s.structure_ids.push_back(label);
        s.structure_tags.push_back(parts.size() == 1 ? tag : tag + "_part" + std::to_string(k));
        masks.push_back(std::move(parts[k]));
      }
    }
    s.post = postprocess_chain(masks, target, postprocess);
    for (std::size_t i = 0; i < s.structure_ids.size(); ++i)
      if (s.structure_ids[i] == target_label) s.mask = s.post.masks[i];
    return 0;
  });
  return s;
}

CaseReport evaluate_case(const LabelMap& mask, const LabelMap& ground_truth, Label target_label,
                         const std::map<std::string, LabelMap>& substructures, const EvalOptions& options,
                         const std::string& case_id) {
  Image<Label> gt(ground_truth.grid(), 0);
  for (std::size_t v = 0; v < gt.size(); ++v) gt[v] = ground_truth[v] == target_label ? 1 : 0;
  std::map<std::string, Image<Label>> regions;
  for (const auto& [name, m] : substructures) regions.emplace(name, m);
  return evaluate(mask, gt, regions, options, case_id);
}

// ---------------------------------------------------------------------------
// File-level drivers

namespace {

struct LoadedTarget {
  TargetEntry entry;
  Volume image;
  std::optional<LabelMap> ground_truth;
  std::map<std::string, LabelMap> substructures;
};

std::vector<AtlasInput> load_atlases(const AtlasManifest& m) {
  return in_stage(Stage::load, [&] {
    std::vector<AtlasInput> out;
    for (const auto& a : m.atlases) {
      AtlasInput in{a.id, read_volume(a.image), read_labels(a.labels)};
      in.labels.legend() = a.legend;
      check_legend(in.labels);
      if (!(in.image.grid() == in.labels.grid()))
        throw std::runtime_error("atlas " + a.id + ": image and labels differ in grid (" + a.labels.string() + ")");
      out.push_back(std::move(in));
    }
    return out;
  });
}

LoadedTarget load_target(const TargetEntry& e) {
  return in_stage(Stage::load, [&] {
    LoadedTarget t{e, read_volume(e.image), std::nullopt, {}};
    check_finite(t.image);
    if (e.ground_truth) t.ground_truth = read_labels(*e.ground_truth);
    for (const auto& [name, p] : e.substructures) t.substructures.emplace(name, read_labels(p));
    auto same = [&](const Grid& g, const fs::path& p) {
      if (!(g == t.image.grid())) throw std::runtime_error("grid differs from target image: " + p.string());
    };
    if (t.ground_truth) same(t.ground_truth->grid(), *e.ground_truth);
    for (const auto& [name, m] : t.substructures) same(m.grid(), e.substructures.at(name));
    return t;
  });
}

std::vector<RegisteredAtlas> register_stage(const RunConfig& c, const LoadedTarget& t,
                                            const std::vector<AtlasInput>& atlases) {
  return in_stage(Stage::registration,
                  [&] { return register_atlases(t.image, atlases, c.registration, c.deformable); });
}

void write_registration(const fs::path& dir, const std::vector<RegisteredAtlas>& reg) {
  in_stage(Stage::write, [&] {
    fs::create_directories(dir / "transforms");
    fs::create_directories(dir / "warped");
    for (const auto& r : reg) {
      save_affine(r.affine, dir / "transforms" / (r.id + ".affine.json"));
      save_bspline(r.deformation, dir / "transforms" / (r.id + ".bspline.json"));
      write_nifti(r.image, dir / "warped" / (r.id + ".image.nii"));
      write_nifti(r.labels, dir / "warped" / (r.id + ".labels.nii"));
    }
    return 0;
  });
}

const char* kStageNames[] = {"islands", "holes", "collisions", "levelset"};

CaseOutput segment_stage(const RunConfig& c, const LoadedTarget& t, const std::vector<RegisteredAtlas>& reg,
                         const fs::path& case_dir, json& summary) {
  Stopwatch sw;
  PostprocessParams pp = c.postprocess;
  pp.trace = pp.trace || !c.trace_dir.empty();
  Segmentation s = segment_registered(t.image, reg, c.mode, c.target_label, c.fusion, pp);
  summary["timings"]["fusion_postprocess"] = sw.lap();
  summary["collision_fallback"] = s.post.collision_fallback;

  in_stage(Stage::write, [&] {
    fs::create_directories(case_dir);
    write_nifti(s.consensus, case_dir / "consensus.nii");
    write_nifti(s.mask, case_dir / "mask.nii");
    if (!c.trace_dir.empty()) {
      const fs::path td = c.trace_dir / to_string(c.mode) / t.entry.id;
      fs::create_directories(td);
      for (std::size_t m = 0; m < s.post.trace.size(); ++m)
        for (std::size_t st = 0; st < s.post.trace[m].size(); ++st)
          write_nifti(s.post.trace[m][st],
                      td / (s.structure_tags[m] + "_" + kStageNames[st] + ".nii"));
    }
    return 0;
  });
  summary["timings"]["write"] = sw.lap();

  CaseOutput out{t.entry.id, std::move(s.mask), std::nullopt};
  if (t.ground_truth) {
    out.report = in_stage(Stage::evaluation, [&] {
      return evaluate_case(out.mask, *t.ground_truth, c.target_label, t.substructures, c.evaluation, t.entry.id);
    });
    summary["timings"]["evaluation"] = sw.lap();
  }
  return out;
}

void write_reports(const RunConfig& c, const RunOutput& run, const json& summary) {
  in_stage(Stage::write, [&] {
    fs::create_directories(c.output_dir);
    if (!run.report.cases.empty()) {
      write_text(c.output_dir / "evaluation.csv", to_csv(run.report));
      write_text(c.output_dir / "evaluation.md", to_markdown({run.report}));
    }
    write_text(c.output_dir / "run_summary.json", summary.dump(2) + "\n");
    return 0;
  });
}

json summary_header(const RunConfig& c) {
  return {{"mode", to_string(c.mode)}, {"seed", c.seed}, {"jobs", c.jobs}, {"cases", json::array()}};
}

}  // namespace

RunOutput run_segment(const RunConfig& config) {
  in_stage(Stage::config, [&] {
    config.validate();
    return 0;
  });
  const auto threads = limit_threads(config.jobs);
  Stopwatch total;
  const AtlasManifest manifest = in_stage(Stage::load, [&] { return load_manifest(config.manifest); });
  if (manifest.atlases.empty()) throw PipelineError(Stage::load, "manifest lists no atlases");
  const auto atlases = load_atlases(manifest);

  RunOutput run;
  run.report.structure = manifest.legend.count(config.target_label) ? manifest.legend.at(config.target_label)
                                                                     : "structure";
  json summary = summary_header(config);
  for (const auto& entry : manifest.targets) {
    Stopwatch sw;
    json cs = {{"id", entry.id}};
    const LoadedTarget t = load_target(entry);
    cs["timings"]["load"] = sw.lap();
    const auto reg = register_stage(config, t, atlases);
    cs["timings"]["registration"] = sw.lap();
    json conv = json::array();
    for (const auto& r : reg) conv.push_back({{"atlas", r.id}, {"converged", r.converged}});
    cs["registration"] = conv;
    const fs::path case_dir = config.output_dir / entry.id;
    write_registration(case_dir, reg);
    CaseOutput out = segment_stage(config, t, reg, case_dir, cs);
    if (out.report) run.report.cases.push_back(*out.report);
    run.cases.push_back(std::move(out));
    summary["cases"].push_back(cs);
  }
  summary["total_seconds"] = total.lap();
  write_reports(config, run, summary);
  return run;
}

Comparison compare_reports(const EvalReport& v, const EvalReport& vr) {
  Comparison c{v, vr, {}};
  for (const auto& cv : v.cases) {
    const auto it = std::find_if(vr.cases.begin(), vr.cases.end(),
                                 [&](const CaseReport& r) { return r.case_id == cv.case_id; });
    if (it == vr.cases.end()) continue;
    ComparisonRow row;
    row.case_id = cv.case_id;
    row.v = cv.regions.at(kWholeRegion);
    row.vr = it->regions.at(kWholeRegion);
    row.delta_dice = row.vr.dice - row.v.dice;
    row.delta_asd = row.vr.asd - row.v.asd;
    row.delta_asd_max = row.vr.asd_max - row.v.asd_max;
    row.vr_reduces_asd_max = row.vr.asd_max < row.v.asd_max;
    c.rows.push_back(row);
  }
  return c;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << v;
  return os.str();
}

}  // namespace

std::string comparison_csv(const Comparison& c) {
  std::ostringstream os;
  os << "case,DC_V,DC_VR,dDC,ASD_V,ASD_VR,dASD,ASDmax_V,ASDmax_VR,dASDmax,VR_reduces_ASDmax\n";
  for (const auto& r : c.rows)
    os << r.case_id << ',' << fmt(r.v.dice) << ',' << fmt(r.vr.dice) << ',' << fmt(r.delta_dice) << ','
       << fmt(r.v.asd) << ',' << fmt(r.vr.asd) << ',' << fmt(r.delta_asd) << ',' << fmt(r.v.asd_max) << ','
       << fmt(r.vr.asd_max) << ',' << fmt(r.delta_asd_max) << ',' << (r.vr_reduces_asd_max ? "yes" : "no") << '\n';
  return os.str();
}

std::string comparison_markdown(const Comparison& c) {
  EvalReport v = c.v, vr = c.vr;
  v.structure = "V";
  vr.structure = "VR";
  std::ostringstream os;
  os << to_markdown({v, vr}) << '\n';
  os << "| Case | DC V | DC VR | dDC | ASD V | ASD VR | dASD | ASDmax V | ASDmax VR | dASDmax | VR lower ASDmax |\n";
  os << "|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : c.rows)
    os << "| " << r.case_id << " | " << fmt(r.v.dice) << " | " << fmt(r.vr.dice) << " | " << fmt(r.delta_dice)
       << " | " << fmt(r.v.asd) << " | " << fmt(r.vr.asd) << " | " << fmt(r.delta_asd) << " | "
       << fmt(r.v.asd_max) << " | " << fmt(r.vr.asd_max) << " | " << fmt(r.delta_asd_max) << " | "
       << (r.vr_reduces_asd_max ? "yes" : "no") << " |\n";
  return os.str();
}

Comparison run_compare(const RunConfig& config_v, const RunConfig& config_vr) {
  in_stage(Stage::config, [&] {
    config_v.validate();
    config_vr.validate();
    return 0;
  });
  RunConfig a = config_v, b = config_vr;
  a.mode = b.mode = AtlasMode::vertebra_only;
  a.output_dir = b.output_dir = "";
  const bool shared = dump_run_config(a) == dump_run_config(b);
  if (!shared) {
    const RunOutput rv = run_segment(config_v);
    const RunOutput rvr = run_segment(config_vr);
    Comparison c = compare_reports(rv.report, rvr.report);
    const fs::path dir = config_v.output_dir.parent_path();
    in_stage(Stage::write, [&] {
      write_text(dir / "comparison.md", comparison_markdown(c));
      write_text(dir / "comparison.csv", comparison_csv(c));
      return 0;
    });
    return c;
  }

  const auto threads = limit_threads(config_v.jobs);
  Stopwatch total;
  const AtlasManifest manifest = in_stage(Stage::load, [&] { return load_manifest(config_v.manifest); });
  if (manifest.atlases.empty()) throw PipelineError(Stage::load, "manifest lists no atlases");
  const auto atlases = load_atlases(manifest);
  const RunConfig* configs[2] = {&config_v, &config_vr};
  RunOutput runs[2];
  json summaries[2] = {summary_header(config_v), summary_header(config_vr)};
  for (const auto& entry : manifest.targets) {
    Stopwatch sw;
    const LoadedTarget t = load_target(entry);
    const double load_s = sw.lap();
    const auto reg = register_stage(config_v, t, atlases);
    const double reg_s = sw.lap();
    for (int m = 0; m < 2; ++m) {
      const RunConfig& c = *configs[m];
      json cs = {{"id", entry.id}, {"timings", {{"load", load_s}, {"registration", reg_s}}}};
      const fs::path case_dir = c.output_dir / entry.id;
      write_registration(case_dir, reg);
      CaseOutput out = segment_stage(c, t, reg, case_dir, cs);
      if (out.report) runs[m].report.cases.push_back(*out.report);
      runs[m].cases.push_back(std::move(out));
      summaries[m]["cases"].push_back(cs);
    }
  }
  for (int m = 0; m < 2; ++m) {
    summaries[m]["total_seconds"] = total.lap();
    write_reports(*configs[m], runs[m], summaries[m]);
  }
  Comparison c = compare_reports(runs[0].report, runs[1].report);
  const fs::path dir = config_v.output_dir.parent_path();
  in_stage(Stage::write, [&] {
    write_text(dir / "comparison.md", comparison_markdown(c));
    write_text(dir / "comparison.csv", comparison_csv(c));
    return 0;
  });
  return c;
}

// ---------------------------------------------------------------------------
// Overlays

RgbImage render_overlay(const Volume& target, const Image<Label>& gt, const Image<Label>& mask_v,
                        const Image<Label>& mask_vr, int axis, int index) {
  const Grid& g = target.grid();
  for (const Image<Label>* m : {&gt, &mask_v, &mask_vr})
    if (!(m->grid() == g)) throw std::invalid_argument("overlay: masks must share the target grid");
  if (axis < 0 || axis > 2) throw std::invalid_argument("overlay: axis must be 0, 1 or 2");
  if (index < 0 || index >= g.dims[axis]) throw std::out_of_range("overlay: slice index outside volume");

  const int u_axis = axis == 0 ? 1 : 0;
  const int v_axis = axis == 2 ? 1 : 2;
  RgbImage img;
  img.width = g.dims[u_axis];
  img.height = g.dims[v_axis];
  img.pixels.assign(3 * static_cast<std::size_t>(img.width) * img.height, 0);
  auto voxel = [&](int u, int v) {
    int idx[3];
    idx[axis] = index;
    idx[u_axis] = u;
    idx[v_axis] = v;
    return g.offset(idx[0], idx[1], idx[2]);
  };

  const double lo = min_value(target), hi = max_value(target);
  for (int v = 0; v < img.height; ++v)
    for (int u = 0; u < img.width; ++u) {
      const double t = hi > lo ? (target[voxel(u, v)] - lo) / (hi - lo) : 0.0;
      const auto gray = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(t, 0.0, 1.0)));
      std::fill_n(img.pixels.begin() + 3 * (static_cast<std::size_t>(v) * img.width + u), 3, gray);
    }

  const std::array<std::uint8_t, 3> colors[3] = {{255, 255, 0}, {255, 0, 0}, {0, 0, 255}};
  const Image<Label>* masks[3] = {&gt, &mask_v, &mask_vr};
  for (int m = 0; m < 3; ++m) {
    const Image<Label>& mask = *masks[m];
    auto in = [&](int u, int v) {
      return u >= 0 && v >= 0 && u < img.width && v < img.height && mask[voxel(u, v)] != 0;
    };
    for (int v = 0; v < img.height; ++v)
      for (int u = 0; u < img.width; ++u) {
        if (!in(u, v)) continue;
        if (in(u - 1, v) && in(u + 1, v) && in(u, v - 1) && in(u, v + 1)) continue;
        std::copy(colors[m].begin(), colors[m].end(),
                  img.pixels.begin() + 3 * (static_cast<std::size_t>(v) * img.width + u));
      }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Phantom suites

PhantomSuite make_phantom_suite(const SuiteSpec& spec) {
  if (spec.targets < 0 || spec.atlases < 1) throw std::invalid_argument("suite: need >= 1 atlas and >= 0 targets");
  PhantomSuite suite;
  suite.atlases = make_atlas_family(spec.base, spec.atlases, spec.atlas_deform, derive_seed(spec.seed, 1));
  suite.targets.resize(spec.targets);
  parallel_for(0, spec.targets, [&](int t) {
    const auto stream = static_cast<std::uint64_t>(t);
    PhantomSpec s = spec.base;
    s.deform_magnitude = spec.target_deform;
    s.deform_seed = derive_seed(spec.seed, 1000 + stream);
    s.seed = derive_seed(spec.seed, 2000 + stream);
    std::mt19937_64 gen(derive_seed(spec.seed, 3000 + stream));
    auto uniform = [&] { return 2.0 * static_cast<double>(gen() >> 11) * 0x1.0p-53 - 1.0; };
    for (int a = 0; a < 3; ++a) s.shift[a] = spec.base.shift[a] + spec.shift_jitter * uniform();
    s.rotation_z_deg = spec.base.rotation_z_deg + spec.rotation_jitter * uniform();
    PhantomCase& c = suite.targets[t];
    c.id = "case" + std::to_string(t);
    c.spec = s;
    c.phantom = make_phantom(s);
    c.substructures = make_substructures(s);
  });
  return suite;
}

fs::path write_phantom_suite(const PhantomSuite& suite, const fs::path& dir) {
  fs::create_directories(dir / "atlases");
  fs::create_directories(dir / "targets");
  AtlasManifest m;
  for (std::size_t a = 0; a < suite.atlases.size(); ++a) {
    const std::string id = "atlas" + std::to_string(a);
    AtlasEntry e{id, dir / "atlases" / (id + ".nii"), dir / "atlases" / (id + "_labels.nii"),
                 suite.atlases[a].joint.legend()};
    write_nifti(suite.atlases[a].image, e.image);
    write_nifti(suite.atlases[a].joint, e.labels);
    m.atlases.push_back(std::move(e));
  }
  for (const auto& c : suite.targets) {
    TargetEntry e;
    e.id = c.id;
    e.image = dir / "targets" / (c.id + ".nii");
    e.ground_truth = dir / "targets" / (c.id + "_gt.nii");
    write_nifti(c.phantom.image, e.image);
    write_nifti(c.phantom.labels, *e.ground_truth);
    for (const auto& [name, mask] : c.substructures) {
      e.substructures[name] = dir / "targets" / (c.id + "_" + name + ".nii");
      write_nifti(mask, e.substructures[name]);
    }
    m.targets.push_back(std::move(e));
  }
  const fs::path manifest = dir / "manifest.json";
  save_manifest(m, manifest);
  return manifest;
}

}  // namespace jlf
