// jlfseg: multi-atlas vertebra segmentation driver.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <tbb/global_control.h>

#include "CLI11.hpp"

#include "jlf/pipeline.hpp"

namespace fs = std::filesystem;
using namespace jlf;

namespace {

struct Common {
  std::string config;
  std::string trace_dir;
  int jobs = -1;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--trace-dir", c.trace_dir, "Dump per-stage masks here");
  cmd->add_option("--jobs", c.jobs, "Worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--seed", c.seed, "Seed recorded with the run");
}

RunConfig configure(const Common& c) {
  RunConfig cfg;
  try {
    cfg = load_run_config(c.config);
  } catch (const std::exception& e) {
    throw PipelineError(Stage::config, e.what());
  }
  if (!c.trace_dir.empty()) cfg.trace_dir = c.trace_dir;
  if (c.jobs >= 0) cfg.jobs = c.jobs;
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

Image<Label> binary(const LabelMap& m, std::optional<int> label) {
  Image<Label> out(m.grid(), 0);
  for (std::size_t v = 0; v < m.size(); ++v) out[v] = label ? (m[v] == *label) : (m[v] != 0);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-atlas segmentation with joint label fusion"};
  app.require_subcommand(1);

  Common seg_opts;
  auto* segment = app.add_subcommand("segment", "Register, fuse, post-process and evaluate");
  add_common(segment, seg_opts);

  Common cmp_opts;
  std::string config_vr;
  auto* compare = app.add_subcommand("compare", "Vertebra-only against joint vertebra-rib atlases");
  add_common(compare, cmp_opts);
  compare->add_option("--config-vr", config_vr, "Separate configuration for the joint run")
      ->check(CLI::ExistingFile);

  std::string eval_seg, eval_gt, eval_out;
  std::vector<std::string> eval_regions;
  int eval_label = 1;
  bool eval_symmetric = false;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Dice and surface distances of one mask");
  evaluate_cmd->add_option("--seg", eval_seg, "Segmentation mask")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--gt", eval_gt, "Ground truth")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--label", eval_label, "Ground-truth label to compare against");
  evaluate_cmd->add_option("--region", eval_regions, "NAME=mask.nii substructure region");
  evaluate_cmd->add_flag("--symmetric", eval_symmetric, "Symmetric mean surface distance");
  evaluate_cmd->add_option("--out", eval_out, "CSV report path (stdout when absent)");

  std::string ph_out, ph_spec;
  SuiteSpec suite;
  auto* phantom = app.add_subcommand("phantom", "Write a synthetic atlas/target suite and manifest");
  phantom->add_option("--out", ph_out, "Output directory")->required();
  phantom->add_option("--spec", ph_spec, "Base phantom spec (JSON)")->check(CLI::ExistingFile);
  phantom->add_option("--targets", suite.targets, "Number of targets");
  phantom->add_option("--atlases", suite.atlases, "Number of atlases");
  phantom->add_option("--gap", suite.base.rib_gap, "Process-to-rib gap (voxels)");
  phantom->add_option("--seed", suite.seed, "Suite seed");

  std::string ov_target, ov_gt, ov_v, ov_vr, ov_out;
  int ov_axis = 2, ov_index = -1, ov_label = 1;
  auto* overlay = app.add_subcommand("overlay", "PNG slice with ground-truth, V and VR contours");
  overlay->add_option("--target", ov_target, "Target volume")->required()->check(CLI::ExistingFile);
  overlay->add_option("--gt", ov_gt, "Ground truth")->required()->check(CLI::ExistingFile);
  overlay->add_option("--v", ov_v, "Vertebra-only mask")->required()->check(CLI::ExistingFile);
  overlay->add_option("--vr", ov_vr, "Joint vertebra-rib mask")->required()->check(CLI::ExistingFile);
  overlay->add_option("--axis", ov_axis, "Slice axis (0, 1, 2)")->check(CLI::Range(0, 2));
  overlay->add_option("--index", ov_index, "Slice index (default: middle)");
  overlay->add_option("--label", ov_label, "Ground-truth label");
  overlay->add_option("--out", ov_out, "PNG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code(Stage::config);
  }

  try {
    if (*segment) {
      const RunConfig cfg = configure(seg_opts);
      const RunOutput out = run_segment(cfg);
      if (!out.report.cases.empty()) std::cout << to_markdown({out.report});
      std::cout << "wrote " << cfg.output_dir.string() << '\n';
    } else if (*compare) {
      RunConfig base = configure(cmp_opts);
      RunConfig v = base, vr = base;
      if (!config_vr.empty()) {
        Common other = cmp_opts;
        other.config = config_vr;
        vr = configure(other);
      }
      v.mode = AtlasMode::vertebra_only;
      vr.mode = AtlasMode::joint_vertebra_rib;
      v.output_dir = base.output_dir / to_string(v.mode);
      vr.output_dir = (config_vr.empty() ? base.output_dir : vr.output_dir) / to_string(vr.mode);
      const Comparison c = run_compare(v, vr);
      std::cout << comparison_markdown(c);
    } else if (*evaluate_cmd) {
      LabelMap seg, gt;
      std::map<std::string, Image<Label>> regions;
      try {
        seg = read_labels(eval_seg);
        gt = read_labels(eval_gt);
        for (const auto& r : eval_regions) {
          const auto eq = r.find('=');
          if (eq == std::string::npos) throw std::invalid_argument("--region expects NAME=path");
          regions.emplace(r.substr(0, eq), binary(read_labels(r.substr(eq + 1)), std::nullopt));
        }
      } catch (const std::exception& e) {
        throw PipelineError(Stage::load, e.what());
      }
      EvalReport report;
      try {
        report.cases.push_back(evaluate(binary(seg, std::nullopt), binary(gt, eval_label), regions,
                                        EvalOptions{eval_symmetric}, fs::path(eval_seg).stem().string()));
      } catch (const std::exception& e) {
        throw PipelineError(Stage::evaluation, e.what());
      }
      const std::string csv = to_csv(report);
      if (eval_out.empty()) {
        std::cout << csv;
      } else {
        std::ofstream out(eval_out);
        if (!(out << csv)) throw PipelineError(Stage::write, "cannot write " + eval_out);
      }
    } else if (*phantom) {
      try {
        if (!ph_spec.empty()) {
          std::ifstream in(ph_spec);
          std::stringstream ss;
          ss << in.rdbuf();
          const double gap = suite.base.rib_gap;
          suite.base = parse_phantom_spec(ss.str());
          if (phantom->count("--gap")) suite.base.rib_gap = gap;
        }
        suite.base.validate();
      } catch (const std::exception& e) {
        throw PipelineError(Stage::config, e.what());
      }
      fs::path manifest;
      try {
        manifest = write_phantom_suite(make_phantom_suite(suite), ph_out);
      } catch (const std::exception& e) {
        throw PipelineError(Stage::write, e.what());
      }
      std::cout << "wrote " << manifest.string() << '\n';
    } else if (*overlay) {
      Volume target;
      LabelMap gt, v, vr;
      try {
        target = read_volume(ov_target);
        gt = read_labels(ov_gt);
        v = read_labels(ov_v);
        vr = read_labels(ov_vr);
      } catch (const std::exception& e) {
        throw PipelineError(Stage::load, e.what());
      }
      const int index = ov_index >= 0 ? ov_index : target.dims()[ov_axis] / 2;
      RgbImage img;
      try {
        img = render_overlay(target, binary(gt, ov_label), binary(v, std::nullopt), binary(vr, std::nullopt),
                             ov_axis, index);
      } catch (const std::exception& e) {
        throw PipelineError(Stage::config, e.what());
      }
      try {
        write_png(img, ov_out);
      } catch (const std::exception& e) {
        throw PipelineError(Stage::write, e.what());
      }
    }
  } catch (const PipelineError& e) {
    std::cerr << "jlfseg: " << e.what() << '\n';
    return exit_code(e.stage());
  } catch (const std::exception& e) {
    std::cerr << "jlfseg: " << e.what() << '\n';
    return exit_code(Stage::config);
  }
  return 0;
}
