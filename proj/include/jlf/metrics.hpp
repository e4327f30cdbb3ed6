#pragma once

#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "jlf/image.hpp"

namespace jlf {

class UndefinedMetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// 2 |GT n S| / (|GT| + |S|) * 100; both empty counts as 100.
double dice(const Image<Label>& gt, const Image<Label>& seg);

/// World positions (mm) of foreground voxels with a background 6-neighbour;
/// outside the volume counts as background.
struct SurfaceSet {
  std::vector<Vec3> points;
  Grid grid;

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
};

SurfaceSet surface_voxels(const Image<Label>& mask);

/// Exact nearest-neighbour queries over a fixed point set.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points);

  bool empty() const { return points_.empty(); }
  /// Distance to the closest stored point; throws when the tree is empty.
  double nearest_distance(const Vec3& q) const;

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1;
    int right = -1;
  };
  int build(std::vector<int>& idx, int lo, int hi, int depth);
  void search(int node, const Vec3& q, double& best2) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Distances from every seg surface point to the nearest gt surface point.
std::vector<double> surface_distances(const SurfaceSet& seg, const SurfaceSet& gt);

/// Mean of the one-sided seg -> gt distances (mm).
double asd(const SurfaceSet& seg, const SurfaceSet& gt);
/// Maximum of the same one-sided distances.
double asd_max(const SurfaceSet& seg, const SurfaceSet& gt);
/// Average of the two one-sided means.
double asd_symmetric(const SurfaceSet& seg, const SurfaceSet& gt);

struct RegionMetrics {
  double dice = std::numeric_limits<double>::quiet_NaN();
  double asd = std::numeric_limits<double>::quiet_NaN();     // NaN when a surface is empty
  double asd_max = std::numeric_limits<double>::quiet_NaN();
};

inline const std::string kWholeRegion = "WV";

struct CaseReport {
  std::string case_id;
  /// Region name -> metrics; "WV" is the whole structure.
  std::map<std::string, RegionMetrics> regions;
};

struct EvalOptions {
  bool symmetric_asd = false;
};

/// Whole-structure metrics plus, per supplied region mask, seg n region
/// against gt n region.
CaseReport evaluate(const Image<Label>& seg, const Image<Label>& gt,
                    const std::map<std::string, Image<Label>>& substructures = {},
                    const EvalOptions& options = {}, std::string case_id = {});

struct Summary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();  // sample std; 0 for one value
  std::size_t n = 0;
};

/// Mean and sample standard deviation ignoring NaN entries.
Summary summarize(const std::vector<double>& values);

struct EvalReport {
  std::string structure = "vertebra";
  std::vector<CaseReport> cases;

  /// Region names in report order: WV, VB, TP, SP, then any others.
  std::vector<std::string> regions() const;
  Summary summary(const std::string& region, double RegionMetrics::*metric) const;
};

/// One row per case plus mean and std rows; columns DC-<r>, ASD-<r>, ASDmax-<r>.
std::string to_csv(const EvalReport& report);
/// Dice table followed by the surface-distance table, "mean (std)" cells.
std::string to_markdown(const std::vector<EvalReport>& reports);

}  // namespace jlf
