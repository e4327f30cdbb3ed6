#include "jlf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace jlf {

namespace {

void same_grid(const Image<Label>& a, const Image<Label>& b, const char* what) {
  if (!(a.grid() == b.grid())) throw std::invalid_argument(std::string(what) + ": masks must share a grid");
}

}  // namespace

double dice(const Image<Label>& gt, const Image<Label>& seg) {
  same_grid(gt, seg, "dice");
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t v = 0; v < gt.size(); ++v) {
    const bool g = gt[v] != 0, s = seg[v] != 0;
    a += g;
    b += s;
    both += g && s;
  }
  if (a + b == 0) return 100.0;
  return 200.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

SurfaceSet surface_voxels(const Image<Label>& mask) {
  SurfaceSet s;
  s.grid = mask.grid();
  const Grid& g = mask.grid();
  auto bg = [&](int i, int j, int k) { return !g.contains({i, j, k}) || mask(i, j, k) == 0; };
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        if (mask(i, j, k) == 0) continue;
        if (bg(i - 1, j, k) || bg(i + 1, j, k) || bg(i, j - 1, k) || bg(i, j + 1, k) || bg(i, j, k - 1) ||
            bg(i, j, k + 1))
          s.points.push_back(g.world(i, j, k));
      }
  return s;
}

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  std::vector<int> idx(points_.size());
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(points_.size());
  root_ = build(idx, 0, static_cast<int>(idx.size()), 0);
}

int KdTree::build(std::vector<int>& idx, int lo, int hi, int depth) {
  if (lo >= hi) return -1;
  const int axis = depth % 3;
  const int mid = lo + (hi - lo) / 2;
  std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                   [&](int a, int b) { return points_[a][axis] < points_[b][axis]; });
  const int node = static_cast<int>(nodes_.size());
  nodes_.push_back({idx[mid], axis, -1, -1});
  const int left = build(idx, lo, mid, depth + 1);
  const int right = build(idx, mid + 1, hi, depth + 1);
  nodes_[node].left = left;
  nodes_[node].right = right;
  return node;
}

void KdTree::search(int node, const Vec3& q, double& best2) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const Vec3& p = points_[n.point];
  best2 = std::min(best2, (p - q).squaredNorm());
  const double diff = q[n.axis] - p[n.axis];
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search(near, q, best2);
  if (diff * diff <= best2) search(far, q, best2);
}

double KdTree::nearest_distance(const Vec3& q) const {
  if (points_.empty()) throw UndefinedMetricError("kd-tree: no points");
  double best2 = std::numeric_limits<double>::infinity();
  search(root_, q, best2);
  return std::sqrt(best2);
}

std::vector<double> surface_distances(const SurfaceSet& seg, const SurfaceSet& gt) {
  if (seg.empty() || gt.empty()) throw UndefinedMetricError("surface distance: empty surface");
  const KdTree tree(gt.points);
  std::vector<double> d(seg.size());
  for (std::size_t i = 0; i < seg.size(); ++i) d[i] = tree.nearest_distance(seg.points[i]);
  return d;
}

double asd(const SurfaceSet& seg, const SurfaceSet& gt) {
  const auto d = surface_distances(seg, gt);
  return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

double asd_max(const SurfaceSet& seg, const SurfaceSet& gt) {
  const auto d = surface_distances(seg, gt);
  return *std::max_element(d.begin(), d.end());
}

double asd_symmetric(const SurfaceSet& seg, const SurfaceSet& gt) {
  return 0.5 * (asd(seg, gt) + asd(gt, seg));
}

namespace {

RegionMetrics region_metrics(const Image<Label>& seg, const Image<Label>& gt, const EvalOptions& options) {
  RegionMetrics m;
  m.dice = dice(gt, seg);
  const SurfaceSet s = surface_voxels(seg), g = surface_voxels(gt);
  if (s.empty() || g.empty()) return m;
  m.asd = options.symmetric_asd ? asd_symmetric(s, g) : asd(s, g);
  m.asd_max = asd_max(s, g);
  if (options.symmetric_asd) m.asd_max = std::max(m.asd_max, asd_max(g, s));
  return m;
}

Image<Label> intersect(const Image<Label>& a, const Image<Label>& region) {
  Image<Label> out(a.grid(), 0);
  for (std::size_t v = 0; v < a.size(); ++v) out[v] = (a[v] != 0 && region[v] != 0) ? 1 : 0;
  return out;
}

}  // namespace

CaseReport evaluate(const Image<Label>& seg, const Image<Label>& gt,
                    const std::map<std::string, Image<Label>>& substructures, const EvalOptions& options,
                    std::string case_id) {
  same_grid(gt, seg, "evaluate");
  CaseReport r;
  r.case_id = std::move(case_id);
  r.regions[kWholeRegion] = region_metrics(seg, gt, options);
  for (const auto& [name, region] : substructures) {
    same_grid(gt, region, "evaluate");
    r.regions[name] = region_metrics(intersect(seg, region), intersect(gt, region), options);
  }
  return r;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  double sum = 0.0;
  for (double v : values)
    if (!std::isnan(v)) {
      sum += v;
      ++s.n;
    }
  if (s.n == 0) return s;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n == 1) {
    s.std = 0.0;
    return s;
  }
  double ss = 0.0;
  for (double v : values)
    if (!std::isnan(v)) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  return s;
}

std::vector<std::string> EvalReport::regions() const {
  std::set<std::string> names;
  for (const auto& c : cases)
    for (const auto& [name, m] : c.regions) names.insert(name);
  std::vector<std::string> out;
  for (const char* known : {"WV", "VB", "TP", "SP"})
    if (names.erase(known)) out.push_back(known);
  out.insert(out.end(), names.begin(), names.end());
  return out;
}

Summary EvalReport::summary(const std::string& region, double RegionMetrics::*metric) const {
  std::vector<double> values;
  for (const auto& c : cases) {
    const auto it = c.regions.find(region);
    values.push_back(it == c.regions.end() ? std::numeric_limits<double>::quiet_NaN() : it->second.*metric);
  }
  return summarize(values);
}

namespace {

std::string num(double v, int precision) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string cell(const Summary& s, int precision) {
  if (s.n == 0) return "n/a";
  return num(s.mean, precision) + " (" + num(s.std, precision) + ")";
}

}  // namespace

std::string to_csv(const EvalReport& report) {
  const auto regions = report.regions();
  std::ostringstream os;
  os << "case";
  for (const auto& r : regions) os << ",DC-" << r;
  for (const auto& r : regions) os << ",ASD-" << r << ",ASDmax-" << r;
  os << '\n';
  for (const auto& c : report.cases) {
    os << c.case_id;
    auto get = [&](const std::string& r) {
      const auto it = c.regions.find(r);
      return it == c.regions.end() ? RegionMetrics{} : it->second;
    };
    for (const auto& r : regions) os << ',' << num(get(r).dice, 4);
    for (const auto& r : regions) os << ',' << num(get(r).asd, 4) << ',' << num(get(r).asd_max, 4);
    os << '\n';
  }
  for (int row = 0; row < 2; ++row) {
    os << (row == 0 ? "mean" : "std");
    auto pick = [&](const Summary& s) { return num(row == 0 ? s.mean : s.std, 4); };
    for (const auto& r : regions) os << ',' << pick(report.summary(r, &RegionMetrics::dice));
    for (const auto& r : regions)
      os << ',' << pick(report.summary(r, &RegionMetrics::asd)) << ','
         << pick(report.summary(r, &RegionMetrics::asd_max));
    os << '\n';
  }
  return os.str();
}

std::string to_markdown(const std::vector<EvalReport>& reports) {
  std::vector<std::string> regions;
  for (const auto& rep : reports)
    for (const auto& r : rep.regions())
      if (std::find(regions.begin(), regions.end(), r) == regions.end()) regions.push_back(r);

  std::ostringstream os;
  os << "| Structure | N |";
  for (const auto& r : regions) os << " DC-" << r << " |";
  os << "\n|---|---|";
  for (std::size_t i = 0; i < regions.size(); ++i) os << "---|";
  os << '\n';
  for (const auto& rep : reports) {
    os << "| " << rep.structure << " | " << rep.cases.size() << " |";
    for (const auto& r : regions) os << ' ' << cell(rep.summary(r, &RegionMetrics::dice), 1) << " |";
    os << '\n';
  }
  os << "\n| Structure | N |";
  for (const auto& r : regions) os << " ASD-" << r << " | ASDmax-" << r << " |";
  os << "\n|---|---|";
  for (std::size_t i = 0; i < regions.size(); ++i) os << "---|---|";
  os << '\n';
  for (const auto& rep : reports) {
    os << "| " << rep.structure << " | " << rep.cases.size() << " |";
    for (const auto& r : regions)
      os << ' ' << cell(rep.summary(r, &RegionMetrics::asd), 2) << " | "
         << cell(rep.summary(r, &RegionMetrics::asd_max), 2) << " |";
    os << '\n';
  }
  return os.str();
}

}  // namespace jlf
