#include "jlf/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include <Eigen/Cholesky>

#include "jlf/parallel.hpp"

namespace jlf {

void WarpedAtlas::validate() const {
  if (!(intensity.grid() == labels.grid()))
    throw std::invalid_argument("warped atlas " + source_id + ": intensity and labels differ in grid");
}

void FusionParams::validate() const {
  if (patch_radius < 1) throw std::invalid_argument("fusion: patch radius must be >= 1");
  if (search_radius < 0) throw std::invalid_argument("fusion: search radius must be >= 0");
  if (!(beta > 0.0)) throw std::invalid_argument("fusion: beta must be positive");
  if (!(epsilon > 0.0)) throw std::invalid_argument("fusion: epsilon must be positive");
}

namespace {

std::vector<VoxelIndex> search_offsets(int r) {
  std::vector<VoxelIndex> out;
  for (int dz = -r; dz <= r; ++dz)
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) out.push_back({dx, dy, dz});
  std::sort(out.begin(), out.end(), [](const VoxelIndex& a, const VoxelIndex& b) {
    const int na = a.i * a.i + a.j * a.j + a.k * a.k, nb = b.i * b.i + b.j * b.j + b.k * b.k;
    if (na != nb) return na < nb;
    return std::tie(a.i, a.j, a.k) < std::tie(b.i, b.j, b.k);
  });
  return out;
}

// Patch values of `img` around `c`, border-clamped, x fastest.
void gather(const Volume& img, int ci, int cj, int ck, int r, std::vector<double>& out) {
  out.clear();
  for (int dz = -r; dz <= r; ++dz)
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) out.push_back(img.clamped(ci + dx, cj + dy, ck + dz));
}

struct Workspace {
  std::vector<double> target_patch;
  std::vector<double> atlas_patch;
};

VoxelIndex best_offset(const std::vector<double>& target_patch, const Volume& atlas, const VoxelIndex& x,
                       const std::vector<VoxelIndex>& offsets, int r, std::vector<double>& scratch) {
  VoxelIndex best{0, 0, 0};
  double best_ssd = std::numeric_limits<double>::infinity();
  for (const VoxelIndex& o : offsets) {
    gather(atlas, x.i + o.i, x.j + o.j, x.k + o.k, r, scratch);
    double ssd = 0.0;
    for (std::size_t p = 0; p < scratch.size() && ssd < best_ssd; ++p) {
      const double d = scratch[p] - target_patch[p];
      ssd += d * d;
    }
    if (ssd < best_ssd) {
      best_ssd = ssd;
      best = o;
    }
  }
  return best;
}

void condition(DependencyMatrix& m, double epsilon) {
  const double mean_diag = m.diagonal().mean();
  m.diagonal().array() += mean_diag > 0.0 ? epsilon * mean_diag : epsilon;
}

DependencyMatrix dependency_at(const Volume& target, const std::vector<const WarpedAtlas*>& atlases,
                               const VoxelIndex& x, const FusionParams& params,
                               const std::vector<VoxelIndex>& offsets, Workspace& ws) {
  const int r = params.patch_radius;
  gather(target, x.i, x.j, x.k, r, ws.target_patch);
  const Eigen::Index n = static_cast<Eigen::Index>(atlases.size());
  Eigen::MatrixXd residual(ws.target_patch.size(), n);
  for (Eigen::Index a = 0; a < n; ++a) {
    const VoxelIndex o = best_offset(ws.target_patch, atlases[a]->intensity, x, offsets, r, ws.atlas_patch);
    gather(atlases[a]->intensity, x.i + o.i, x.j + o.j, x.k + o.k, r, ws.atlas_patch);
    for (std::size_t p = 0; p < ws.atlas_patch.size(); ++p)
      residual(static_cast<Eigen::Index>(p), a) = std::abs(ws.atlas_patch[p] - ws.target_patch[p]);
  }
  DependencyMatrix m = (residual.transpose() * residual).array().pow(params.beta).matrix();
  condition(m, params.epsilon);
  return m;
}

// Atlases sorted by id, then by content, so fusion never sees caller order.
std::vector<const WarpedAtlas*> canonical_order(const std::vector<WarpedAtlas>& atlases) {
  std::vector<const WarpedAtlas*> out;
  for (const auto& a : atlases) out.push_back(&a);
  std::stable_sort(out.begin(), out.end(), [](const WarpedAtlas* a, const WarpedAtlas* b) {
    if (a->source_id != b->source_id) return a->source_id < b->source_id;
    if (a->labels.values() != b->labels.values()) return a->labels.values() < b->labels.values();
    return a->intensity.values() < b->intensity.values();
  });
  return out;
}

}  // namespace

VoxelIndex best_patch_offset(const Volume& target, const WarpedAtlas& atlas, const VoxelIndex& x,
                             const FusionParams& params) {
  params.validate();
  if (!target.grid().contains(x)) throw std::out_of_range("best_patch_offset: voxel outside grid");
  std::vector<double> tp, scratch;
  gather(target, x.i, x.j, x.k, params.patch_radius, tp);
  return best_offset(tp, atlas.intensity, x, search_offsets(params.search_radius), params.patch_radius,
                     scratch);
}

DependencyMatrix dependency_matrix(const Volume& target, const std::vector<WarpedAtlas>& atlases,
                                   const VoxelIndex& x, const FusionParams& params) {
  params.validate();
  if (atlases.empty()) throw std::invalid_argument("dependency_matrix: need at least one atlas");
  if (!target.grid().contains(x)) throw std::out_of_range("dependency_matrix: voxel outside grid");
  std::vector<const WarpedAtlas*> ptrs;
  for (const auto& a : atlases) ptrs.push_back(&a);
  Workspace ws;
  return dependency_at(target, ptrs, x, params, search_offsets(params.search_radius), ws);
}

FusionWeights fusion_weights(const DependencyMatrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) throw std::invalid_argument("fusion_weights: M must be square");
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m.rows());
  auto attempt = [&](const DependencyMatrix& mat, FusionWeights& w) {
    if (!mat.allFinite()) return false;
    const Eigen::LLT<DependencyMatrix> llt(mat);
    if (llt.info() != Eigen::Success) return false;
    const Eigen::VectorXd y = llt.solve(ones);
    const double s = y.sum();
    if (!std::isfinite(s) || s == 0.0) return false;
    w = y / s;
    return w.allFinite();
  };
  FusionWeights w;
  if (attempt(m, w)) return w;
  DependencyMatrix retry = m;
  const double scale = m.diagonal().cwiseAbs().mean();
  retry.diagonal().array() += scale > 0.0 ? scale : 1.0;
  if (attempt(retry, w)) return w;
  throw ConditioningError("fusion_weights: dependency matrix is not positive definite");
}

LabelMap fuse_labels(const std::vector<WarpedAtlas>& atlases, const Volume& target,
                     const FusionParams& params) {
  params.validate();
  if (atlases.empty()) throw std::invalid_argument("fuse_labels: need at least one atlas");
  Legend legend;
  for (const auto& a : atlases) {
    a.validate();
    if (!(a.intensity.grid() == target.grid()))
      throw std::invalid_argument("fuse_labels: atlas " + a.source_id + " is not on the target grid");
    for (const auto& [id, name] : a.labels.legend()) legend.emplace(id, name);
  }
  legend.emplace(0, "background");

  const auto order = canonical_order(atlases);
  const auto offsets = search_offsets(params.search_radius);
  const Grid& g = target.grid();
  LabelMap out(g, legend, 0);

  parallel_for(0, g.dims[2], [&](int k) {
    Workspace ws;
    std::vector<std::pair<Label, double>> scores;
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const std::size_t v = g.offset(i, j, k);
        const Label first = order.front()->labels[v];
        const bool unanimous = std::all_of(order.begin(), order.end(),
                                           [&](const WarpedAtlas* a) { return a->labels[v] == first; });
        if (unanimous) {
          out[v] = first;
          continue;
        }
        const FusionWeights w = fusion_weights(dependency_at(target, order, {i, j, k}, params, offsets, ws));
        scores.clear();
        for (std::size_t a = 0; a < order.size(); ++a) {
          const Label l = order[a]->labels[v];
          auto it = std::find_if(scores.begin(), scores.end(), [&](const auto& s) { return s.first == l; });
          if (it == scores.end())
            scores.emplace_back(l, w[static_cast<Eigen::Index>(a)]);
          else
            it->second += w[static_cast<Eigen::Index>(a)];
        }
        std::sort(scores.begin(), scores.end());
        Label best = scores.front().first;
        double best_score = scores.front().second;
        for (const auto& [l, s] : scores)
          if (s > best_score) {
            best = l;
            best_score = s;
          }
        out[v] = best;
      }
  });
  return out;
}

LabelMap extract_structure(const LabelMap& consensus, Label id) {
  const auto it = consensus.legend().find(id);
  if (id == 0 || it == consensus.legend().end())
    throw std::invalid_argument("extract_structure: id " + std::to_string(id) + " not in legend");
  LabelMap out(consensus.grid(), {{0, "background"}, {id, it->second}}, 0);
  for (std::size_t v = 0; v < consensus.size(); ++v) out[v] = consensus[v] == id ? id : 0;
  return out;
}

}  // namespace jlf
