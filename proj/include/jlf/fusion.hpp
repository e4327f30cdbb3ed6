#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "jlf/image.hpp"

namespace jlf {

/// Atlas intensity and labels resampled onto the target grid.
struct WarpedAtlas {
  Volume intensity;
  LabelMap labels;
  std::string source_id;

  void validate() const;
};

struct FusionParams {
  int patch_radius = 2;
  int search_radius = 3;
  double beta = 2.0;
  /// Ridge added to M, as a fraction of its mean diagonal.
  double epsilon = 0.1;

  void validate() const;
};

using DependencyMatrix = Eigen::MatrixXd;
using FusionWeights = Eigen::VectorXd;

class ConditioningError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Search-window offset minimizing the patch SSD between target(x + .) and
/// atlas(x + offset + .). Ties go to the smaller offset norm, then to the
/// lexicographically smaller (dx, dy, dz). Patch samples clamp to the border.
VoxelIndex best_patch_offset(const Volume& target, const WarpedAtlas& atlas, const VoxelIndex& x,
                             const FusionParams& params);

/// M(i, j) = (sum_y |A_i(y + o_i) - T(y)| |A_j(y + o_j) - T(y)|)^beta over the
/// patch at x, plus epsilon * mean(diag) * I (epsilon * I when the diagonal is 0).
DependencyMatrix dependency_matrix(const Volume& target, const std::vector<WarpedAtlas>& atlases,
                                   const VoxelIndex& x, const FusionParams& params);

/// w = M^-1 1 / (1^T M^-1 1) through a Cholesky solve. A failed factorization
/// is retried once with a larger ridge before throwing ConditioningError.
FusionWeights fusion_weights(const DependencyMatrix& m);

/// Weighted vote per voxel over every label id the atlases carry; argmax with
/// ties resolved toward 0 and then the smaller id. Voxels where all atlases
/// agree take that label directly. The result does not depend on atlas order.
LabelMap fuse_labels(const std::vector<WarpedAtlas>& atlases, const Volume& target,
                     const FusionParams& params);

/// Binary {0, id} mask of one structure, legend {0: background, id: name}.
LabelMap extract_structure(const LabelMap& consensus, Label id);

}  // namespace jlf
