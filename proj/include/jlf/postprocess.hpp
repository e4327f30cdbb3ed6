#pragma once

#include <vector>

#include <Eigen/Core>

#include "jlf/image.hpp"

namespace jlf {

/// Keeps the largest 26-connected foreground component; equal sizes go to the
/// component whose first voxel comes first in raster order.
LabelMap remove_islands(const LabelMap& mask);

/// 26-connected components of the foreground, ordered by first voxel in raster order.
std::vector<LabelMap> connected_components(const LabelMap& mask);

/// Fills background pockets not 6-connected to the volume border, then applies
/// a 3x3x3 closing (neighbours outside the volume are ignored). The pair is
/// repeated until nothing changes, which makes the operator idempotent.
LabelMap fill_holes(const LabelMap& mask);

using Features = Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor>;

/// Linear classifier on z-scored features; score > 0 means the positive class.
struct PerceptronModel {
  Eigen::Vector4d weights = Eigen::Vector4d::Zero();
  double bias = 0.0;
  Eigen::Vector4d mean = Eigen::Vector4d::Zero();
  Eigen::Vector4d scale = Eigen::Vector4d::Ones();
  int epochs_run = 0;
  int final_errors = 0;

  double score(const Eigen::Vector4d& x) const {
    return weights.dot((x - mean).cwiseQuotient(scale)) + bias;
  }
  bool positive(const Eigen::Vector4d& x) const { return score(x) > 0.0; }
};

/// Rosenblatt updates (rate 1, zero start) in row order on z-scored features;
/// stops after an error-free epoch or `epochs` passes. `labels` are +1 / -1.
/// Throws when either class is missing.
PerceptronModel train_perceptron(const Features& features, const std::vector<int>& labels, int epochs = 50);

struct CollisionResult {
  std::vector<LabelMap> masks;
  std::size_t contested = 0;
  /// Set when some pair fell back to nearest-centroid assignment.
  bool fallback_used = false;
};

/// Makes the masks disjoint. Pairs are visited in ascending foreground-id
/// order; each contested voxel goes to the winner of a perceptron trained on
/// the pair's uncontested voxels with features
/// [I - mu_a, I - mu_b, |x - c_a|, |x - c_b|] (distances in mm).
CollisionResult resolve_collisions(const std::vector<LabelMap>& masks, const Volume& target, int epochs = 50);

struct LevelSetParams {
  int iterations = 30;
  double time_step = 0.1;
  double smoothing_weight = 0.2;
  double edge_weight = 6.0;
  int band = 3;              // voxels either side of the input surface
  double log_sigma = 1.5;    // voxels

  void validate() const;
};

/// Narrow-band evolution of a signed distance (voxel units) under
/// phi_t = w_s kappa |grad phi| - w_e F |grad phi|, F = -L / (|L| + L_ref) with L
/// the Laplacian of Gaussian of the target. Output is phi < 0.
LabelMap level_set_refine(const LabelMap& mask, const Volume& target, const LevelSetParams& params);

/// Evolves several structures in lockstep; a front never enters a voxel that
/// another structure holds, and simultaneous claims go to the most negative phi.
std::vector<LabelMap> level_set_refine(const std::vector<LabelMap>& masks, const Volume& target,
                                       const LevelSetParams& params);

struct PostprocessParams {
  LevelSetParams level_set;
  int perceptron_epochs = 50;
  bool trace = false;
};

struct PostprocessResult {
  std::vector<LabelMap> masks;
  /// trace[m] holds mask m after islands, holes, collisions and level set.
  std::vector<std::vector<LabelMap>> trace;
  bool collision_fallback = false;
};

PostprocessResult postprocess_chain(const std::vector<LabelMap>& masks, const Volume& target,
                                    const PostprocessParams& params);

/// Exact Euclidean distance (voxel units) from every voxel to the nearest
/// voxel where `seed` is true; +inf when there is none.
std::vector<double> distance_transform(const Grid& grid, const std::vector<bool>& seed);

}  // namespace jlf
