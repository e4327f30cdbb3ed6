#pragma once

#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "jlf/image.hpp"
#include "jlf/transform.hpp"

namespace jlf {

enum class HistogramKernel {
  box,    // nearest bin; exact NMI(I, I) = 2, used for reporting
  cubic,  // cubic B-spline Parzen window, differentiable, used by the optimizers
};

class DegenerateRangeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Normalized joint intensity histogram; rows index fixed bins, columns
/// moving bins.
struct JointHistogram {
  Eigen::MatrixXd p;
  Eigen::VectorXd fixed_marginal;
  Eigen::VectorXd moving_marginal;

  int bins() const { return static_cast<int>(p.rows()); }

  /// Normalizes raw non-negative counts and caches the marginals.
  static JointHistogram from_counts(const Eigen::MatrixXd& counts);
};

/// Linear map of [lo, hi] onto bin coordinates [0, bins - 1].
struct BinMap {
  double lo = 0.0;
  double scale = 1.0;
  int bins = 64;

  static BinMap fit(double lo, double hi, int bins);
  double operator()(double v) const {
    const double r = (v - lo) * scale;
    return r < 0.0 ? 0.0 : (r > bins - 1 ? bins - 1.0 : r);
  }
};

/// Throws DegenerateRangeError when either image is constant or grids differ.
JointHistogram joint_histogram(const Volume& fixed, const Volume& warped, int bins = 64,
                               HistogramKernel kernel = HistogramKernel::cubic);

/// Shannon entropy in nats with 0 log 0 = 0.
double entropy(const Eigen::Ref<const Eigen::VectorXd>& p);
double joint_entropy(const Eigen::MatrixXd& p);

/// (H(fixed) + H(moving)) / H(fixed, moving).
double nmi(const JointHistogram& hist);

/// Mean over the lattice knots inside `image_domain` of the summed squared
/// second derivatives of the displacement field (mixed terms counted twice).
double bending_energy(const BSplineGrid& grid, const Grid& image_domain);

/// d bending_energy / d displacement, one 3-vector per control point.
std::vector<Vec3> bending_energy_gradient(const BSplineGrid& grid, const Grid& image_domain);

struct RegistrationParams {
  double alpha = 0.005;
  int bins = 64;
  int levels = 3;
  /// Control spacing (mm) at the finest level; <= 0 means 5 voxels.
  double control_spacing = 0.0;
  int affine_iterations = 40;
  int bspline_iterations = 40;
  double tolerance = 1e-6;  // relative cost improvement that ends a level
  /// First line-search step, in voxels of the current level (affine) or as a
  /// fraction of control spacing (B-spline).
  double affine_step = 2.0;
  double bspline_step = 0.5;
  /// Average forward and inverse affine estimates through the matrix log.
  bool symmetric_affine = false;

  void validate() const;
};

/// Cost (1 - alpha) NMI - alpha P over every fixed voxel; points mapped
/// outside `moving` take the nearest border value. Affine transforms use P = 0.
double cost(const Volume& fixed, const Volume& moving, const AffineTransform& transform,
            const RegistrationParams& params, HistogramKernel kernel = HistogramKernel::box);
double cost(const Volume& fixed, const Volume& moving, const BSplineGrid& transform,
            const RegistrationParams& params, HistogramKernel kernel = HistogramKernel::box);

/// Accepted-iterate costs, one list per pyramid level (coarsest first).
using CostHistory = std::vector<std::vector<double>>;

struct AffineResult {
  AffineTransform transform;
  bool converged = false;
  CostHistory cost_history;
};

struct BSplineResult {
  BSplineGrid grid;
  bool converged = false;
  CostHistory cost_history;
};

/// 12-parameter affine maximizing cubic-Parzen NMI by multi-resolution
/// steepest ascent with finite-difference gradients. Maps fixed world
/// coordinates into moving world coordinates.
AffineResult affine_register(const Volume& fixed, const Volume& moving,
                             const RegistrationParams& params);

/// Coarse-to-fine FFD on top of `init`, analytic NMI and penalty gradients.
BSplineResult bspline_register(const Volume& fixed, const Volume& moving,
                               const AffineTransform& init, const RegistrationParams& params);

/// Analytic gradient of the cubic-Parzen cost with respect to the control
/// displacements, evaluated on the given images. Exposed for gradient checks.
std::vector<Vec3> cost_gradient(const Volume& fixed, const Volume& moving, const BSplineGrid& grid,
                                const RegistrationParams& params, double* cost_out = nullptr);

/// Cubic-Parzen cost as seen by the B-spline optimizer on these images.
double parzen_cost(const Volume& fixed, const Volume& moving, const BSplineGrid& grid,
                   const RegistrationParams& params);

}  // namespace jlf
