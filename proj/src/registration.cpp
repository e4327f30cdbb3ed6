#include "jlf/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include <unsupported/Eigen/MatrixFunctions>

#include "jlf/filters.hpp"
#include "jlf/parallel.hpp"
#include "jlf/resample.hpp"

namespace jlf {

// ---------------------------------------------------------------------------
// Histograms and entropies

JointHistogram JointHistogram::from_counts(const Eigen::MatrixXd& counts) {
  if (counts.rows() != counts.cols() || counts.rows() == 0)
    throw std::invalid_argument("joint histogram: counts must be square and non-empty");
  if ((counts.array() < 0.0).any()) throw std::invalid_argument("joint histogram: negative count");
  const double total = counts.sum();
  if (!(total > 0.0)) throw std::invalid_argument("joint histogram: zero mass");
  JointHistogram h;
  h.p = counts / total;
  h.fixed_marginal = h.p.rowwise().sum();
  h.moving_marginal = h.p.colwise().sum().transpose();
  return h;
}

BinMap BinMap::fit(double lo, double hi, int bins) {
  if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi))
    throw DegenerateRangeError("joint histogram: image has zero intensity range");
  if (bins < 2) throw std::invalid_argument("joint histogram: need at least 2 bins");
  BinMap m;
  m.lo = lo;
  m.bins = bins;
  m.scale = (bins - 1) / (hi - lo);
  return m;
}

namespace {

struct ParzenBins {
  int idx[4];
  double w[4];
};

inline ParzenBins parzen(double r, int bins) {
  ParzenBins p;
  const double f = std::floor(r);
  const int base = static_cast<int>(f);
  bspline::basis(r - f, p.w);
  for (int m = 0; m < 4; ++m) p.idx[m] = std::clamp(base - 1 + m, 0, bins - 1);
  return p;
}

inline int nearest_bin(double r) { return static_cast<int>(std::floor(r + 0.5)); }

inline void accumulate(Eigen::MatrixXd& h, double rf, double rm, HistogramKernel kernel, int bins) {
  if (kernel == HistogramKernel::box) {
    h(nearest_bin(rf), nearest_bin(rm)) += 1.0;
    return;
  }
  const ParzenBins f = parzen(rf, bins), m = parzen(rm, bins);
  for (int b = 0; b < 4; ++b)
    for (int a = 0; a < 4; ++a) h(f.idx[a], m.idx[b]) += f.w[a] * m.w[b];
}

// Sums per-slice partial histograms in slice order.
Eigen::MatrixXd reduce_slices(const std::vector<Eigen::MatrixXd>& parts, int bins) {
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(bins, bins);
  for (const auto& p : parts) total += p;
  return total;
}

}  // namespace

JointHistogram joint_histogram(const Volume& fixed, const Volume& warped, int bins,
                               HistogramKernel kernel) {
  if (!(fixed.grid() == warped.grid()))
    throw std::invalid_argument("joint histogram: images must share a grid");
  const BinMap fm = BinMap::fit(min_value(fixed), max_value(fixed), bins);
  const BinMap mm = BinMap::fit(min_value(warped), max_value(warped), bins);
  const int nz = fixed.dims()[2];
  const std::size_t plane = static_cast<std::size_t>(fixed.dims()[0]) * fixed.dims()[1];
  std::vector<Eigen::MatrixXd> parts(nz);
  parallel_for(0, nz, [&](int k) {
    parts[k] = Eigen::MatrixXd::Zero(bins, bins);
    for (std::size_t v = k * plane; v < (k + 1) * plane; ++v)
      accumulate(parts[k], fm(fixed[v]), mm(warped[v]), kernel, bins);
  });
  return JointHistogram::from_counts(reduce_slices(parts, bins));
}

double entropy(const Eigen::Ref<const Eigen::VectorXd>& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  return h;
}

double joint_entropy(const Eigen::MatrixXd& p) {
  double h = 0.0;
  for (Eigen::Index a = 0; a < p.rows(); ++a)
    for (Eigen::Index b = 0; b < p.cols(); ++b)
      if (p(a, b) > 0.0) h -= p(a, b) * std::log(p(a, b));
  return h;
}

double nmi(const JointHistogram& hist) {
  const double h1 = entropy(hist.fixed_marginal);
  const double h2 = entropy(hist.moving_marginal);
  const double h12 = joint_entropy(hist.p);
  if (h12 <= 0.0) {
    // Only a single occupied cell; both marginals are then degenerate too.
    if (h1 != 0.0 || h2 != 0.0) throw std::logic_error("nmi: zero joint entropy with non-zero marginals");
    return 2.0;
  }
  return (h1 + h2) / h12;
}

// ---------------------------------------------------------------------------
// Bending energy

namespace {

// Knot indices whose positions fall inside the image bounding box.
std::array<std::vector<int>, 3> interior_knots(const BSplineGrid& grid, const Grid& domain) {
  std::array<std::vector<int>, 3> out;
  for (int a = 0; a < 3; ++a) {
    const double lo = domain.origin[a], hi = domain.origin[a] + domain.extent()[a];
    const double tol = 1e-9 * grid.spacing()[a];
    for (int i = 0; i < grid.dims()[a]; ++i) {
      const double x = grid.origin()[a] + i * grid.spacing()[a];
      if (x >= lo - tol && x <= hi + tol) out[a].push_back(i);
    }
  }
  return out;
}

// At a knot (local coordinate 0) the cubic basis touches offsets -1, 0, +1.
constexpr double kB0[3] = {1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0};
constexpr double kB1[3] = {-0.5, 0.0, 0.5};
constexpr double kB2[3] = {1.0, -2.0, 1.0};

struct KnotStencil {
  // coefficient of neighbour (a, b, c) in each second derivative, order
  // xx, yy, zz, xy, xz, yz
  double c[6][3][3][3];
  static constexpr double multiplicity[6] = {1, 1, 1, 2, 2, 2};
};

KnotStencil knot_stencil(const Vec3& s) {
  KnotStencil k{};
  const int pairs[6][2] = {{0, 0}, {1, 1}, {2, 2}, {0, 1}, {0, 2}, {1, 2}};
  for (int t = 0; t < 6; ++t)
    for (int c = 0; c < 3; ++c)
      for (int b = 0; b < 3; ++b)
        for (int a = 0; a < 3; ++a) {
          const int idx[3] = {a, b, c};
          double v = 1.0;
          for (int ax = 0; ax < 3; ++ax) {
            const int order = (ax == pairs[t][0]) + (ax == pairs[t][1]);
            const double w = order == 0 ? kB0[idx[ax]] : order == 1 ? kB1[idx[ax]] : kB2[idx[ax]];
            v *= w / std::pow(s[ax], order);
          }
          k.c[t][a][b][c] = v;
        }
  return k;
}

// Separable evaluation with the derivative axes first, so an affine field
// cancels exactly before the 1/6 weights are applied.
Vec3 knot_term(std::array<Vec3, 27> v, int t, const Vec3& s) {
  const int pairs[6][2] = {{0, 0}, {1, 1}, {2, 2}, {0, 1}, {0, 2}, {1, 2}};
  int order[3] = {0, 0, 0};
  ++order[pairs[t][0]];
  ++order[pairs[t][1]];
  int axes[3], n = 0;
  for (int ax = 0; ax < 3; ++ax)
    if (order[ax]) axes[n++] = ax;
  for (int ax = 0; ax < 3; ++ax)
    if (!order[ax]) axes[n++] = ax;
  for (int ax : axes) {
    const int stride = ax == 0 ? 1 : ax == 1 ? 3 : 9;
    const double* base = order[ax] == 0 ? kB0 : order[ax] == 1 ? kB1 : kB2;
    const double scale = order[ax] == 0 ? 1.0 : order[ax] == 1 ? s[ax] : s[ax] * s[ax];
    const double w[3] = {base[0] / scale, base[1] / scale, base[2] / scale};
    for (int o = 0; o < 27; ++o)
      if ((o / stride) % 3 == 0) v[o] = w[0] * v[o] + w[1] * v[o + stride] + w[2] * v[o + 2 * stride];
  }
  return v[0];
}

template <typename Visit>
void for_each_knot_term(const BSplineGrid& grid, const Grid& domain, Visit&& visit) {
  const auto knots = interior_knots(grid, domain);
  const KnotStencil st = knot_stencil(grid.spacing());
  const auto& d = grid.dims();
  for (int k : knots[2])
    for (int j : knots[1])
      for (int i : knots[0]) {
        std::array<Vec3, 27> q;
        for (int c = 0; c < 3; ++c)
          for (int b = 0; b < 3; ++b)
            for (int a = 0; a < 3; ++a) {
              const int ii = i - 1 + a, jj = j - 1 + b, kk = k - 1 + c;
              const bool inside = ii >= 0 && ii < d[0] && jj >= 0 && jj < d[1] && kk >= 0 && kk < d[2];
              q[a + 3 * b + 9 * c] = inside ? grid.at(ii, jj, kk) : Vec3::Zero();
            }
        Vec3 h[6];
        for (int t = 0; t < 6; ++t) h[t] = knot_term(q, t, grid.spacing());
        visit(i, j, k, h, st);
      }
}

std::size_t knot_count(const BSplineGrid& grid, const Grid& domain) {
  const auto knots = interior_knots(grid, domain);
  return knots[0].size() * knots[1].size() * knots[2].size();
}

}  // namespace

double bending_energy(const BSplineGrid& grid, const Grid& image_domain) {
  const std::size_t n = knot_count(grid, image_domain);
  if (n == 0) return 0.0;
  double total = 0.0;
  for_each_knot_term(grid, image_domain, [&](int, int, int, const Vec3* h, const KnotStencil&) {
    for (int t = 0; t < 6; ++t) total += KnotStencil::multiplicity[t] * h[t].squaredNorm();
  });
  return total / static_cast<double>(n);
}

std::vector<Vec3> bending_energy_gradient(const BSplineGrid& grid, const Grid& image_domain) {
  std::vector<Vec3> g(grid.size(), Vec3::Zero());
  const std::size_t n = knot_count(grid, image_domain);
  if (n == 0) return g;
  const double scale = 2.0 / static_cast<double>(n);
  const auto& d = grid.dims();
  for_each_knot_term(grid, image_domain, [&](int i, int j, int k, const Vec3* h, const KnotStencil& st) {
    for (int c = 0; c < 3; ++c) {
      const int kk = k - 1 + c;
      if (kk < 0 || kk >= d[2]) continue;
      for (int b = 0; b < 3; ++b) {
        const int jj = j - 1 + b;
        if (jj < 0 || jj >= d[1]) continue;
        for (int a = 0; a < 3; ++a) {
          const int ii = i - 1 + a;
          if (ii < 0 || ii >= d[0]) continue;
          Vec3 acc = Vec3::Zero();
          for (int t = 0; t < 6; ++t) acc += (KnotStencil::multiplicity[t] * st.c[t][a][b][c]) * h[t];
          g[grid.offset(ii, jj, kk)] += scale * acc;
        }
      }
    }
  });
  return g;
}

void RegistrationParams::validate() const {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("registration: alpha must be in [0, 1)");
  if (bins < 8) throw std::invalid_argument("registration: bins must be >= 8");
  if (levels < 1) throw std::invalid_argument("registration: levels must be >= 1");
  if (affine_iterations < 0 || bspline_iterations < 0)
    throw std::invalid_argument("registration: iteration caps must be non-negative");
  if (!(tolerance >= 0.0)) throw std::invalid_argument("registration: tolerance must be >= 0");
  if (!(affine_step > 0.0) || !(bspline_step > 0.0))
    throw std::invalid_argument("registration: step sizes must be positive");
}

// ---------------------------------------------------------------------------
// Objective on one pyramid level

namespace {

// Separable cubic B-spline weights of a BSplineGrid along one image axis.
struct AxisWeights {
  std::vector<int> base;
  std::vector<std::array<double, 4>> w;
};

AxisWeights axis_weights(const BSplineGrid& g, const Grid& img, int axis) {
  AxisWeights aw;
  const int n = img.dims[axis];
  aw.base.resize(n);
  aw.w.resize(n);
  for (int i = 0; i < n; ++i) {
    const double x = img.origin[axis] + i * img.spacing[axis];
    const double t = (x - g.origin()[axis]) / g.spacing()[axis];
    const double f = std::floor(t);
    aw.base[i] = static_cast<int>(f) - 1;
    bspline::basis(t - f, aw.w[i].data());
  }
  return aw;
}

// Dense displacement of `g` sampled at every voxel of `img`.
std::vector<Vec3> dense_displacement(const BSplineGrid& g, const Grid& img) {
  const AxisWeights wx = axis_weights(g, img, 0), wy = axis_weights(g, img, 1), wz = axis_weights(g, img, 2);
  const auto& cd = g.dims();
  std::vector<Vec3> out(img.size(), Vec3::Zero());
  parallel_for(0, img.dims[2], [&](int k) {
    std::vector<Vec3> row(cd[0]);
    for (int j = 0; j < img.dims[1]; ++j) {
      for (int ci = 0; ci < cd[0]; ++ci) {
        Vec3 acc = Vec3::Zero();
        for (int c = 0; c < 4; ++c) {
          const int kk = wz.base[k] + c;
          if (kk < 0 || kk >= cd[2]) continue;
          for (int b = 0; b < 4; ++b) {
            const int jj = wy.base[j] + b;
            if (jj < 0 || jj >= cd[1]) continue;
            acc += (wy.w[j][b] * wz.w[k][c]) * g.at(ci, jj, kk);
          }
        }
        row[ci] = acc;
      }
      for (int i = 0; i < img.dims[0]; ++i) {
        Vec3 d = Vec3::Zero();
        for (int a = 0; a < 4; ++a) {
          const int ii = wx.base[i] + a;
          if (ii < 0 || ii >= cd[0]) continue;
          d += wx.w[i][a] * row[ii];
        }
        out[img.offset(i, j, k)] = d;
      }
    }
  });
  return out;
}

// Transposed spreading of per-voxel vectors onto control points.
std::vector<Vec3> spread_to_controls(const BSplineGrid& g, const Grid& img, const std::vector<Vec3>& field) {
  const AxisWeights wx = axis_weights(g, img, 0), wy = axis_weights(g, img, 1), wz = axis_weights(g, img, 2);
  const auto& cd = g.dims();
  std::vector<Vec3> out(g.size(), Vec3::Zero());
  std::vector<Vec3> row(cd[0]);
  for (int k = 0; k < img.dims[2]; ++k)
    for (int j = 0; j < img.dims[1]; ++j) {
      std::fill(row.begin(), row.end(), Vec3::Zero());
      bool any = false;
      for (int i = 0; i < img.dims[0]; ++i) {
        const Vec3& v = field[img.offset(i, j, k)];
        if (v.isZero(0.0)) continue;
        any = true;
        for (int a = 0; a < 4; ++a) {
          const int ii = wx.base[i] + a;
          if (ii < 0 || ii >= cd[0]) continue;
          row[ii] += wx.w[i][a] * v;
        }
      }
      if (!any) continue;
      for (int c = 0; c < 4; ++c) {
        const int kk = wz.base[k] + c;
        if (kk < 0 || kk >= cd[2]) continue;
        for (int b = 0; b < 4; ++b) {
          const int jj = wy.base[j] + b;
          if (jj < 0 || jj >= cd[1]) continue;
          const double wyz = wy.w[j][b] * wz.w[k][c];
          for (int ci = 0; ci < cd[0]; ++ci) out[g.offset(ci, jj, kk)] += wyz * row[ci];
        }
      }
    }
  return out;
}

class ParzenObjective {
 public:
  ParzenObjective(const Volume& fixed, const Volume& moving, int bins)
      : fixed_(fixed),
        moving_(moving),
        bins_(bins),
        fmap_(BinMap::fit(min_value(fixed), max_value(fixed), bins)),
        mmap_(BinMap::fit(min_value(moving), max_value(moving), bins)) {
    fbins_.resize(fixed.size());
    for (std::size_t v = 0; v < fixed.size(); ++v) fbins_[v] = parzen(fmap_(fixed[v]), bins_);
  }

  const Grid& grid() const { return fixed_.grid(); }

  /// NMI for a point mapping evaluated voxelwise by `map(i, j, k)`.
  template <typename Map>
  double nmi_of(Map&& map) const {
    const Grid& g = fixed_.grid();
    std::vector<Eigen::MatrixXd> parts(g.dims[2]);
    parallel_for(0, g.dims[2], [&](int k) {
      parts[k] = Eigen::MatrixXd::Zero(bins_, bins_);
      for (int j = 0; j < g.dims[1]; ++j)
        for (int i = 0; i < g.dims[0]; ++i) {
          add(parts[k], fbins_[g.offset(i, j, k)], mmap_(sample_linear_clamped(moving_, map(i, j, k))));
        }
    });
    return finish(reduce_slices(parts, bins_));
  }

  double nmi_affine(const AffineTransform& a) const {
    const Grid& g = fixed_.grid();
    return nmi_of([&](int i, int j, int k) { return a.apply(g.world(i, j, k)); });
  }

  double nmi_field(const BSplineGrid& t) const {
    const Grid& g = fixed_.grid();
    const auto disp = dense_displacement(t, g);
    return nmi_of([&](int i, int j, int k) {
      return Vec3(t.affine().apply(g.world(i, j, k)) + disp[g.offset(i, j, k)]);
    });
  }

  /// NMI plus d NMI / d control displacement.
  double nmi_field_gradient(const BSplineGrid& t, std::vector<Vec3>& grad) const {
    const Grid& g = fixed_.grid();
    const auto disp = dense_displacement(t, g);
    std::vector<double> r(g.size(), -1.0);
    std::vector<Vec3> dm(g.size(), Vec3::Zero());
    std::vector<Eigen::MatrixXd> parts(g.dims[2]);
    parallel_for(0, g.dims[2], [&](int k) {
      parts[k] = Eigen::MatrixXd::Zero(bins_, bins_);
      for (int j = 0; j < g.dims[1]; ++j)
        for (int i = 0; i < g.dims[0]; ++i) {
          const std::size_t v = g.offset(i, j, k);
          const Vec3 y = t.affine().apply(g.world(i, j, k)) + disp[v];
          r[v] = mmap_(sample_linear_clamped(moving_, y, &dm[v]));
          add(parts[k], fbins_[v], r[v]);
        }
    });
    const Eigen::MatrixXd counts = reduce_slices(parts, bins_);
    const double n = counts.sum();
    const double value = finish(counts);
    if (!(n > 0.0)) {
      grad.assign(t.size(), Vec3::Zero());
      return value;
    }
    const Eigen::MatrixXd p = counts / n;
    const Eigen::VectorXd p2 = p.colwise().sum().transpose();
    const double h12 = joint_entropy(p);
    Eigen::MatrixXd table(bins_, bins_);
    for (int a = 0; a < bins_; ++a)
      for (int b = 0; b < bins_; ++b) {
        const double lp = p(a, b) > 0 ? std::log(p(a, b)) : 0.0;
        const double lp2 = p2[b] > 0 ? std::log(p2[b]) : 0.0;
        table(a, b) = (-lp2 + value * lp) / h12;
      }

    std::vector<Vec3> per_voxel(g.size(), Vec3::Zero());
    parallel_for(0, g.dims[2], [&](int k) {
      for (int j = 0; j < g.dims[1]; ++j)
        for (int i = 0; i < g.dims[0]; ++i) {
          const std::size_t v = g.offset(i, j, k);
          if (r[v] < 0.0) continue;
          const double f = std::floor(r[v]);
          const int base = static_cast<int>(f);
          double dw[4];
          bspline::basis_d1(r[v] - f, dw);
          const ParzenBins& fb = fbins_[v];
          double s = 0.0;
          for (int m = 0; m < 4; ++m) {
            const int col = std::clamp(base - 1 + m, 0, bins_ - 1);
            double acc = 0.0;
            for (int a = 0; a < 4; ++a) acc += fb.w[a] * table(fb.idx[a], col);
            s += dw[m] * acc;
          }
          per_voxel[v] = (s / n * mmap_.scale) * dm[v];
        }
    });
    grad = spread_to_controls(t, g, per_voxel);
    return value;
  }

 private:
  void add(Eigen::MatrixXd& h, const ParzenBins& f, double rm) const {
    const ParzenBins m = parzen(rm, bins_);
    for (int b = 0; b < 4; ++b)
      for (int a = 0; a < 4; ++a) h(f.idx[a], m.idx[b]) += f.w[a] * m.w[b];
  }

  static double finish(const Eigen::MatrixXd& counts) {
    if (!(counts.sum() > 0.0)) return 0.0;  // no overlap
    return nmi(JointHistogram::from_counts(counts));
  }

  const Volume& fixed_;
  const Volume& moving_;
  int bins_;
  BinMap fmap_, mmap_;
  std::vector<ParzenBins> fbins_;
};

struct Pyramid {
  std::vector<Volume> levels;  // [0] finest
};

Pyramid build_pyramid(const Volume& v, int levels) {
  Pyramid p;
  p.levels.push_back(v);
  for (int l = 1; l < levels; ++l) p.levels.push_back(pyramid_down(p.levels.back()));
  return p;
}

double min_spacing(const Grid& g) { return g.spacing.minCoeff(); }

// Affine parameters: translation (mm) and a 3x3 linear deviation scaled by a
// characteristic radius so every parameter moves boundary points by ~mm.
struct AffineParameterization {
  Vec3 center;
  double radius;

  AffineTransform to_transform(const Eigen::Matrix<double, 12, 1>& q) const {
    Mat3 lin = Mat3::Identity();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) lin(r, c) += q[3 + 3 * r + c] / radius;
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = lin;
    m.topRightCorner<3, 1>() = center + q.head<3>() - lin * center;
    return AffineTransform(m);
  }
};

void check_monotone(const std::vector<double>& history) {
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i] < history[i - 1])
      throw std::logic_error("registration: accepted iterate decreased the cost");
}

}  // namespace

double cost(const Volume& fixed, const Volume& moving, const AffineTransform& transform,
            const RegistrationParams& params, HistogramKernel kernel) {
  params.validate();
  const Grid& g = fixed.grid();
  const BinMap fm = BinMap::fit(min_value(fixed), max_value(fixed), params.bins);
  const BinMap mm = BinMap::fit(min_value(moving), max_value(moving), params.bins);
  std::vector<Eigen::MatrixXd> parts(g.dims[2]);
  parallel_for(0, g.dims[2], [&](int k) {
    parts[k] = Eigen::MatrixXd::Zero(params.bins, params.bins);
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const double s = sample_linear_clamped(moving, transform.apply(g.world(i, j, k)));
        accumulate(parts[k], fm(fixed(i, j, k)), mm(s), kernel, params.bins);
      }
  });
  const Eigen::MatrixXd counts = reduce_slices(parts, params.bins);
  const double value = counts.sum() > 0 ? nmi(JointHistogram::from_counts(counts)) : 0.0;
  return (1.0 - params.alpha) * value;
}

double cost(const Volume& fixed, const Volume& moving, const BSplineGrid& transform,
            const RegistrationParams& params, HistogramKernel kernel) {
  params.validate();
  const Grid& g = fixed.grid();
  const BinMap fm = BinMap::fit(min_value(fixed), max_value(fixed), params.bins);
  const BinMap mm = BinMap::fit(min_value(moving), max_value(moving), params.bins);
  const auto disp = dense_displacement(transform, g);
  std::vector<Eigen::MatrixXd> parts(g.dims[2]);
  parallel_for(0, g.dims[2], [&](int k) {
    parts[k] = Eigen::MatrixXd::Zero(params.bins, params.bins);
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const Vec3 y = transform.affine().apply(g.world(i, j, k)) + disp[g.offset(i, j, k)];
        accumulate(parts[k], fm(fixed(i, j, k)), mm(sample_linear_clamped(moving, y)), kernel, params.bins);
      }
  });
  const Eigen::MatrixXd counts = reduce_slices(parts, params.bins);
  const double value = counts.sum() > 0 ? nmi(JointHistogram::from_counts(counts)) : 0.0;
  return (1.0 - params.alpha) * value - params.alpha * bending_energy(transform, g);
}

double parzen_cost(const Volume& fixed, const Volume& moving, const BSplineGrid& grid,
                   const RegistrationParams& params) {
  ParzenObjective obj(fixed, moving, params.bins);
  return (1.0 - params.alpha) * obj.nmi_field(grid) - params.alpha * bending_energy(grid, fixed.grid());
}

std::vector<Vec3> cost_gradient(const Volume& fixed, const Volume& moving, const BSplineGrid& grid,
                                const RegistrationParams& params, double* cost_out) {
  ParzenObjective obj(fixed, moving, params.bins);
  std::vector<Vec3> g;
  const double value = obj.nmi_field_gradient(grid, g);
  const auto pg = bending_energy_gradient(grid, fixed.grid());
  for (std::size_t c = 0; c < g.size(); ++c) g[c] = (1.0 - params.alpha) * g[c] - params.alpha * pg[c];
  if (cost_out)
    *cost_out = (1.0 - params.alpha) * value - params.alpha * bending_energy(grid, fixed.grid());
  return g;
}

// ---------------------------------------------------------------------------
// Affine

namespace {

AffineResult affine_forward(const Volume& fixed, const Volume& moving, const RegistrationParams& params) {
  using Params12 = Eigen::Matrix<double, 12, 1>;
  const Pyramid fp = build_pyramid(fixed, params.levels);
  const Pyramid mp = build_pyramid(moving, params.levels);
  const AffineParameterization param{fixed.grid().center(),
                                     std::max(0.5 * fixed.grid().extent().norm(), 1.0)};
  Params12 q = Params12::Zero();

  AffineResult result;
  bool level_converged = false;
  for (int l = params.levels - 1; l >= 0; --l) {
    const ParzenObjective obj(fp.levels[l], mp.levels[l], params.bins);
    const double voxel = min_spacing(fp.levels[l].grid());
    const double h = 0.5 * voxel;
    const double max_step = params.affine_step * voxel;
    const double min_step = 0.01 * voxel;
    auto f = [&](const Params12& x) { return (1.0 - params.alpha) * obj.nmi_affine(param.to_transform(x)); };

    std::vector<double> history{f(q)};
    double step = max_step;
    level_converged = false;
    for (int it = 0; it < params.affine_iterations; ++it) {
      Params12 grad;
      for (int p = 0; p < 12; ++p) {
        Params12 a = q, b = q;
        a[p] += h;
        b[p] -= h;
        grad[p] = (f(a) - f(b)) / (2.0 * h);
      }
      const double norm = grad.norm();
      if (!(norm > 0.0)) {
        level_converged = true;
        break;
      }
      const Params12 dir = grad / norm;
      bool accepted = false;
      double candidate = history.back();
      while (step >= min_step) {
        const Params12 trial = q + step * dir;
        candidate = f(trial);
        if (candidate > history.back()) {
          q = trial;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        level_converged = true;
        break;
      }
      const double gain = candidate - history.back();
      history.push_back(candidate);
      check_monotone(history);
      if (gain <= params.tolerance * std::abs(history.front())) {
        level_converged = true;
        break;
      }
      step = std::min(step * 1.5, max_step);
    }
    result.cost_history.push_back(std::move(history));
  }
  result.transform = param.to_transform(q);
  result.converged = level_converged;
  return result;
}

}  // namespace

AffineResult affine_register(const Volume& fixed, const Volume& moving, const RegistrationParams& params) {
  params.validate();
  // Range check up front so degenerate inputs fail before any work.
  BinMap::fit(min_value(fixed), max_value(fixed), params.bins);
  BinMap::fit(min_value(moving), max_value(moving), params.bins);

  AffineResult forward = affine_forward(fixed, moving, params);
  if (!params.symmetric_affine) return forward;

  const AffineResult backward = affine_forward(moving, fixed, params);
  const Mat4 log_f = forward.transform.matrix().log();
  const Mat4 log_b = backward.transform.inverse().matrix().log();
  Mat4 avg = (0.5 * (log_f + log_b)).exp();
  avg.row(3) << 0, 0, 0, 1;
  AffineResult out;
  out.transform = AffineTransform(avg);
  out.converged = forward.converged && backward.converged;
  out.cost_history = forward.cost_history;
  return out;
}

// ---------------------------------------------------------------------------
// B-spline

BSplineResult bspline_register(const Volume& fixed, const Volume& moving, const AffineTransform& init,
                               const RegistrationParams& params) {
  params.validate();
  if (!init.all_finite()) throw std::invalid_argument("bspline_register: non-finite initial affine");
  BinMap::fit(min_value(fixed), max_value(fixed), params.bins);
  BinMap::fit(min_value(moving), max_value(moving), params.bins);

  const Pyramid fp = build_pyramid(fixed, params.levels);
  const Pyramid mp = build_pyramid(moving, params.levels);
  const double finest = params.control_spacing > 0.0 ? params.control_spacing
                                                      : 5.0 * min_spacing(fixed.grid());
  const double coarsest = finest * std::pow(2.0, params.levels - 1);

  BSplineGrid grid = BSplineGrid::covering(fp.levels.back().grid(), Vec3::Constant(coarsest), init);
  BSplineResult result;
  bool level_converged = false;
  for (int l = params.levels - 1; l >= 0; --l) {
    if (l != params.levels - 1) grid = grid.refined();
    const Volume& f = fp.levels[l];
    const ParzenObjective obj(f, mp.levels[l], params.bins);
    const double voxel = min_spacing(f.grid());
    const double max_step = params.bspline_step * grid.spacing().minCoeff();
    const double min_step = 0.01 * voxel;

    auto value = [&](const BSplineGrid& g) {
      return (1.0 - params.alpha) * obj.nmi_field(g) - params.alpha * bending_energy(g, f.grid());
    };

    std::vector<double> history{value(grid)};
    double step = max_step;
    level_converged = false;
    for (int it = 0; it < params.bspline_iterations; ++it) {
      std::vector<Vec3> grad;
      obj.nmi_field_gradient(grid, grad);
      const auto pg = bending_energy_gradient(grid, f.grid());
      double largest = 0.0;
      for (std::size_t c = 0; c < grad.size(); ++c) {
        grad[c] = (1.0 - params.alpha) * grad[c] - params.alpha * pg[c];
        largest = std::max(largest, grad[c].norm());
      }
      if (!(largest > 0.0)) {
        level_converged = true;
        break;
      }
      bool accepted = false;
      double candidate = history.back();
      BSplineGrid trial = grid;
      while (step >= min_step) {
        for (std::size_t c = 0; c < grad.size(); ++c)
          trial.displacements()[c] = grid.displacements()[c] + (step / largest) * grad[c];
        candidate = value(trial);
        if (candidate > history.back()) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        level_converged = true;
        break;
      }
      grid = std::move(trial);
      const double gain = candidate - history.back();
      history.push_back(candidate);
      check_monotone(history);
      if (gain <= params.tolerance * std::abs(history.front())) {
        level_converged = true;
        break;
      }
      step = std::min(step * 1.5, max_step);
    }
    result.cost_history.push_back(std::move(history));
  }
  result.grid = std::move(grid);
  result.converged = level_converged;
  return result;
}

}  // namespace jlf
