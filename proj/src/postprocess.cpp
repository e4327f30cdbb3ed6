#include "jlf/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "jlf/filters.hpp"
#include "jlf/parallel.hpp"

namespace jlf {

namespace {

std::vector<bool> foreground(const Image<Label>& mask) {
  std::vector<bool> out(mask.size());
  for (std::size_t v = 0; v < mask.size(); ++v) out[v] = mask[v] != 0;
  return out;
}

LabelMap from_bits(const LabelMap& like, const std::vector<bool>& bits) {
  const Label id = foreground_id(like);
  LabelMap out(like.grid(), like.legend(), 0);
  for (std::size_t v = 0; v < bits.size(); ++v) out[v] = bits[v] ? id : 0;
  return out;
}

// Separable 3-tap max (dilate) or min (erode) along every axis; voxels outside
// the volume take no part.
std::vector<bool> box3(const Grid& g, std::vector<bool> in, bool dilate) {
  const auto& d = g.dims;
  for (int axis = 0; axis < 3; ++axis) {
    if (d[axis] == 1) continue;
    std::vector<bool> out(in.size());
    for (int k = 0; k < d[2]; ++k)
      for (int j = 0; j < d[1]; ++j)
        for (int i = 0; i < d[0]; ++i) {
          int idx[3] = {i, j, k};
          bool acc = in[g.offset(i, j, k)];
          for (int s = -1; s <= 1; s += 2) {
            int n[3] = {idx[0], idx[1], idx[2]};
            n[axis] += s;
            if (n[axis] < 0 || n[axis] >= d[axis]) continue;
            const bool b = in[g.offset(n[0], n[1], n[2])];
            acc = dilate ? (acc || b) : (acc && b);
          }
          out[g.offset(i, j, k)] = acc;
        }
    in.swap(out);
  }
  return in;
}

std::vector<bool> fill_background_pockets(const Grid& g, const std::vector<bool>& fg) {
  const auto& d = g.dims;
  std::vector<bool> reached(fg.size(), false);
  std::vector<std::size_t> stack;
  auto push = [&](int i, int j, int k) {
    const std::size_t v = g.offset(i, j, k);
    if (!fg[v] && !reached[v]) {
      reached[v] = true;
      stack.push_back(v);
    }
  };
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i)
        if (i == 0 || j == 0 || k == 0 || i == d[0] - 1 || j == d[1] - 1 || k == d[2] - 1) push(i, j, k);
  while (!stack.empty()) {
    const VoxelIndex p = g.index(stack.back());
    stack.pop_back();
    if (p.i > 0) push(p.i - 1, p.j, p.k);
    if (p.i + 1 < d[0]) push(p.i + 1, p.j, p.k);
    if (p.j > 0) push(p.i, p.j - 1, p.k);
    if (p.j + 1 < d[1]) push(p.i, p.j + 1, p.k);
    if (p.k > 0) push(p.i, p.j, p.k - 1);
    if (p.k + 1 < d[2]) push(p.i, p.j, p.k + 1);
  }
  std::vector<bool> out(fg.size());
  for (std::size_t v = 0; v < fg.size(); ++v) out[v] = fg[v] || !reached[v];
  return out;
}

// Squared 1D distance transform of a sampled function (lower envelope of parabolas).
void edt_1d(const double* f, double* out, int n, std::vector<int>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
      if (s > z[k]) break;
      --k;  // z[0] = -inf, so k never drops below 0
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) out[q] = inf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    out[q] = dq * dq + f[v[j]];
  }
}

}  // namespace

std::vector<double> distance_transform(const Grid& g, const std::vector<bool>& seed) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> f(seed.size());
  for (std::size_t v = 0; v < seed.size(); ++v) f[v] = seed[v] ? 0.0 : inf;
  const auto& d = g.dims;
  for (int axis = 0; axis < 3; ++axis) {
    const int n = d[axis];
    const std::size_t stride = axis == 0 ? 1 : axis == 1 ? d[0] : static_cast<std::size_t>(d[0]) * d[1];
    const int a1 = axis == 0 ? 1 : 0, a2 = axis == 2 ? 1 : 2;
    std::vector<double> line(n), res(n), zbuf;
    std::vector<int> vbuf;
    for (int q = 0; q < d[a2]; ++q)
      for (int p = 0; p < d[a1]; ++p) {
        int idx[3] = {0, 0, 0};
        idx[a1] = p;
        idx[a2] = q;
        const std::size_t start = g.offset(idx[0], idx[1], idx[2]);
        for (int t = 0; t < n; ++t) line[t] = f[start + t * stride];
        edt_1d(line.data(), res.data(), n, vbuf, zbuf);
        for (int t = 0; t < n; ++t) f[start + t * stride] = res[t];
      }
  }
  for (double& x : f) x = std::sqrt(x);
  return f;
}

namespace {

// 26-connected labelling; components are numbered in raster order of their first voxel.
std::vector<int> label_components(const Grid& g, const std::vector<bool>& fg, std::vector<std::size_t>& sizes) {
  std::vector<int> comp(fg.size(), -1);
  std::vector<std::size_t> stack;
  sizes.clear();
  for (std::size_t seed = 0; seed < fg.size(); ++seed) {
    if (!fg[seed] || comp[seed] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    std::size_t count = 0;
    comp[seed] = id;
    stack.push_back(seed);
    while (!stack.empty()) {
      const VoxelIndex p = g.index(stack.back());
      stack.pop_back();
      ++count;
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const VoxelIndex q{p.i + dx, p.j + dy, p.k + dz};
            if (!g.contains(q)) continue;
            const std::size_t o = g.offset(q);
            if (fg[o] && comp[o] < 0) {
              comp[o] = id;
              stack.push_back(o);
            }
          }
    }
    sizes.push_back(count);
  }
  return comp;
}

}  // namespace

LabelMap remove_islands(const LabelMap& mask) {
  std::vector<std::size_t> sizes;
  const auto comp = label_components(mask.grid(), foreground(mask), sizes);
  if (sizes.empty()) return mask;
  const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  std::vector<bool> out(comp.size());
  for (std::size_t v = 0; v < comp.size(); ++v) out[v] = comp[v] == keep;
  return from_bits(mask, out);
}

std::vector<LabelMap> connected_components(const LabelMap& mask) {
  std::vector<std::size_t> sizes;
  const auto comp = label_components(mask.grid(), foreground(mask), sizes);
  std::vector<LabelMap> parts;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    std::vector<bool> bits(comp.size());
    for (std::size_t v = 0; v < comp.size(); ++v) bits[v] = comp[v] == static_cast<int>(c);
    parts.push_back(from_bits(mask, bits));
  }
  return parts;
}

LabelMap fill_holes(const LabelMap& mask) {
  const Grid& g = mask.grid();
  std::vector<bool> cur = foreground(mask);
  while (true) {
    std::vector<bool> next = fill_background_pockets(g, cur);
    next = box3(g, box3(g, std::move(next), true), false);
    if (next == cur) break;
    cur.swap(next);
  }
  return from_bits(mask, cur);
}

PerceptronModel train_perceptron(const Features& x, const std::vector<int>& labels, int epochs) {
  const Eigen::Index n = x.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw std::invalid_argument("perceptron: size mismatch");
  if (epochs < 1) throw std::invalid_argument("perceptron: epochs must be >= 1");
  const bool has_pos = std::count(labels.begin(), labels.end(), 1) > 0;
  const bool has_neg = std::count(labels.begin(), labels.end(), -1) > 0;
  if (!has_pos || !has_neg) throw std::invalid_argument("perceptron: need examples of both classes");
  if (std::any_of(labels.begin(), labels.end(), [](int y) { return y != 1 && y != -1; }))
    throw std::invalid_argument("perceptron: labels must be +1 or -1");

  PerceptronModel m;
  m.mean = x.colwise().mean().transpose();
  const Features centred = x.rowwise() - m.mean.transpose();
  m.scale = (centred.array().square().colwise().sum() / static_cast<double>(n)).sqrt().transpose();
  for (int f = 0; f < 4; ++f)
    if (!(m.scale[f] > 0.0)) m.scale[f] = 1.0;
  const Features z = centred.array().rowwise() / m.scale.transpose().array();

  for (int e = 0; e < epochs; ++e) {
    int errors = 0;
    for (Eigen::Index r = 0; r < n; ++r) {
      const double y = labels[static_cast<std::size_t>(r)];
      const double s = m.weights.dot(z.row(r).transpose()) + m.bias;
      if (y * s <= 0.0) {
        m.weights += y * z.row(r).transpose();
        m.bias += y;
        ++errors;
      }
    }
    m.epochs_run = e + 1;
    m.final_errors = errors;
    if (errors == 0) break;
  }
  return m;
}

CollisionResult resolve_collisions(const std::vector<LabelMap>& masks, const Volume& target, int epochs) {
  CollisionResult result;
  result.masks = masks;
  if (masks.size() < 2) return result;
  const Grid& g = target.grid();
  for (const auto& m : masks)
    if (!(m.grid() == g)) throw std::invalid_argument("resolve_collisions: masks must share the target grid");

  const std::size_t n = masks.size();
  std::vector<std::vector<bool>> cur(n);
  for (std::size_t s = 0; s < n; ++s) cur[s] = foreground(masks[s]);
  std::vector<int> claims(g.size(), 0);
  for (std::size_t v = 0; v < g.size(); ++v)
    for (std::size_t s = 0; s < n; ++s) claims[v] += cur[s][v];

  // Statistics of the uncontested part (mu, c) and of the full mask (fallback centroid).
  struct Stats {
    double mu = 0.0;
    Vec3 centroid = Vec3::Zero();
    Vec3 full_centroid = Vec3::Zero();
    std::size_t own = 0;
  };
  std::vector<Stats> stats(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t total = 0;
    for (std::size_t v = 0; v < g.size(); ++v) {
      if (!cur[s][v]) continue;
      const VoxelIndex p = g.index(v);
      const Vec3 w = g.world(p.i, p.j, p.k);
      stats[s].full_centroid += w;
      ++total;
      if (claims[v] == 1) {
        stats[s].mu += target[v];
        stats[s].centroid += w;
        ++stats[s].own;
      }
    }
    if (total) stats[s].full_centroid /= static_cast<double>(total);
    if (stats[s].own) {
      stats[s].mu /= static_cast<double>(stats[s].own);
      stats[s].centroid /= static_cast<double>(stats[s].own);
    }
  }
  for (std::size_t v = 0; v < g.size(); ++v) result.contested += claims[v] > 1;
  if (result.contested == 0) return result;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return foreground_id(masks[a]) < foreground_id(masks[b]); });

  for (std::size_t ia = 0; ia < n; ++ia)
    for (std::size_t ib = ia + 1; ib < n; ++ib) {
      const std::size_t a = order[ia], b = order[ib];
      std::vector<std::size_t> seam;
      for (std::size_t v = 0; v < g.size(); ++v)
        if (cur[a][v] && cur[b][v]) seam.push_back(v);
      if (seam.empty()) continue;

      auto feature = [&](std::size_t v) {
        const VoxelIndex p = g.index(v);
        const Vec3 w = g.world(p.i, p.j, p.k);
        return Eigen::Vector4d(target[v] - stats[a].mu, target[v] - stats[b].mu, (w - stats[a].centroid).norm(),
                               (w - stats[b].centroid).norm());
      };

      bool use_perceptron = stats[a].own > 0 && stats[b].own > 0;
      PerceptronModel model;
      if (use_perceptron) {
        std::vector<std::size_t> rows;
        std::vector<int> labels;
        for (std::size_t v = 0; v < g.size(); ++v) {
          if (claims[v] != 1) continue;
          if (masks[a][v]) {
            rows.push_back(v);
            labels.push_back(1);
          } else if (masks[b][v]) {
            rows.push_back(v);
            labels.push_back(-1);
          }
        }
        Features x(static_cast<Eigen::Index>(rows.size()), 4);
        for (std::size_t r = 0; r < rows.size(); ++r) x.row(static_cast<Eigen::Index>(r)) = feature(rows[r]).transpose();
        model = train_perceptron(x, labels, epochs);
      } else {
        result.fallback_used = true;
      }

      for (std::size_t v : seam) {
        bool a_wins;
        if (use_perceptron) {
          a_wins = model.positive(feature(v));
        } else {
          const VoxelIndex p = g.index(v);
          const Vec3 w = g.world(p.i, p.j, p.k);
          a_wins = (w - stats[a].full_centroid).norm() <= (w - stats[b].full_centroid).norm();
        }
        (a_wins ? cur[b] : cur[a])[v] = false;
      }
    }

  for (std::size_t s = 0; s < n; ++s) result.masks[s] = from_bits(masks[s], cur[s]);
  return result;
}

void LevelSetParams::validate() const {
  if (iterations < 0) throw std::invalid_argument("level set: iterations must be >= 0");
  if (!(time_step > 0.0)) throw std::invalid_argument("level set: time step must be positive");
  if (smoothing_weight < 0.0 || edge_weight < 0.0) throw std::invalid_argument("level set: weights must be >= 0");
  if (time_step * (edge_weight + 6.0 * smoothing_weight) > 1.0)
    throw std::invalid_argument("level set: time step violates dt (w_e + 6 w_s) <= 1");
  if (band < 1) throw std::invalid_argument("level set: band must be >= 1");
  if (!(log_sigma > 0.0)) throw std::invalid_argument("level set: LoG sigma must be positive");
}

namespace {

std::vector<double> signed_distance(const Grid& g, const std::vector<bool>& inside) {
  std::vector<bool> outside(inside.size());
  for (std::size_t v = 0; v < inside.size(); ++v) outside[v] = !inside[v];
  const auto d_out = distance_transform(g, inside);
  const auto d_in = distance_transform(g, outside);
  std::vector<double> phi(inside.size());
  for (std::size_t v = 0; v < inside.size(); ++v) {
    // A mask covering the whole volume has no outside: treat as far inside.
    const double din = std::isfinite(d_in[v]) ? d_in[v] : 1e6;
    phi[v] = inside[v] ? -(din - 0.5) : d_out[v] - 0.5;
  }
  return phi;
}

struct Front {
  std::vector<double> phi;
  std::vector<std::size_t> band;
};

double update(const Grid& g, const std::vector<double>& phi, std::size_t v, double speed, const LevelSetParams& p) {
  const VoxelIndex x = g.index(v);
  auto at = [&](int di, int dj, int dk) {
    const int i = std::clamp(x.i + di, 0, g.dims[0] - 1);
    const int j = std::clamp(x.j + dj, 0, g.dims[1] - 1);
    const int k = std::clamp(x.k + dk, 0, g.dims[2] - 1);
    return phi[g.offset(i, j, k)];
  };
  const double c = phi[v];
  const double xm = at(-1, 0, 0), xp = at(1, 0, 0), ym = at(0, -1, 0), yp = at(0, 1, 0);
  const double zm = at(0, 0, -1), zp = at(0, 0, 1);
  const double dxm = c - xm, dxp = xp - c, dym = c - ym, dyp = yp - c, dzm = c - zm, dzp = zp - c;

  double grad;
  if (speed > 0.0) {
    grad = std::sqrt(std::pow(std::max(dxm, 0.0), 2) + std::pow(std::min(dxp, 0.0), 2) +
                     std::pow(std::max(dym, 0.0), 2) + std::pow(std::min(dyp, 0.0), 2) +
                     std::pow(std::max(dzm, 0.0), 2) + std::pow(std::min(dzp, 0.0), 2));
  } else {
    grad = std::sqrt(std::pow(std::min(dxm, 0.0), 2) + std::pow(std::max(dxp, 0.0), 2) +
                     std::pow(std::min(dym, 0.0), 2) + std::pow(std::max(dyp, 0.0), 2) +
                     std::pow(std::min(dzm, 0.0), 2) + std::pow(std::max(dzp, 0.0), 2));
  }

  double curvature = 0.0;
  if (p.smoothing_weight > 0.0) {
    const double fx = 0.5 * (xp - xm), fy = 0.5 * (yp - ym), fz = 0.5 * (zp - zm);
    const double fxx = xp - 2 * c + xm, fyy = yp - 2 * c + ym, fzz = zp - 2 * c + zm;
    const double fxy = 0.25 * (at(1, 1, 0) - at(1, -1, 0) - at(-1, 1, 0) + at(-1, -1, 0));
    const double fxz = 0.25 * (at(1, 0, 1) - at(1, 0, -1) - at(-1, 0, 1) + at(-1, 0, -1));
    const double fyz = 0.25 * (at(0, 1, 1) - at(0, 1, -1) - at(0, -1, 1) + at(0, -1, -1));
    const double g2 = fx * fx + fy * fy + fz * fz;
    if (g2 > 1e-12) {
      curvature = (fxx * (fy * fy + fz * fz) + fyy * (fx * fx + fz * fz) + fzz * (fx * fx + fy * fy) -
                   2.0 * (fx * fy * fxy + fx * fz * fxz + fy * fz * fyz)) /
                  g2;
      curvature = std::clamp(curvature, -3.0, 3.0);
    }
  }
  return c + p.time_step * (p.smoothing_weight * curvature - p.edge_weight * speed * grad);
}

}  // namespace

std::vector<LabelMap> level_set_refine(const std::vector<LabelMap>& masks, const Volume& target,
                                       const LevelSetParams& params) {
  params.validate();
  const Grid& g = target.grid();
  for (const auto& m : masks) {
    if (!(m.grid() == g)) throw std::invalid_argument("level_set_refine: mask and target grids differ");
    if (count_foreground(m) == 0) throw std::invalid_argument("level_set_refine: empty mask");
  }
  if (masks.empty() || params.iterations == 0) return masks;

  const std::size_t n = masks.size();
  std::vector<Front> fronts(n);
  std::vector<bool> in_any_band(g.size(), false);
  for (std::size_t s = 0; s < n; ++s) {
    fronts[s].phi = signed_distance(g, foreground(masks[s]));
    for (std::size_t v = 0; v < g.size(); ++v)
      if (std::abs(fronts[s].phi[v]) <= params.band) {
        fronts[s].band.push_back(v);
        in_any_band[v] = true;
      }
  }

  const Volume log = laplacian_of_gaussian(target, params.log_sigma);
  double ref = 0.0;
  std::size_t count = 0;
  for (std::size_t v = 0; v < g.size(); ++v)
    if (in_any_band[v]) {
      ref += std::abs(log[v]);
      ++count;
    }
  ref = count && ref > 0.0 ? ref / static_cast<double>(count) : 1.0;
  std::vector<double> speed(g.size(), 0.0);
  for (std::size_t v = 0; v < g.size(); ++v)
    if (in_any_band[v]) speed[v] = -log[v] / (std::abs(log[v]) + ref);

  // owner[v]: structure holding v, -1 for none.
  std::vector<int> owner(g.size(), -1);
  auto recompute_owner = [&] {
    std::fill(owner.begin(), owner.end(), -1);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t v = 0; v < g.size(); ++v)
        if (fronts[s].phi[v] < 0.0 && owner[v] < 0) owner[v] = static_cast<int>(s);
  };
  recompute_owner();

  std::vector<std::vector<double>> next(n);
  for (int it = 0; it < params.iterations; ++it) {
    for (std::size_t s = 0; s < n; ++s) {
      next[s] = fronts[s].phi;
      const auto& band = fronts[s].band;
      parallel_for(0, static_cast<int>(band.size()), [&](int b) {
        const std::size_t v = band[b];
        double value = update(g, fronts[s].phi, v, speed[v], params);
        // Another structure's voxel stays closed to this front.
        if (value < 0.0 && owner[v] >= 0 && owner[v] != static_cast<int>(s)) value = fronts[s].phi[v];
        next[s][v] = value;
      });
    }
    if (n > 1) {
      // Simultaneous first claims on one voxel: most negative phi wins, then lower index.
      for (std::size_t v = 0; v < g.size(); ++v) {
        if (owner[v] >= 0) continue;
        int winner = -1;
        for (std::size_t s = 0; s < n; ++s)
          if (next[s][v] < 0.0 && (winner < 0 || next[s][v] < next[winner][v])) winner = static_cast<int>(s);
        if (winner < 0) continue;
        for (std::size_t s = 0; s < n; ++s)
          if (static_cast<int>(s) != winner && next[s][v] < 0.0) next[s][v] = fronts[s].phi[v];
      }
    }
    for (std::size_t s = 0; s < n; ++s) fronts[s].phi.swap(next[s]);
    recompute_owner();
  }

  std::vector<LabelMap> out;
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<bool> bits(g.size());
    for (std::size_t v = 0; v < g.size(); ++v) bits[v] = fronts[s].phi[v] < 0.0;
    out.push_back(from_bits(masks[s], bits));
  }
  return out;
}

LabelMap level_set_refine(const LabelMap& mask, const Volume& target, const LevelSetParams& params) {
  return level_set_refine(std::vector<LabelMap>{mask}, target, params).front();
}

PostprocessResult postprocess_chain(const std::vector<LabelMap>& masks, const Volume& target,
                                    const PostprocessParams& params) {
  params.level_set.validate();
  PostprocessResult result;
  if (masks.empty()) return result;
  const std::size_t n = masks.size();
  if (params.trace) result.trace.assign(n, {});
  auto snapshot = [&](const std::vector<LabelMap>& stage) {
    if (!params.trace) return;
    for (std::size_t s = 0; s < n; ++s) result.trace[s].push_back(stage[s]);
  };

  std::vector<LabelMap> stage(n);
  parallel_for(0, static_cast<int>(n), [&](int s) { stage[s] = remove_islands(masks[s]); });
  snapshot(stage);
  parallel_for(0, static_cast<int>(n), [&](int s) { stage[s] = fill_holes(stage[s]); });
  snapshot(stage);
  CollisionResult collisions = resolve_collisions(stage, target, params.perceptron_epochs);
  result.collision_fallback = collisions.fallback_used;
  stage = std::move(collisions.masks);
  snapshot(stage);

  // Structures emptied by the earlier stages have no front to evolve.
  std::vector<std::size_t> live;
  std::vector<LabelMap> fronts;
  for (std::size_t s = 0; s < n; ++s)
    if (count_foreground(stage[s]) > 0) {
      live.push_back(s);
      fronts.push_back(stage[s]);
    }
  if (!fronts.empty()) {
    auto refined = level_set_refine(fronts, target, params.level_set);
    for (std::size_t t = 0; t < live.size(); ++t) stage[live[t]] = std::move(refined[t]);
  }
  snapshot(stage);
  result.masks = std::move(stage);
  return result;
}

}  // namespace jlf
