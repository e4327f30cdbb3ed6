#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace jlf {

using Vec3 = Eigen::Vector3d;
using Label = std::uint16_t;

struct VoxelIndex {
  int i = 0;
  int j = 0;
  int k = 0;

  friend bool operator==(const VoxelIndex&, const VoxelIndex&) = default;
};

/// Axis-aligned voxel lattice: world = origin + index * spacing (mm).
struct Grid {
  std::array<int, 3> dims{1, 1, 1};
  Vec3 spacing = Vec3::Ones();
  Vec3 origin = Vec3::Zero();

  std::size_t size() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }

  bool contains(const VoxelIndex& v) const {
    return v.i >= 0 && v.j >= 0 && v.k >= 0 && v.i < dims[0] && v.j < dims[1] &&
           v.k < dims[2];
  }

  std::size_t offset(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
  }
  std::size_t offset(const VoxelIndex& v) const { return offset(v.i, v.j, v.k); }

  VoxelIndex index(std::size_t off) const {
    const auto nx = static_cast<std::size_t>(dims[0]);
    const auto ny = static_cast<std::size_t>(dims[1]);
    return {static_cast<int>(off % nx), static_cast<int>((off / nx) % ny),
            static_cast<int>(off / (nx * ny))};
  }

  /// Unchecked world position of a (possibly fractional) lattice coordinate.
  Vec3 world(double i, double j, double k) const {
    return origin + Vec3(i, j, k).cwiseProduct(spacing);
  }

  Vec3 continuous_index(const Vec3& p) const {
    return (p - origin).cwiseQuotient(spacing);
  }

  /// Physical extent spanned by voxel centres, (dims - 1) * spacing.
  Vec3 extent() const {
    return Vec3(dims[0] - 1, dims[1] - 1, dims[2] - 1).cwiseProduct(spacing);
  }

  Vec3 center() const { return origin + 0.5 * extent(); }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] < 1) throw std::invalid_argument("grid: dims must be >= 1");
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        throw std::invalid_argument("grid: spacing must be positive and finite");
      if (!std::isfinite(origin[a])) throw std::invalid_argument("grid: origin must be finite");
    }
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.dims == b.dims && a.spacing == b.spacing && a.origin == b.origin;
  }
};

/// World coordinate of a voxel; throws std::out_of_range outside the lattice.
inline Vec3 voxel_to_world(const Grid& grid, const VoxelIndex& v) {
  if (!grid.contains(v)) throw std::out_of_range("voxel_to_world: index outside grid");
  return grid.world(v.i, v.j, v.k);
}

/// Dense scalar field on a Grid, x-fastest storage.
template <typename T>
class Image {
 public:
  using value_type = T;

  Image() = default;
  explicit Image(Grid grid, T fill = T{}) : grid_(std::move(grid)) {
    grid_.validate();
    data_.assign(grid_.size(), fill);
  }
  Image(Grid grid, std::vector<T> data) : grid_(std::move(grid)), data_(std::move(data)) {
    grid_.validate();
    if (data_.size() != grid_.size())
      throw std::invalid_argument("image: data length does not match dims");
  }

  const Grid& grid() const { return grid_; }
  const std::array<int, 3>& dims() const { return grid_.dims; }
  std::size_t size() const { return data_.size(); }

  T& operator()(int i, int j, int k) { return data_[grid_.offset(i, j, k)]; }
  const T& operator()(int i, int j, int k) const { return data_[grid_.offset(i, j, k)]; }
  T& operator()(const VoxelIndex& v) { return data_[grid_.offset(v)]; }
  const T& operator()(const VoxelIndex& v) const { return data_[grid_.offset(v)]; }
  T& operator[](std::size_t off) { return data_[off]; }
  const T& operator[](std::size_t off) const { return data_[off]; }

  /// Border-replicating accessor.
  const T& clamped(int i, int j, int k) const {
    i = std::clamp(i, 0, grid_.dims[0] - 1);
    j = std::clamp(j, 0, grid_.dims[1] - 1);
    k = std::clamp(k, 0, grid_.dims[2] - 1);
    return data_[grid_.offset(i, j, k)];
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }

  friend bool operator==(const Image& a, const Image& b) {
    return a.grid_ == b.grid_ && a.data_ == b.data_;
  }

 private:
  Grid grid_;
  std::vector<T> data_;
};

using Volume = Image<float>;
using Legend = std::map<int, std::string>;

/// Integer label field plus its id -> structure-name legend.
class LabelMap : public Image<Label> {
 public:
  LabelMap() = default;
  LabelMap(Grid grid, Legend legend, Label fill = 0)
      : Image<Label>(std::move(grid), fill), legend_(std::move(legend)) {}
  LabelMap(Image<Label> image, Legend legend)
      : Image<Label>(std::move(image)), legend_(std::move(legend)) {}

  const Legend& legend() const { return legend_; }
  Legend& legend() { return legend_; }

  friend bool operator==(const LabelMap& a, const LabelMap& b) {
    return static_cast<const Image<Label>&>(a) == static_cast<const Image<Label>&>(b) &&
           a.legend_ == b.legend_;
  }

 private:
  Legend legend_;
};

inline Legend binary_legend(int id = 1, std::string name = "foreground") {
  return {{0, "background"}, {id, std::move(name)}};
}

/// Throws if a voxel carries an id missing from the legend.
void check_legend(const LabelMap& labels);

/// Throws std::invalid_argument when any intensity is NaN or infinite.
void check_finite(const Volume& volume);

float min_value(const Volume& volume);
float max_value(const Volume& volume);

/// Number of non-zero voxels.
std::size_t count_foreground(const Image<Label>& mask);

/// Non-zero id of a binary mask's legend, or 1 when the legend has none.
Label foreground_id(const LabelMap& mask);

}  // namespace jlf
