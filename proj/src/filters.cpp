#include "jlf/filters.hpp"

#include <cmath>
#include <vector>

#include "jlf/parallel.hpp"

namespace jlf {

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

void blur_axis(std::vector<double>& data, const std::array<int, 3>& d, int axis, double sigma) {
  if (!(sigma > 0.0) || d[axis] == 1) return;
  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  const int n = d[axis];
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? d[0] : static_cast<std::size_t>(d[0]) * d[1];
  const int a1 = axis == 0 ? 1 : 0, a2 = axis == 2 ? 1 : 2;
  const int lines_outer = d[a2];
  std::vector<double> out(data.size());
  parallel_for(0, lines_outer, [&](int q) {
    std::vector<double> line(n);
    for (int p = 0; p < d[a1]; ++p) {
      int idx[3] = {0, 0, 0};
      idx[a1] = p;
      idx[a2] = q;
      const std::size_t start = idx[0] + static_cast<std::size_t>(d[0]) * (idx[1] + static_cast<std::size_t>(d[1]) * idx[2]);
      for (int t = 0; t < n; ++t) line[t] = data[start + t * stride];
      for (int t = 0; t < n; ++t) {
        double acc = 0.0;
        for (int r = -radius; r <= radius; ++r) {
          const int s = std::clamp(t + r, 0, n - 1);
          acc += kernel[r + radius] * line[s];
        }
        out[start + t * stride] = acc;
      }
    }
  });
  data.swap(out);
}

}  // namespace

Volume gaussian_smooth(const Volume& in, const Vec3& sigma_voxels) {
  std::vector<double> buf(in.data().begin(), in.data().end());
  for (int a = 0; a < 3; ++a) blur_axis(buf, in.dims(), a, sigma_voxels[a]);
  std::vector<float> out(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) out[i] = static_cast<float>(buf[i]);
  return Volume(in.grid(), std::move(out));
}

Volume laplacian_of_gaussian(const Volume& in, double sigma_voxels) {
  const Volume s = gaussian_smooth(in, sigma_voxels);
  Volume out(in.grid(), 0.0f);
  const auto& d = in.dims();
  parallel_for(0, d[2], [&](int k) {
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        const double c = s(i, j, k);
        double lap = 0.0;
        if (d[0] > 1) lap += s.clamped(i - 1, j, k) + s.clamped(i + 1, j, k) - 2 * c;
        if (d[1] > 1) lap += s.clamped(i, j - 1, k) + s.clamped(i, j + 1, k) - 2 * c;
        if (d[2] > 1) lap += s.clamped(i, j, k - 1) + s.clamped(i, j, k + 1) - 2 * c;
        out(i, j, k) = static_cast<float>(lap);
      }
  });
  return out;
}

Volume decimate(const Volume& in, int min_dim) {
  Grid g = in.grid();
  int step[3];
  for (int a = 0; a < 3; ++a) {
    step[a] = in.dims()[a] >= min_dim ? 2 : 1;
    g.dims[a] = (in.dims()[a] + step[a] - 1) / step[a];
    g.spacing[a] *= step[a];
  }
  Volume out(g);
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) out(i, j, k) = in(i * step[0], j * step[1], k * step[2]);
  return out;
}

Volume pyramid_down(const Volume& in) {
  Vec3 sigma;
  for (int a = 0; a < 3; ++a) sigma[a] = in.dims()[a] >= 8 ? 1.4 : 0.0;
  return decimate(gaussian_smooth(in, sigma));
}

}  // namespace jlf
