#include "jlf/image.hpp"

#include <algorithm>
#include <limits>

namespace jlf {

void check_legend(const LabelMap& labels) {
  std::vector<bool> seen(std::numeric_limits<Label>::max() + 1, false);
  for (Label v : labels.data()) seen[v] = true;
  for (std::size_t id = 0; id < seen.size(); ++id) {
    if (seen[id] && !labels.legend().contains(static_cast<int>(id)))
      throw std::invalid_argument("label map: id " + std::to_string(id) +
                                  " is missing from the legend");
  }
}

void check_finite(const Volume& volume) {
  for (float v : volume.data())
    if (!std::isfinite(v)) throw std::invalid_argument("volume: non-finite intensity");
}

float min_value(const Volume& volume) {
  const auto d = volume.data();
  return d.empty() ? 0.0f : *std::min_element(d.begin(), d.end());
}

float max_value(const Volume& volume) {
  const auto d = volume.data();
  return d.empty() ? 0.0f : *std::max_element(d.begin(), d.end());
}

std::size_t count_foreground(const Image<Label>& mask) {
  return static_cast<std::size_t>(
      std::count_if(mask.data().begin(), mask.data().end(), [](Label v) { return v != 0; }));
}

Label foreground_id(const LabelMap& mask) {
  for (const auto& [id, name] : mask.legend())
    if (id != 0) return static_cast<Label>(id);
  return 1;
}

}  // namespace jlf
