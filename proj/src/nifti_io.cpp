#include "jlf/nifti_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "json.hpp"

namespace jlf {

using nlohmann::json;

namespace {

// Explicit little-endian field codecs so the layout is host independent.
template <typename T>
void put(std::vector<char>& buf, std::size_t off, T value) {
  using U = std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t b = 0; b < sizeof(T); ++b)
    buf[off + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
}

template <typename T>
T get(const std::vector<char>& buf, std::size_t off) {
  using U = std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint32_t>;
  U bits = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b)
    bits |= static_cast<U>(static_cast<unsigned char>(buf[off + b])) << (8 * b);
  return std::bit_cast<T>(bits);
}

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NiftiError(NiftiErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<char> encode_header(const Grid& g, short datatype, short bitpix) {
  std::vector<char> h(nifti::kVoxOffset, 0);
  put<std::int32_t>(h, 0, nifti::kHeaderSize);
  put<std::int16_t>(h, 40, 3);
  for (int a = 0; a < 3; ++a) put<std::int16_t>(h, 42 + 2 * a, static_cast<std::int16_t>(g.dims[a]));
  for (int a = 3; a < 7; ++a) put<std::int16_t>(h, 42 + 2 * a, 1);
  put<std::int16_t>(h, 70, datatype);
  put<std::int16_t>(h, 72, bitpix);
  put<float>(h, 76, 1.0f);  // qfac
  for (int a = 0; a < 3; ++a) put<float>(h, 80 + 4 * a, static_cast<float>(g.spacing[a]));
  put<float>(h, 108, static_cast<float>(nifti::kVoxOffset));
  h[123] = 2;  // xyzt_units: mm
  put<std::int16_t>(h, 252, 1);  // qform_code: scanner
  put<std::int16_t>(h, 254, 1);  // sform_code: scanner
  for (int a = 0; a < 3; ++a) put<float>(h, 268 + 4 * a, static_cast<float>(g.origin[a]));
  for (int r = 0; r < 3; ++r) {
    put<float>(h, 280 + 16 * r + 4 * r, static_cast<float>(g.spacing[r]));
    put<float>(h, 280 + 16 * r + 12, static_cast<float>(g.origin[r]));
  }
  std::memcpy(h.data() + 344, "n+1\0", 4);
  return h;
}

void write_file(const fs::path& path, const std::vector<char>& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw NiftiError(NiftiErrorCode::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw NiftiError(NiftiErrorCode::io, "short write to " + path.string());
}

Legend legend_from_json(const json& j) {
  Legend legend;
  for (const auto& [key, value] : j.items()) legend[std::stoi(key)] = value.get<std::string>();
  return legend;
}

json legend_to_json(const Legend& legend) {
  json j = json::object();
  for (const auto& [id, name] : legend) j[std::to_string(id)] = name;
  return j;
}

}  // namespace

NiftiImage read_nifti_raw(const fs::path& path) {
  const std::vector<char> bytes = read_file(path);
  if (bytes.size() < static_cast<std::size_t>(nifti::kHeaderSize))
    throw NiftiError(NiftiErrorCode::truncated, path.string() + ": truncated header");

  const auto sizeof_hdr = get<std::int32_t>(bytes, 0);
  if (sizeof_hdr != nifti::kHeaderSize) {
    const auto swapped = static_cast<std::int32_t>(
        ((static_cast<std::uint32_t>(sizeof_hdr) & 0xFFu) << 24) |
        ((static_cast<std::uint32_t>(sizeof_hdr) & 0xFF00u) << 8) |
        ((static_cast<std::uint32_t>(sizeof_hdr) >> 8) & 0xFF00u) |
        (static_cast<std::uint32_t>(sizeof_hdr) >> 24));
    if (swapped == nifti::kHeaderSize)
      throw NiftiError(NiftiErrorCode::big_endian, path.string() + ": big-endian header");
    throw NiftiError(NiftiErrorCode::bad_header_size, path.string() + ": sizeof_hdr != 348");
  }
  if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0)
    throw NiftiError(NiftiErrorCode::bad_magic, path.string() + ": magic is not n+1");

  if (get<std::int16_t>(bytes, 40) != 3)
    throw NiftiError(NiftiErrorCode::bad_dimension, path.string() + ": dim[0] must be 3");

  NiftiImage img;
  for (int a = 0; a < 3; ++a) {
    img.grid.dims[a] = get<std::int16_t>(bytes, 42 + 2 * a);
    img.grid.spacing[a] = get<float>(bytes, 80 + 4 * a);
    img.grid.origin[a] = get<float>(bytes, 268 + 4 * a);
  }
  try {
    img.grid.validate();
  } catch (const std::invalid_argument& e) {
    throw NiftiError(NiftiErrorCode::bad_dimension, path.string() + ": " + e.what());
  }

  img.datatype = get<std::int16_t>(bytes, 70);
  int width = 0;
  switch (img.datatype) {
    case nifti::kUint8: width = 1; break;
    case nifti::kInt16: width = 2; break;
    case nifti::kFloat32: width = 4; break;
    default:
      throw NiftiError(NiftiErrorCode::unsupported_datatype,
                       path.string() + ": unsupported datatype " + std::to_string(img.datatype));
  }

  const float vox = get<float>(bytes, 108);
  const auto start = static_cast<std::size_t>(std::max(vox, static_cast<float>(nifti::kVoxOffset)));
  const std::size_t n = img.grid.size();
  if (bytes.size() < start + n * width)
    throw NiftiError(NiftiErrorCode::truncated, path.string() + ": truncated payload");

  const double slope = get<float>(bytes, 112);
  const double inter = get<float>(bytes, 116);
  const bool scaled = slope != 0.0 && !(slope == 1.0 && inter == 0.0);

  img.values.resize(n);
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t off = start + v * width;
    double raw = 0.0;
    switch (img.datatype) {
      case nifti::kUint8: raw = static_cast<unsigned char>(bytes[off]); break;
      case nifti::kInt16: raw = get<std::int16_t>(bytes, off); break;
      default: raw = get<float>(bytes, off); break;
    }
    img.values[v] = scaled ? raw * slope + inter : raw;
  }
  return img;
}

fs::path legend_sidecar_path(const fs::path& nifti_path) {
  fs::path p = nifti_path;
  if (p.extension() == ".nii") p.replace_extension();
  p += ".labels.json";
  return p;
}

void write_legend(const Legend& legend, const fs::path& path) {
  const std::string text = legend_to_json(legend).dump(2) + "\n";
  write_file(path, std::vector<char>(text.begin(), text.end()));
}

std::optional<Legend> read_legend(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return legend_from_json(json::parse(in));
  } catch (const std::exception& e) {
    throw NiftiError(NiftiErrorCode::bad_labels, path.string() + ": bad legend: " + e.what());
  }
}

namespace {

LabelMap labels_from_raw(const NiftiImage& raw, const fs::path& path) {
  Image<Label> image(raw.grid);
  for (std::size_t v = 0; v < raw.values.size(); ++v) {
    const double x = raw.values[v];
    if (x < 0 || x > 65535 || x != std::floor(x))
      throw NiftiError(NiftiErrorCode::bad_labels, path.string() + ": non-label voxel value");
    image[v] = static_cast<Label>(x);
  }
  Legend legend;
  if (auto side = read_legend(legend_sidecar_path(path))) {
    legend = *side;
  } else {
    legend[0] = "background";
    std::set<Label> ids(image.data().begin(), image.data().end());
    for (Label id : ids)
      if (id != 0) legend[id] = "label_" + std::to_string(id);
  }
  LabelMap out(std::move(image), std::move(legend));
  try {
    check_legend(out);
  } catch (const std::invalid_argument& e) {
    throw NiftiError(NiftiErrorCode::bad_labels, path.string() + ": " + e.what());
  }
  return out;
}

Volume volume_from_raw(const NiftiImage& raw) {
  std::vector<float> data(raw.values.size());
  for (std::size_t v = 0; v < data.size(); ++v) data[v] = static_cast<float>(raw.values[v]);
  return Volume(raw.grid, std::move(data));
}

}  // namespace

std::variant<Volume, LabelMap> read_nifti(const fs::path& path) {
  NiftiImage raw = read_nifti_raw(path);
  if (raw.datatype == nifti::kFloat32) return volume_from_raw(raw);
  return labels_from_raw(raw, path);
}

Volume read_volume(const fs::path& path) { return volume_from_raw(read_nifti_raw(path)); }

LabelMap read_labels(const fs::path& path) { return labels_from_raw(read_nifti_raw(path), path); }

void write_nifti(const Volume& volume, const fs::path& path) {
  volume.grid().validate();
  std::vector<char> bytes = encode_header(volume.grid(), nifti::kFloat32, 32);
  const std::size_t start = bytes.size();
  bytes.resize(start + 4 * volume.size());
  for (std::size_t v = 0; v < volume.size(); ++v) put<float>(bytes, start + 4 * v, volume[v]);
  write_file(path, bytes);
}

void write_nifti(const LabelMap& labels, const fs::path& path) {
  labels.grid().validate();
  Label top = 0;
  for (Label v : labels.data()) top = std::max(top, v);
  if (top > 32767)
    throw NiftiError(NiftiErrorCode::bad_labels, path.string() + ": label id exceeds int16");
  const bool small = top <= 255;
  std::vector<char> bytes =
      encode_header(labels.grid(), small ? nifti::kUint8 : nifti::kInt16, small ? 8 : 16);
  const std::size_t start = bytes.size();
  bytes.resize(start + (small ? 1 : 2) * labels.size());
  for (std::size_t v = 0; v < labels.size(); ++v) {
    if (small)
      bytes[start + v] = static_cast<char>(labels[v]);
    else
      put<std::int16_t>(bytes, start + 2 * v, static_cast<std::int16_t>(labels[v]));
  }
  write_file(path, bytes);
  write_legend(labels.legend(), legend_sidecar_path(path));
}

// ---------------------------------------------------------------------------

namespace {

fs::path resolve(const fs::path& base, const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string())
    throw ManifestError(ManifestErrorCode::malformed, std::string("manifest: missing string field '") + key + "'");
  fs::path p = j[key].get<std::string>();
  if (p.is_relative()) p = base / p;
  if (!fs::exists(p))
    throw ManifestError(ManifestErrorCode::missing_file, "manifest: missing file " + p.string(), p);
  return p;
}

TargetEntry parse_target(const fs::path& base, const json& t, std::size_t index) {
  TargetEntry e;
  e.id = t.value("id", "case" + std::to_string(index));
  e.image = resolve(base, t, "image");
  if (t.contains("ground_truth")) e.ground_truth = resolve(base, t, "ground_truth");
  if (t.contains("substructures")) {
    for (const auto& [name, value] : t["substructures"].items()) {
      json tmp = {{"p", value}};
      e.substructures[name] = resolve(base, tmp, "p");
    }
  }
  return e;
}

}  // namespace

AtlasManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError(ManifestErrorCode::missing_file, "manifest: cannot open " + path.string(), path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ManifestError(ManifestErrorCode::malformed, std::string("manifest: ") + e.what(), path);
  }
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");

  AtlasManifest m;
  try {
    if (!j.contains("atlases") || !j["atlases"].is_array())
      throw ManifestError(ManifestErrorCode::malformed, "manifest: 'atlases' array required", path);
    std::size_t index = 0;
    for (const auto& a : j["atlases"]) {
      AtlasEntry e;
      e.id = a.value("id", "atlas" + std::to_string(index++));
      e.image = resolve(base, a, "image");
      e.labels = resolve(base, a, "labels");
      if (a.contains("legend")) {
        e.legend = legend_from_json(a["legend"]);
      } else if (auto side = read_legend(legend_sidecar_path(e.labels))) {
        e.legend = *side;
      } else {
        throw ManifestError(ManifestErrorCode::malformed,
                            "manifest: atlas '" + e.id + "' has no legend", e.labels);
      }
      for (const auto& [id, name] : e.legend) {
        auto [it, inserted] = m.legend.emplace(id, name);
        if (!inserted && it->second != name)
          throw ManifestError(ManifestErrorCode::legend_conflict,
                              "manifest: legend conflict for id " + std::to_string(id) + " ('" +
                                  it->second + "' vs '" + name + "')",
                              e.labels);
      }
      m.atlases.push_back(std::move(e));
    }
    if (j.contains("targets")) {
      for (std::size_t t = 0; t < j["targets"].size(); ++t)
        m.targets.push_back(parse_target(base, j["targets"][t], t));
    } else if (j.contains("target")) {
      m.targets.push_back(parse_target(base, j["target"], 0));
    }
  } catch (const json::exception& e) {
    throw ManifestError(ManifestErrorCode::malformed, std::string("manifest: ") + e.what(), path);
  }
  return m;
}

void save_manifest(const AtlasManifest& manifest, const fs::path& path) {
  const fs::path base = path.has_parent_path() ? fs::absolute(path.parent_path()) : fs::current_path();
  auto rel = [&](const fs::path& p) {
    std::error_code ec;
    fs::path r = fs::relative(fs::absolute(p), base, ec);
    return (ec || r.empty()) ? p.string() : r.generic_string();
  };
  json j;
  j["atlases"] = json::array();
  for (const auto& a : manifest.atlases)
    j["atlases"].push_back({{"id", a.id},
                            {"image", rel(a.image)},
                            {"labels", rel(a.labels)},
                            {"legend", legend_to_json(a.legend)}});
  j["targets"] = json::array();
  for (const auto& t : manifest.targets) {
    json e = {{"id", t.id}, {"image", rel(t.image)}};
    if (t.ground_truth) e["ground_truth"] = rel(*t.ground_truth);
    if (!t.substructures.empty()) {
      e["substructures"] = json::object();
      for (const auto& [name, p] : t.substructures) e["substructures"][name] = rel(p);
    }
    j["targets"].push_back(std::move(e));
  }
  const std::string text = j.dump(2) + "\n";
  write_file(path, std::vector<char>(text.begin(), text.end()));
}

}  // namespace jlf
