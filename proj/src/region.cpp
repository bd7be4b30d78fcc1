#include "outfit/region.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace outfit {

bool LabelSchema::is_editable(int label) const {
  return std::find(editable.begin(), editable.end(), label) != editable.end();
}

int LabelSchema::label_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

void LabelSchema::check() const {
  if (size() < 2) throw std::invalid_argument("label schema needs at least 2 labels");
  if (size() > 256) throw std::invalid_argument("label schema supports at most 256 labels");
  std::set<std::string> seen(names.begin(), names.end());
  if (seen.size() != names.size()) throw std::invalid_argument("label names must be unique");
  for (int e : editable) {
    if (e <= 0 || e >= size()) throw std::invalid_argument("editable label " + std::to_string(e) + " outside 1..n-1");
  }
}

LabelSchema LabelSchema::outfit_default() {
  return {{"background", "face", "hair", "top", "bottom", "outer", "shoes", "bag"},
          {labels::top, labels::bottom, labels::outer}};
}

bool operator==(const LabelSchema& a, const LabelSchema& b) { return a.names == b.names && a.editable == b.editable; }

RegionMap::RegionMap(int height, int width, std::uint8_t fill)
    : height_(height), width_(width), labels_(static_cast<std::size_t>(height) * width, fill) {
  if (height < 0 || width < 0) throw std::invalid_argument("negative region map size");
}

RegionMap::RegionMap(int height, int width, std::vector<std::uint8_t> labels)
    : height_(height), width_(width), labels_(std::move(labels)) {
  if (labels_.size() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("region map label count does not match H*W");
  }
}

std::vector<std::size_t> RegionMap::histogram(int n) const {
  std::vector<std::size_t> counts(n, 0);
  for (auto l : labels_) {
    if (l < n) ++counts[l];
  }
  return counts;
}

std::vector<bool> RegionMap::presence(int n) const {
  auto counts = histogram(n);
  std::vector<bool> p(n);
  for (int i = 0; i < n; ++i) p[i] = counts[i] > 0;
  return p;
}

std::size_t BinaryMask::area() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

FeatureMap::FeatureMap(int height, int width, int depth)
    : height_(height), width_(width), depth_(depth), data_(static_cast<std::size_t>(height) * width * depth, 0.0f) {}

std::span<const float> FeatureMap::pixel(int y, int x) const {
  return {data_.data() + (static_cast<std::size_t>(y) * width_ + x) * depth_, static_cast<std::size_t>(depth_)};
}

std::span<float> FeatureMap::pixel(int y, int x) {
  return {data_.data() + (static_cast<std::size_t>(y) * width_ + x) * depth_, static_cast<std::size_t>(depth_)};
}

bool FeatureMap::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float f) { return std::isfinite(f); });
}

OutfitCode::OutfitCode(TextureCode t, ShapeCode s) : texture(std::move(t)), shape(std::move(s)) {
  if (texture.regions() != shape.regions()) throw std::invalid_argument("texture/shape region counts differ");
}

void OutfitCode::set_present(int i, bool p) {
  texture.set_present(i, p);
  shape.set_present(i, p);
}

std::vector<double> OutfitCode::flatten() const {
  std::vector<double> z;
  z.reserve(width());
  for (int i = 0; i < regions(); ++i) {
    auto t = texture.region(i);
    auto s = shape.region(i);
    z.insert(z.end(), t.begin(), t.end());
    z.insert(z.end(), s.begin(), s.end());
  }
  return z;
}

OutfitCode OutfitCode::unflatten(std::span<const double> z, int regions, int d_t, int d_s,
                                 const std::vector<bool>& presence) {
  if (z.size() != static_cast<std::size_t>(regions) * (d_t + d_s)) {
    throw std::invalid_argument("flattened code has length " + std::to_string(z.size()) + ", expected " +
                                std::to_string(regions * (d_t + d_s)));
  }
  if (presence.size() != static_cast<std::size_t>(regions)) throw std::invalid_argument("presence length mismatch");
  OutfitCode code(TextureCode(regions, d_t), ShapeCode(regions, d_s));
  for (int i = 0; i < regions; ++i) {
    code.set_garment(i, z.subspan(static_cast<std::size_t>(i) * (d_t + d_s), d_t + d_s));
    code.set_present(i, presence[i]);
  }
  return code;
}

std::vector<double> OutfitCode::garment(int i) const {
  std::vector<double> zi(texture.region(i).begin(), texture.region(i).end());
  zi.insert(zi.end(), shape.region(i).begin(), shape.region(i).end());
  return zi;
}

void OutfitCode::set_garment(int i, std::span<const double> zi) {
  if (zi.size() != static_cast<std::size_t>(garment_dim())) throw std::invalid_argument("garment code length mismatch");
  std::copy_n(zi.begin(), texture_dim(), texture.region(i).begin());
  std::copy(zi.begin() + texture_dim(), zi.end(), shape.region(i).begin());
}

ValidationReport validate_region_map(const RegionMap& m, const LabelSchema& schema, int expected_height,
                                     int expected_width) {
  ValidationReport report;
  if (expected_height >= 0 && expected_width >= 0 && (m.height() != expected_height || m.width() != expected_width)) {
    report.issues.push_back({"dimension_mismatch", "region map is " + std::to_string(m.height()) + "x" +
                                                       std::to_string(m.width()) + " but image is " +
                                                       std::to_string(expected_height) + "x" +
                                                       std::to_string(expected_width)});
  }
  std::set<int> bad;
  for (auto l : m.labels()) {
    if (l >= schema.size()) bad.insert(l);
  }
  for (int l : bad) {
    report.issues.push_back({"label_out_of_range", "label " + std::to_string(l) + " out of range (n=" +
                                                       std::to_string(schema.size()) + ")"});
  }
  return report;
}

TextureCode region_pool(const FeatureMap& v, const RegionMap& m, int n) {
  if (v.height() != m.height() || v.width() != m.width()) {
    throw std::invalid_argument("region_pool: feature map and region map sizes differ");
  }
  const int d = v.depth();
  std::vector<double> sums(static_cast<std::size_t>(n) * d, 0.0);
  std::vector<std::size_t> counts(n, 0);
  auto labels = m.labels();
  auto data = v.data();
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const int l = labels[p];
    if (l >= n) throw std::invalid_argument("region_pool: label " + std::to_string(l) + " out of range");
    ++counts[l];
    const float* f = data.data() + p * d;
    double* s = sums.data() + static_cast<std::size_t>(l) * d;
    for (int c = 0; c < d; ++c) s[c] += f[c];
  }
  TextureCode t(n, d);
  for (int i = 0; i < n; ++i) {
    if (counts[i] == 0) continue;
    t.set_present(i, true);
    auto out = t.region(i);
    for (int c = 0; c < d; ++c) out[c] = sums[static_cast<std::size_t>(i) * d + c] / static_cast<double>(counts[i]);
  }
  return t;
}

FeatureMap region_broadcast(const TextureCode& t, const RegionMap& m) {
  FeatureMap u(m.height(), m.width(), t.dim());
  auto labels = m.labels();
  auto out = u.data();
  const int d = t.dim();
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const int l = labels[p];
    if (l >= t.regions()) {
      throw std::invalid_argument("region_broadcast: label " + std::to_string(l) + " not covered by texture code");
    }
    if (!t.present(l)) continue;
    auto src = t.region(l);
    for (int c = 0; c < d; ++c) out[p * d + c] = static_cast<float>(src[c]);
  }
  return u;
}

BinaryMask binarize_region(const RegionMap& m, int label, int n) {
  if (label < 0 || label >= n) throw std::out_of_range("binarize_region: label " + std::to_string(label) + " out of range");
  BinaryMask mask{m.height(), m.width(), label, std::vector<std::uint8_t>(m.pixel_count(), 0)};
  auto labels = m.labels();
  for (std::size_t p = 0; p < labels.size(); ++p) mask.bits[p] = labels[p] == label ? 1 : 0;
  return mask;
}

}  // namespace outfit
