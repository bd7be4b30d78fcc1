#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace outfit {

// Label ids of the default eight-region outfit schema.
namespace labels {
inline constexpr int background = 0;
inline constexpr int face = 1;
inline constexpr int hair = 2;
inline constexpr int top = 3;
inline constexpr int bottom = 4;
inline constexpr int outer = 5;
inline constexpr int shoes = 6;
inline constexpr int bag = 7;
}  // namespace labels

/// Region label vocabulary. Label 0 is always background; `editable` lists the
/// garment labels an edit may target.
struct LabelSchema {
  std::vector<std::string> names;
  std::vector<int> editable;

  int size() const { return static_cast<int>(names.size()); }
  bool is_editable(int label) const;
  int label_of(const std::string& name) const;  // -1 when unknown

  /// Throws std::invalid_argument when n < 2, names repeat, or an editable
  /// label is 0 or out of range.
  void check() const;

  static LabelSchema outfit_default();
};

bool operator==(const LabelSchema& a, const LabelSchema& b);

class RegionMap {
 public:
  RegionMap() = default;
  RegionMap(int height, int width, std::uint8_t fill = 0);
  RegionMap(int height, int width, std::vector<std::uint8_t> labels);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixel_count() const { return labels_.size(); }

  std::uint8_t at(int y, int x) const { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int y, int x, std::uint8_t label) { labels_[static_cast<std::size_t>(y) * width_ + x] = label; }

  std::span<const std::uint8_t> labels() const { return labels_; }
  std::span<std::uint8_t> labels() { return labels_; }

  /// Pixel count per label; labels >= n are ignored.
  std::vector<std::size_t> histogram(int n) const;
  std::vector<bool> presence(int n) const;

  friend bool operator==(const RegionMap&, const RegionMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> labels_;
};

struct BinaryMask {
  int height = 0;
  int width = 0;
  int region_label = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  std::size_t area() const;
};

/// H x W x depth feature grid, row-major with the depth index fastest.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int height, int width, int depth);

  int height() const { return height_; }
  int width() const { return width_; }
  int depth() const { return depth_; }

  std::span<const float> pixel(int y, int x) const;
  std::span<float> pixel(int y, int x);
  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  bool all_finite() const;

 private:
  int height_ = 0;
  int width_ = 0;
  int depth_ = 0;
  std::vector<float> data_;
};

/// n per-region vectors of length d plus a presence flag per region. Absent
/// regions carry the zero vector.
template <typename Tag>
class RegionCode {
 public:
  RegionCode() = default;
  RegionCode(int regions, int dim)
      : regions_(regions), dim_(dim), values_(static_cast<std::size_t>(regions) * dim, 0.0), presence_(regions, false) {}

  int regions() const { return regions_; }
  int dim() const { return dim_; }

  std::span<const double> region(int i) const { return {values_.data() + static_cast<std::size_t>(i) * dim_, static_cast<std::size_t>(dim_)}; }
  std::span<double> region(int i) { return {values_.data() + static_cast<std::size_t>(i) * dim_, static_cast<std::size_t>(dim_)}; }

  bool present(int i) const { return presence_[i]; }
  void set_present(int i, bool p) { presence_[i] = p; }
  const std::vector<bool>& presence() const { return presence_; }

  std::span<const double> flat() const { return values_; }
  std::span<double> flat() { return values_; }

  friend bool operator==(const RegionCode&, const RegionCode&) = default;

 private:
  int regions_ = 0;
  int dim_ = 0;
  std::vector<double> values_;
  std::vector<bool> presence_;
};

struct TextureTag {};
struct ShapeTag {};
using TextureCode = RegionCode<TextureTag>;
using ShapeCode = RegionCode<ShapeTag>;

/// z = [t_0; s_0; t_1; s_1; ...]: the flattened form is ordered per garment so
/// garment i occupies entries [i*(d_t+d_s), (i+1)*(d_t+d_s)).
struct OutfitCode {
  TextureCode texture;
  ShapeCode shape;

  OutfitCode() = default;
  OutfitCode(TextureCode t, ShapeCode s);

  int regions() const { return texture.regions(); }
  int texture_dim() const { return texture.dim(); }
  int shape_dim() const { return shape.dim(); }
  int garment_dim() const { return texture.dim() + shape.dim(); }
  std::size_t width() const { return static_cast<std::size_t>(regions()) * garment_dim(); }

  bool present(int i) const { return texture.present(i) || shape.present(i); }
  void set_present(int i, bool p);

  std::vector<double> flatten() const;
  static OutfitCode unflatten(std::span<const double> z, int regions, int d_t, int d_s, const std::vector<bool>& presence);

  /// z_i = [t_i; s_i].
  std::vector<double> garment(int i) const;
  void set_garment(int i, std::span<const double> zi);

  friend bool operator==(const OutfitCode&, const OutfitCode&) = default;
};

struct ValidationIssue {
  std::string kind;  // "label_out_of_range" | "dimension_mismatch" | "schema"
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  bool ok() const { return issues.empty(); }
};

/// Report-style check; never throws. Pass expected_height/width < 0 to skip the
/// dimension comparison.
ValidationReport validate_region_map(const RegionMap& m, const LabelSchema& schema, int expected_height = -1,
                                     int expected_width = -1);

/// Mean of v over the pixels of each label, accumulated in double. Labels with
/// no pixels get the zero vector and presence=false.
TextureCode region_pool(const FeatureMap& v, const RegionMap& m, int n);

/// u(p) = t_{m(p)}. Labels absent from t broadcast the zero vector.
FeatureMap region_broadcast(const TextureCode& t, const RegionMap& m);

BinaryMask binarize_region(const RegionMap& m, int label, int n);

}  // namespace outfit
