#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "outfit/region.hpp"

namespace outfit {

/// 8-bit RGB image, row-major, interleaved channels.
class Image {
 public:
  Image() = default;
  Image(int height, int width);
  Image(int height, int width, std::vector<std::uint8_t> rgb);

  int height() const { return height_; }
  int width() const { return width_; }

  std::array<std::uint8_t, 3> at(int y, int x) const;
  void set(int y, int x, std::array<std::uint8_t, 3> rgb);

  std::span<const std::uint8_t> bytes() const { return rgb_; }
  std::span<std::uint8_t> bytes() { return rgb_; }

  /// Channel value scaled to [0,1].
  float value(int y, int x, int c) const { return rgb_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c] / 255.0f; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> rgb_;
};

std::uint8_t quantize_unit(double v);

struct Hsv {
  double h = 0.0;  // degrees [0,360)
  double s = 0.0;
  double v = 0.0;
};

Hsv rgb_to_hsv(double r, double g, double b);
std::array<double, 3> hsv_to_rgb(const Hsv& hsv);

/// Circular distance between two hues in degrees, in [0,180].
double hue_distance(double a, double b);

/// Circular mean of hues (degrees) weighted equally.
double circular_mean_hue(std::span<const double> hues);

double mean_absolute_error(const Image& a, const Image& b);

// PNG codecs. Region maps are single-channel 8-bit with pixel value = label id.
std::vector<std::uint8_t> encode_png(const Image& image);
std::vector<std::uint8_t> encode_png(const RegionMap& map);
Image decode_png_rgb(std::span<const std::uint8_t> png);
RegionMap decode_png_map(std::span<const std::uint8_t> png);

void write_png(const std::filesystem::path& path, const Image& image);
void write_png(const std::filesystem::path& path, const RegionMap& map);
Image read_png_rgb(const std::filesystem::path& path);
RegionMap read_png_map(const std::filesystem::path& path);

}  // namespace outfit
