#include "outfit/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "outfit/util.hpp"

namespace outfit {

Image::Image(int height, int width)
    : height_(height), width_(width), rgb_(static_cast<std::size_t>(height) * width * 3, 0) {}

Image::Image(int height, int width, std::vector<std::uint8_t> rgb) : height_(height), width_(width), rgb_(std::move(rgb)) {
  if (rgb_.size() != static_cast<std::size_t>(height) * width * 3) {
    throw std::invalid_argument("image byte count does not match H*W*3");
  }
}

std::array<std::uint8_t, 3> Image::at(int y, int x) const {
  const std::size_t o = (static_cast<std::size_t>(y) * width_ + x) * 3;
  return {rgb_[o], rgb_[o + 1], rgb_[o + 2]};
}

void Image::set(int y, int x, std::array<std::uint8_t, 3> rgb) {
  const std::size_t o = (static_cast<std::size_t>(y) * width_ + x) * 3;
  rgb_[o] = rgb[0];
  rgb_[o + 1] = rgb[1];
  rgb_[o + 2] = rgb[2];
}

std::uint8_t quantize_unit(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Hsv rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  Hsv out;
  out.v = mx;
  out.s = mx > 0.0 ? delta / mx : 0.0;
  if (delta <= 0.0) return out;
  double h;
  if (mx == r) {
    h = std::fmod((g - b) / delta, 6.0);
  } else if (mx == g) {
    h = (b - r) / delta + 2.0;
  } else {
    h = (r - g) / delta + 4.0;
  }
  h *= 60.0;
  if (h < 0.0) h += 360.0;
  out.h = h;
  return out;
}

std::array<double, 3> hsv_to_rgb(const Hsv& hsv) {
  const double h = std::fmod(std::fmod(hsv.h, 360.0) + 360.0, 360.0) / 60.0;
  const double c = hsv.v * hsv.s;
  const double x = c * (1.0 - std::fabs(std::fmod(h, 2.0) - 1.0));
  const double m = hsv.v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  return {r + m, g + m, b + m};
}

double hue_distance(double a, double b) {
  double d = std::fmod(std::fabs(a - b), 360.0);
  return d > 180.0 ? 360.0 - d : d;
}

double circular_mean_hue(std::span<const double> hues) {
  double sx = 0.0, sy = 0.0;
  for (double h : hues) {
    const double rad = h * std::numbers::pi / 180.0;
    sx += std::cos(rad);
    sy += std::sin(rad);
  }
  double deg = std::atan2(sy, sx) * 180.0 / std::numbers::pi;
  return deg < 0.0 ? deg + 360.0 : deg;
}

double mean_absolute_error(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width()) throw std::invalid_argument("MAE: image sizes differ");
  auto x = a.bytes();
  auto y = b.bytes();
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sum += std::abs(static_cast<int>(x[i]) - static_cast<int>(y[i]));
  return x.empty() ? 0.0 : sum / (255.0 * static_cast<double>(x.size()));
}

namespace {

std::vector<std::uint8_t> write_png_memory(int width, int height, std::uint32_t format, const void* pixels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels, 0, nullptr)) {
    throw std::runtime_error(std::string("png encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels, 0, nullptr)) {
    throw std::runtime_error(std::string("png encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

struct DecodedPng {
  int width = 0;
  int height = 0;
  std::uint32_t original_format = 0;
  std::vector<std::uint8_t> pixels;
};

DecodedPng read_png_memory(std::span<const std::uint8_t> png, std::uint32_t format) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, png.data(), png.size())) {
    throw std::runtime_error(std::string("png decode failed: ") + image.message);
  }
  DecodedPng out;
  out.original_format = image.format;
  image.format = format;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::runtime_error(std::string("png decode failed: ") + image.message);
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image) {
  return write_png_memory(image.width(), image.height(), PNG_FORMAT_RGB, image.bytes().data());
}

std::vector<std::uint8_t> encode_png(const RegionMap& map) {
  return write_png_memory(map.width(), map.height(), PNG_FORMAT_GRAY, map.labels().data());
}

Image decode_png_rgb(std::span<const std::uint8_t> png) {
  auto d = read_png_memory(png, PNG_FORMAT_RGB);
  return Image(d.height, d.width, std::move(d.pixels));
}

RegionMap decode_png_map(std::span<const std::uint8_t> png) {
  auto d = read_png_memory(png, PNG_FORMAT_GRAY);
  // Colour maps would be converted through a luminance transform, which
  // silently rewrites label ids.
  if (d.original_format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_COLORMAP)) {
    throw std::invalid_argument("region map must be a single-channel PNG");
  }
  return RegionMap(d.height, d.width, std::move(d.pixels));
}

void write_png(const std::filesystem::path& path, const Image& image) { write_file_atomic(path, encode_png(image)); }

void write_png(const std::filesystem::path& path, const RegionMap& map) { write_file_atomic(path, encode_png(map)); }

Image read_png_rgb(const std::filesystem::path& path) { return decode_png_rgb(read_file(path)); }

RegionMap read_png_map(const std::filesystem::path& path) { return decode_png_map(read_file(path)); }

}  // namespace outfit
