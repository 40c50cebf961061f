// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cudkit {

enum class CvdKind { Protanopia, Deuteranopia };

inline const char* to_string(CvdKind k) {
  return k == CvdKind::Protanopia ? "protan" : "deutan";
}

inline CvdKind cvd_kind_from_string(const std::string& s) {
  if (s == "protan" || s == "protanopia") return CvdKind::Protanopia;
  if (s == "deutan" || s == "deuteranopia") return CvdKind::Deuteranopia;
  throw std::invalid_argument("unknown CVD kind: '" + s + "' (expected deutan|protan)");
}

namespace detail {

// Planar-agnostic interleaved pixel buffer shared by the tagged image types.
// Layout: data[(y*width + x)*3 + c], row-major.
template <int Channels>
struct PixelBuffer {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  PixelBuffer() = default;
  PixelBuffer(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * Channels, 0.0) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("image dimensions must be positive");
  }
  PixelBuffer(int h, int w, std::vector<double> d) : height(h), width(w), data(std::move(d)) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("image dimensions must be positive");
    if (data.size() != static_cast<size_t>(h) * w * Channels)
      throw std::invalid_argument("pixel data length does not match height*width*" + std::to_string(Channels));
  }

  size_t pixels() const { return static_cast<size_t>(height) * width; }
  size_t size() const { return data.size(); }

  double& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * Channels + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * Channels + c]; }

  bool same_shape(const PixelBuffer& o) const { return height == o.height && width == o.width; }
};

}  // namespace detail

/// Companded sRGB image, each channel in [0,1].
struct RgbImage : detail::PixelBuffer<3> {
  using PixelBuffer::PixelBuffer;
};

/// HSV image; h in [0,1) (fraction of the full hue circle), s and v in [0,1].
struct HsvImage : detail::PixelBuffer<3> {
  using PixelBuffer::PixelBuffer;
};

/// CIELab image; L in [0,100], a/b unbounded (practically within +-128).
struct LabImage : detail::PixelBuffer<3> {
  using PixelBuffer::PixelBuffer;
};

/// Single-channel image (used for L-channel metrics).
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  GrayImage() = default;
  GrayImage(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0.0) {}
  GrayImage(int h, int w, std::vector<double> d) : height(h), width(w), data(std::move(d)) {
    if (data.size() != static_cast<size_t>(h) * w)
      throw std::invalid_argument("gray data length does not match height*width");
  }
  double& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
  double at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
  size_t pixels() const { return data.size(); }
};

/// Quantize one channel value to the 8-bit grid (round half up), staying in [0,1].
inline double quantize8(double v) {
  double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return std::floor(c * 255.0 + 0.5) / 255.0;
}

inline RgbImage quantize8(const RgbImage& img) {
  RgbImage out(img.height, img.width);
  for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = quantize8(img.data[i]);
  return out;
}

}  // namespace cudkit
