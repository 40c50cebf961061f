// SPDX-License-Identifier: Apache-2.0
#include "cudkit/colorlab.hpp"

#include <algorithm>
#include <cmath>

namespace cudkit::colorlab {

namespace {

constexpr double kSrgbToXyz[9] = {
    0.4124564, 0.3575761, 0.1804375,
    0.2126729, 0.7151522, 0.0721750,
    0.0193339, 0.1191920, 0.9503041,
};
constexpr double kXyzToSrgb[9] = {
    3.2404542,  -1.5371385, -0.4985314,
    -0.9692660, 1.8760108,  0.0415560,
    0.0556434,  -0.2040259, 1.0572252,
};
// D65 reference white.
constexpr double kWhiteX = 0.95047, kWhiteY = 1.0, kWhiteZ = 1.08883;
constexpr double kLabEps = 216.0 / 24389.0;
constexpr double kLabKappa = 24389.0 / 27.0;

// Vienot 1999 RGB->LMS (Smith-Pokorny scaling).
constexpr double kRgbToLms[9] = {
    17.8824,   43.5161,  4.11935,
    3.45565,   27.1554,  3.86714,
    0.0299566, 0.184309, 1.46709,
};

double clamp01s(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

std::array<double, 3> mat3_mul_vec(const double* m, const std::array<double, 3>& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
          m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

std::array<double, 9> mat3_mul(const std::array<double, 9>& a, const std::array<double, 9>& b) {
  std::array<double, 9> c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

std::array<double, 9> mat3_inverse(const double* m) {
  double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
  std::array<double, 9> inv = {
      (m[4] * m[8] - m[5] * m[7]), -(m[1] * m[8] - m[2] * m[7]), (m[1] * m[5] - m[2] * m[4]),
      -(m[3] * m[8] - m[5] * m[6]), (m[0] * m[8] - m[2] * m[6]), -(m[0] * m[5] - m[2] * m[3]),
      (m[3] * m[7] - m[4] * m[6]), -(m[0] * m[7] - m[1] * m[6]), (m[0] * m[4] - m[1] * m[3])};
  for (double& v : inv) v /= det;
  return inv;
}

std::array<double, 9> build_cvd_matrix(CvdKind kind) {
  const double* s = kRgbToLms;
  std::array<double, 3> white = mat3_mul_vec(s, {1.0, 1.0, 1.0});
  std::array<double, 3> blue = mat3_mul_vec(s, {0.0, 0.0, 1.0});
  // Normal of the projection plane spanned by the achromatic axis and blue.
  std::array<double, 3> n = {white[1] * blue[2] - white[2] * blue[1],
                             white[2] * blue[0] - white[0] * blue[2],
                             white[0] * blue[1] - white[1] * blue[0]};
  std::array<double, 9> proj{};
  if (kind == CvdKind::Protanopia) {
    proj = {0.0, -n[1] / n[0], -n[2] / n[0],
            0.0, 1.0, 0.0,
            0.0, 0.0, 1.0};
  } else {
    proj = {1.0, 0.0, 0.0,
            -n[0] / n[1], 0.0, -n[2] / n[1],
            0.0, 0.0, 1.0};
  }
  std::array<double, 9> s_arr;
  std::copy(s, s + 9, s_arr.begin());
  return mat3_mul(mat3_inverse(s), mat3_mul(proj, s_arr));
}

}  // namespace

double srgb_decompand(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double srgb_compand(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

double lab_f(double t) {
  return t > kLabEps ? std::cbrt(t) : (kLabKappa * t + 16.0) / 116.0;
}

double lab_f_inv(double ft) {
  double t3 = ft * ft * ft;
  return t3 > kLabEps ? t3 : (116.0 * ft - 16.0) / kLabKappa;
}

Hsv rgb_to_hsv_pixel(double r, double g, double b) {
  double maxc = std::max({r, g, b});
  double minc = std::min({r, g, b});
  double delta = maxc - minc;
  Hsv out{0.0, 0.0, maxc};
  if (delta <= 0.0 || maxc <= 0.0) return out;  // hue defined as 0 at zero saturation
  out.s = delta / maxc;
  double h;
  if (maxc == r)
    h = (g - b) / delta;
  else if (maxc == g)
    h = 2.0 + (b - r) / delta;
  else
    h = 4.0 + (r - g) / delta;
  h /= 6.0;
  if (h < 0.0) h += 1.0;
  if (h >= 1.0) h -= 1.0;
  out.h = h;
  return out;
}

Rgb hsv_to_rgb_pixel(double h, double s, double v) {
  if (s <= 0.0) return {v, v, v};
  double hh = h - std::floor(h);  // wrap into [0,1)
  double x = hh * 6.0;
  int sector = std::min(5, static_cast<int>(x));
  double f = x - sector;
  double p = v * (1.0 - s);
  double q = v * (1.0 - s * f);
  double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

Lab rgb_to_lab_pixel(double r, double g, double b) {
  double rl = srgb_decompand(r), gl = srgb_decompand(g), bl = srgb_decompand(b);
  double x = kSrgbToXyz[0] * rl + kSrgbToXyz[1] * gl + kSrgbToXyz[2] * bl;
  double y = kSrgbToXyz[3] * rl + kSrgbToXyz[4] * gl + kSrgbToXyz[5] * bl;
  double z = kSrgbToXyz[6] * rl + kSrgbToXyz[7] * gl + kSrgbToXyz[8] * bl;
  double fx = lab_f(x / kWhiteX), fy = lab_f(y / kWhiteY), fz = lab_f(z / kWhiteZ);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

Rgb lab_to_rgb_pixel(double l, double a, double b) {
  double fy = (l + 16.0) / 116.0;
  double fx = fy + a / 500.0;
  double fz = fy - b / 200.0;
  double x = kWhiteX * lab_f_inv(fx);
  double y = kWhiteY * lab_f_inv(fy);
  double z = kWhiteZ * lab_f_inv(fz);
  double rl = kXyzToSrgb[0] * x + kXyzToSrgb[1] * y + kXyzToSrgb[2] * z;
  double gl = kXyzToSrgb[3] * x + kXyzToSrgb[4] * y + kXyzToSrgb[5] * z;
  double bl = kXyzToSrgb[6] * x + kXyzToSrgb[7] * y + kXyzToSrgb[8] * z;
  // Out-of-gamut results clamp to [0,1] per channel.
  return {clamp01s(srgb_compand(std::max(rl, 0.0))),
          clamp01s(srgb_compand(std::max(gl, 0.0))),
          clamp01s(srgb_compand(std::max(bl, 0.0)))};
}

double lab_lightness_pixel(double r, double g, double b) {
  double y = kSrgbToXyz[3] * srgb_decompand(r) + kSrgbToXyz[4] * srgb_decompand(g) +
             kSrgbToXyz[5] * srgb_decompand(b);
  return 116.0 * lab_f(y / kWhiteY) - 16.0;
}

const std::array<double, 9>& cvd_matrix(CvdKind kind) {
  static const std::array<double, 9> protan = build_cvd_matrix(CvdKind::Protanopia);
  static const std::array<double, 9> deutan = build_cvd_matrix(CvdKind::Deuteranopia);
  return kind == CvdKind::Protanopia ? protan : deutan;
}

Rgb simulate_cvd_pixel(double r, double g, double b, CvdKind kind) {
  const auto& m = cvd_matrix(kind);
  double rl = srgb_decompand(r), gl = srgb_decompand(g), bl = srgb_decompand(b);
  double ro = m[0] * rl + m[1] * gl + m[2] * bl;
  double go = m[3] * rl + m[4] * gl + m[5] * bl;
  double bo = m[6] * rl + m[7] * gl + m[8] * bl;
  return {clamp01s(srgb_compand(clamp01s(ro))),
          clamp01s(srgb_compand(clamp01s(go))),
          clamp01s(srgb_compand(clamp01s(bo)))};
}

HsvImage rgb_to_hsv(const RgbImage& img) {
  HsvImage out(img.height, img.width);
  for (size_t p = 0; p < img.pixels(); ++p) {
    Hsv h = rgb_to_hsv_pixel(img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2]);
    out.data[p * 3] = h.h;
    out.data[p * 3 + 1] = h.s;
    out.data[p * 3 + 2] = h.v;
  }
  return out;
}

RgbImage hsv_to_rgb(const HsvImage& img) {
  RgbImage out(img.height, img.width);
  for (size_t p = 0; p < img.pixels(); ++p) {
    Rgb c = hsv_to_rgb_pixel(img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2]);
    out.data[p * 3] = c.r;
    out.data[p * 3 + 1] = c.g;
    out.data[p * 3 + 2] = c.b;
  }
  return out;
}

LabImage rgb_to_lab(const RgbImage& img) {
  LabImage out(img.height, img.width);
  for (size_t p = 0; p < img.pixels(); ++p) {
    Lab l = rgb_to_lab_pixel(img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2]);
    out.data[p * 3] = l.l;
    out.data[p * 3 + 1] = l.a;
    out.data[p * 3 + 2] = l.b;
  }
  return out;
}

RgbImage lab_to_rgb(const LabImage& img) {
  RgbImage out(img.height, img.width);
  for (size_t p = 0; p < img.pixels(); ++p) {
    Rgb c = lab_to_rgb_pixel(img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2]);
    out.data[p * 3] = c.r;
    out.data[p * 3 + 1] = c.g;
    out.data[p * 3 + 2] = c.b;
  }
  return out;
}

RgbImage simulate_cvd(const RgbImage& img, CvdKind kind) {
  RgbImage out(img.height, img.width);
  for (size_t p = 0; p < img.pixels(); ++p) {
    Rgb c = simulate_cvd_pixel(img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2], kind);
    out.data[p * 3] = c.r;
    out.data[p * 3 + 1] = c.g;
    out.data[p * 3 + 2] = c.b;
  }
  return out;
}

RgbImage invert(const RgbImage& img) {
  RgbImage out(img.height, img.width);
  for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = 1.0 - img.data[i];
  return out;
}

RgbImage clamp01(const RgbImage& img) {
  RgbImage out(img.height, img.width);
  for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = clamp01s(img.data[i]);
  return out;
}

GrayImage lightness(const RgbImage& img) {
  GrayImage out(img.height, img.width);
  for (size_t p = 0; p < img.pixels(); ++p)
    out.data[p] = lab_lightness_pixel(img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2]);
  return out;
}

}  // namespace cudkit::colorlab
