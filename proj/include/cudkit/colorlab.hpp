// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>

#include "cudkit/image.hpp"

namespace cudkit::colorlab {

// ---------------------------------------------------------------------------
// Pixel-level kernels. All arithmetic is 64-bit; image functions below map
// these over every pixel. Exposed so the differentiable ops and the tests can
// share one definition of each conversion.
// ---------------------------------------------------------------------------

struct Rgb { double r, g, b; };
struct Hsv { double h, s, v; };
struct Lab { double l, a, b; };

/// sRGB companding curve and its inverse (IEC 61966-2-1).
double srgb_decompand(double c);
double srgb_compand(double c);

/// CIELab forward function f(t) and its inverse (D65, standard epsilon/kappa).
double lab_f(double t);
double lab_f_inv(double t);

Hsv rgb_to_hsv_pixel(double r, double g, double b);
Rgb hsv_to_rgb_pixel(double h, double s, double v);
Lab rgb_to_lab_pixel(double r, double g, double b);
Rgb lab_to_rgb_pixel(double l, double a, double b);

/// CIELab L of a companded sRGB pixel (the only Lab channel the losses need).
double lab_lightness_pixel(double r, double g, double b);

/// Linear-RGB dichromat projection matrix, row-major 3x3.
///
/// Derived from the Vienot/Brettel/Mollon construction: companded sRGB is
/// linearized, mapped to LMS (Smith-Pokorny scaling), and the missing cone
/// response is replaced by the projection onto the plane through the origin
/// that contains both the achromatic axis and the blue primary. The resulting
/// RGB-space matrices reproduce the published coefficients
/// (protan L' = 2.02344*M - 2.52581*S, deutan M' = 0.494207*L + 1.24827*S)
/// and are exactly idempotent and achromatic-preserving by construction.
const std::array<double, 9>& cvd_matrix(CvdKind kind);

Rgb simulate_cvd_pixel(double r, double g, double b, CvdKind kind);

// ---------------------------------------------------------------------------
// Image operations.
// ---------------------------------------------------------------------------

HsvImage rgb_to_hsv(const RgbImage& img);
RgbImage hsv_to_rgb(const HsvImage& img);
LabImage rgb_to_lab(const RgbImage& img);
RgbImage lab_to_rgb(const LabImage& img);

/// Dichromat simulation: linear-RGB projection, re-companded, clamped to [0,1].
RgbImage simulate_cvd(const RgbImage& img, CvdKind kind);

/// Per-channel 1 - x.
RgbImage invert(const RgbImage& img);

/// Clip every channel to [0,1]: negatives to 0, values above 1 to 1.
RgbImage clamp01(const RgbImage& img);

/// L channel of the CIELab conversion as a single-channel image.
GrayImage lightness(const RgbImage& img);

}  // namespace cudkit::colorlab
