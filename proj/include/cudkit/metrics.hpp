// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "cudkit/image.hpp"

namespace cudkit::metrics {

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), C1=(0.01R)^2,
/// C2=(0.03R)^2 with R=1, mean over valid windows. Inputs must be at least
/// 11x11 and of equal size.
double ssim(const GrayImage& a, const GrayImage& b);

/// Multi-scale SSIM, standard weights {0.0448, 0.2856, 0.3001, 0.2363,
/// 0.1333} and dyadic downsampling. Images too small for 5 scales use as
/// many scales as keep one 11x11 window at the coarsest level, with the
/// weights renormalized.
double ms_ssim(const GrayImage& a, const GrayImage& b);

enum class SsimChannel { LabL, RgbMean };

/// SSIM between color images: on the CIELab L channel scaled to [0,1] by
/// default, or the mean of per-channel RGB SSIM values.
double ssim_image(const RgbImage& a, const RgbImage& b, SsimChannel mode = SsimChannel::LabL);

/// PSNR in dB over all RGB channels on the [0,1] range; identical images
/// return the 100 dB cap.
double psnr(const RgbImage& a, const RgbImage& b);
constexpr double kPsnrCap = 100.0;

/// Per-sample metric values against input and target references.
struct EvalRow {
  double ssim_pred_in = 0;
  double ssim_pred_tgt = 0;
  double ssim_in_tgt = 0;
  double psnr_pred_in = 0;
  double psnr_pred_tgt = 0;
  double psnr_in_tgt = 0;
};

EvalRow evaluate_sample(const RgbImage& pred, const RgbImage& input, const RgbImage& target,
                        SsimChannel mode = SsimChannel::LabL);

/// Mean absolute deviation between metric(pred,target) and metric(input,target).
double ssim_mae(std::span<const EvalRow> rows);
double psnr_mae(std::span<const EvalRow> rows);

/// Absolute difference of mean CIELab L between two disjoint pixel-index
/// regions of the CVD-simulated image. The suitability criterion is >= 15.
double cud_gap(const RgbImage& img, std::span<const int> region_a, std::span<const int> region_b,
               CvdKind kind);

/// CSV report: one row per sample plus a summary row with the mean columns
/// and the two MAE aggregates.
void write_eval_csv(const std::string& path, const std::vector<std::string>& ids,
                    std::span<const EvalRow> rows);

}  // namespace cudkit::metrics
