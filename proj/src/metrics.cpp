// SPDX-License-Identifier: Apache-2.0
#include "cudkit/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "cudkit/colorlab.hpp"

namespace cudkit::metrics {

namespace {

constexpr int kWindow = 11;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr std::array<double, 5> kWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

std::vector<double> gaussian_window(int k, double sigma) {
  std::vector<double> w(static_cast<size_t>(k) * k);
  double c = (k - 1) / 2.0, sum = 0.0;
  for (int y = 0; y < k; ++y)
    for (int x = 0; x < k; ++x) {
      double v = std::exp(-((y - c) * (y - c) + (x - c) * (x - c)) / (2.0 * sigma * sigma));
      w[static_cast<size_t>(y) * k + x] = v;
      sum += v;
    }
  for (auto& v : w) v /= sum;
  return w;
}

void check_pair(const char* op, const GrayImage& a, const GrayImage& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument(std::string(op) + ": dimension mismatch");
  if (a.height < kWindow || a.width < kWindow)
    throw std::invalid_argument(std::string(op) + ": image " + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " smaller than the " +
                                std::to_string(kWindow) + "x" + std::to_string(kWindow) +
                                " window");
}

struct SsimSums {
  double mean_cs = 0;   // contrast-structure term
  double mean_ssim = 0; // full ssim map mean
};

SsimSums ssim_scan(const GrayImage& a, const GrayImage& b, const std::vector<double>& win) {
  const int h = a.height, w = a.width;
  const int oh = h - kWindow + 1, ow = w - kWindow + 1;
  double acc_cs = 0, acc_ssim = 0;
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
      for (int ky = 0; ky < kWindow; ++ky)
        for (int kx = 0; kx < kWindow; ++kx) {
          double wv = win[static_cast<size_t>(ky) * kWindow + kx];
          double av = a.at(y + ky, x + kx);
          double bv = b.at(y + ky, x + kx);
          mu_a += wv * av;
          mu_b += wv * bv;
          aa += wv * av * av;
          bb += wv * bv * bv;
          ab += wv * av * bv;
        }
      double var_a = aa - mu_a * mu_a;
      double var_b = bb - mu_b * mu_b;
      double cov = ab - mu_a * mu_b;
      double cs = (2 * cov + kC2) / (var_a + var_b + kC2);
      double l = (2 * mu_a * mu_b + kC1) / (mu_a * mu_a + mu_b * mu_b + kC1);
      acc_cs += cs;
      acc_ssim += l * cs;
    }
  }
  double n = static_cast<double>(oh) * ow;
  return {acc_cs / n, acc_ssim / n};
}

GrayImage downsample2(const GrayImage& img) {
  int oh = (img.height + 1) / 2, ow = (img.width + 1) / 2;
  GrayImage out(oh, ow);
  for (int oy = 0; oy < oh; ++oy) {
    int y0 = 2 * oy, y1 = std::min(img.height, y0 + 2);
    for (int ox = 0; ox < ow; ++ox) {
      int x0 = 2 * ox, x1 = std::min(img.width, x0 + 2);
      double acc = 0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) acc += img.at(y, x);
      out.at(oy, ox) = acc / ((y1 - y0) * (x1 - x0));
    }
  }
  return out;
}

GrayImage lab_l_01(const RgbImage& img) {
  GrayImage g = colorlab::lightness(img);
  for (auto& v : g.data) v /= 100.0;
  return g;
}

GrayImage channel_plane(const RgbImage& img, int c) {
  GrayImage g(img.height, img.width);
  for (size_t p = 0; p < img.pixels(); ++p) g.data[p] = img.data[p * 3 + c];
  return g;
}

}  // namespace

double ssim(const GrayImage& a, const GrayImage& b) {
  check_pair("ssim", a, b);
  static const std::vector<double> win = gaussian_window(kWindow, 1.5);
  return ssim_scan(a, b, win).mean_ssim;
}

double ms_ssim(const GrayImage& a, const GrayImage& b) {
  check_pair("ms_ssim", a, b);
  static const std::vector<double> win = gaussian_window(kWindow, 1.5);
  int scales = 0;
  {
    int h = a.height, w = a.width;
    while (scales < 5 && std::min(h, w) >= kWindow) {
      ++scales;
      h = (h + 1) / 2;
      w = (w + 1) / 2;
    }
  }
  double wsum = 0;
  for (int j = 0; j < scales; ++j) wsum += kWeights[j];

  GrayImage xa = a, xb = b;
  double result = 1.0;
  for (int j = 0; j < scales; ++j) {
    SsimSums s = ssim_scan(xa, xb, win);
    double term = (j + 1 < scales) ? s.mean_cs : s.mean_ssim;
    term = std::max(term, 0.0);
    result *= std::pow(term, kWeights[j] / wsum);
    if (j + 1 < scales) {
      xa = downsample2(xa);
      xb = downsample2(xb);
    }
  }
  return result;
}

double ssim_image(const RgbImage& a, const RgbImage& b, SsimChannel mode) {
  if (mode == SsimChannel::LabL) return ssim(lab_l_01(a), lab_l_01(b));
  double acc = 0;
  for (int c = 0; c < 3; ++c) acc += ssim(channel_plane(a, c), channel_plane(b, c));
  return acc / 3.0;
}

double psnr(const RgbImage& a, const RgbImage& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: dimension mismatch");
  double mse = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

EvalRow evaluate_sample(const RgbImage& pred, const RgbImage& input, const RgbImage& target,
                        SsimChannel mode) {
  EvalRow r;
  r.ssim_pred_in = ssim_image(pred, input, mode);
  r.ssim_pred_tgt = ssim_image(pred, target, mode);
  r.ssim_in_tgt = ssim_image(input, target, mode);
  r.psnr_pred_in = psnr(pred, input);
  r.psnr_pred_tgt = psnr(pred, target);
  r.psnr_in_tgt = psnr(input, target);
  return r;
}

double ssim_mae(std::span<const EvalRow> rows) {
  if (rows.empty()) throw std::invalid_argument("ssim_mae: empty sample list");
  double acc = 0;
  for (const auto& r : rows) acc += std::abs(r.ssim_pred_tgt - r.ssim_in_tgt);
  return acc / static_cast<double>(rows.size());
}

double psnr_mae(std::span<const EvalRow> rows) {
  if (rows.empty()) throw std::invalid_argument("psnr_mae: empty sample list");
  double acc = 0;
  for (const auto& r : rows) acc += std::abs(r.psnr_pred_tgt - r.psnr_in_tgt);
  return acc / static_cast<double>(rows.size());
}

double cud_gap(const RgbImage& img, std::span<const int> region_a, std::span<const int> region_b,
               CvdKind kind) {
  if (region_a.empty() || region_b.empty())
    throw std::invalid_argument("cud_gap: empty region");
  RgbImage sim = colorlab::simulate_cvd(img, kind);
  auto region_mean = [&sim](std::span<const int> region) {
    double acc = 0;
    for (int p : region) {
      if (p < 0 || static_cast<size_t>(p) >= sim.pixels())
        throw std::invalid_argument("cud_gap: pixel index out of range");
      acc += colorlab::lab_lightness_pixel(sim.data[static_cast<size_t>(p) * 3],
                                           sim.data[static_cast<size_t>(p) * 3 + 1],
                                           sim.data[static_cast<size_t>(p) * 3 + 2]);
    }
    return acc / static_cast<double>(region.size());
  };
  return std::abs(region_mean(region_a) - region_mean(region_b));
}

void write_eval_csv(const std::string& path, const std::vector<std::string>& ids,
                    std::span<const EvalRow> rows) {
  if (ids.size() != rows.size())
    throw std::invalid_argument("write_eval_csv: ids and rows length mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open CSV for writing: " + path);
  out << "id,ssim_pred_in,ssim_pred_tgt,ssim_in_tgt,psnr_pred_in,psnr_pred_tgt,psnr_in_tgt\n";
  out.precision(10);
  EvalRow mean;
  for (size_t i = 0; i < rows.size(); ++i) {
    const EvalRow& r = rows[i];
    out << ids[i] << ',' << r.ssim_pred_in << ',' << r.ssim_pred_tgt << ',' << r.ssim_in_tgt
        << ',' << r.psnr_pred_in << ',' << r.psnr_pred_tgt << ',' << r.psnr_in_tgt << '\n';
    mean.ssim_pred_in += r.ssim_pred_in;
    mean.ssim_pred_tgt += r.ssim_pred_tgt;
    mean.ssim_in_tgt += r.ssim_in_tgt;
    mean.psnr_pred_in += r.psnr_pred_in;
    mean.psnr_pred_tgt += r.psnr_pred_tgt;
    mean.psnr_in_tgt += r.psnr_in_tgt;
  }
  double n = static_cast<double>(rows.size());
  out << "mean," << mean.ssim_pred_in / n << ',' << mean.ssim_pred_tgt / n << ','
      << mean.ssim_in_tgt / n << ',' << mean.psnr_pred_in / n << ',' << mean.psnr_pred_tgt / n
      << ',' << mean.psnr_in_tgt / n << '\n';
  out << "ssim_mae," << ssim_mae(rows) << ",,,psnr_mae," << psnr_mae(rows) << ",\n";
  if (!out) throw std::runtime_error("failed writing CSV: " + path);
}

}  // namespace cudkit::metrics
